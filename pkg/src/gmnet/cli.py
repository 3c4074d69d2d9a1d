"""``gmnet`` command line: one subcommand per analysis, tables written under ``--out``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .errors import GmnetError, IngestionError, PipelineError, ValidationError
from .google_core import FORWARD, REVERSED
from .net_model import (load_registry, load_tensor, synth_generate, tiva_registry, validate, write_registry,
                        write_tensor)
from .pipeline import (RunBundle, RunConfig, derivative_tables, profile_table, run_full, sweep_tables,
                       transfer_tables)
from .sensitivity import (COUNTRY_LABOR, GPVM, SCALE_DESTINATION, SCALE_SOURCE, SECTOR_PRICE, VALUE,
                          Baseline, balance_derivative_matrix, rank_derivatives)
from .tables import masked_list, to_json
from .transfer import raw_m_transform, reduced_transfer, transfer_matrix

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_COMPUTE = 2
EXIT_USAGE = 64

KINDS = {"price": SECTOR_PRICE, "labor": COUNTRY_LABOR}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which collides with the computation-error status
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _shared(p: argparse.ArgumentParser, synth: bool = False):
    if synth:
        p.add_argument("--countries", type=int, required=True, help="number of countries")
        p.add_argument("--sectors", type=int, required=True, help="number of sectors")
        p.add_argument("--density", type=float, default=0.5)
        p.add_argument("--seed", type=int, default=None)
    else:
        p.add_argument("--countries", metavar="FILE", help="country registry (id,code,name); default: built-in 58")
        p.add_argument("--sectors", metavar="FILE", help="sector registry (id,code,name); default: built-in 37")
        p.add_argument("--tensor", metavar="FILE", required=True,
                       help="flow records: src_country,src_sector,dst_country,dst_sector,value")
        p.add_argument("--keep-intra", action="store_true", help="keep intra-country flows")
    p.add_argument("--alpha", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--threads", type=int)
    p.add_argument("--config", metavar="FILE", help="JSON run configuration; flags take precedence")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gmnet", description="Google-matrix analysis of multi-sector money-transfer networks")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("validate", help="check a tensor and report dangling nodes and bad entries")
    _shared(p)

    p = sub.add_parser("synth", help="write a random synthetic tensor and registries")
    _shared(p, synth=True)

    p = sub.add_parser("rank", help="value and GPVM rankings, rank planes, exponent fits")
    _shared(p)
    p.add_argument("--top", type=int, help="length of the top listing (default 20)")
    p.add_argument("--local-sector", action="append", default=None, metavar="SECTOR",
                   help="also write the country plane inside this sector (repeatable)")

    p = sub.add_parser("spectrum", help="full spectrum, IPR and eigenstates of G and G*")
    _shared(p)
    p.add_argument("--spectrum-alpha", type=float, help="damping used for the spectrum (default 1)")
    p.add_argument("--eigenstates", type=int)

    p = sub.add_parser("correlate", help="correlators and balances")
    _shared(p)

    p = sub.add_parser("shock", help="price or labor-cost derivatives")
    _shared(p)
    p.add_argument("--kind", choices=sorted(KINDS), required=True)
    p.add_argument("--target", help="sector or country code/id; omitted = sweep every target")
    p.add_argument("--basis", choices=[GPVM, VALUE, "both"], default="both")
    p.add_argument("--step", type=float)
    p.add_argument("--convention", choices=[SCALE_SOURCE, SCALE_DESTINATION])

    p = sub.add_parser("transfer", help="sector transfer matrix and profiles")
    _shared(p)
    p.add_argument("--country", action="append", default=None, help="source country for a reduced matrix (repeatable)")
    p.add_argument("--sector", help="source sector whose transfer profile is listed")

    p = sub.add_parser("run-all", help="every analysis in one bundle")
    _shared(p)
    return parser


# ---------------------------------------------------------------------------

def _config(args) -> RunConfig:
    base = RunConfig.load(args.config) if args.config else RunConfig()
    over = {"alpha": args.alpha, "eta": args.eta, "out_dir": args.out, "threads": args.threads}
    for flag, key in (("step", "step"), ("convention", "convention"), ("spectrum_alpha", "spectrum_alpha"),
                      ("eigenstates", "eigenstates"), ("top", "top_n"), ("seed", "seed")):
        if hasattr(args, flag):
            over[key] = getattr(args, flag)
    if getattr(args, "local_sector", None):
        over["local_sectors"] = tuple(args.local_sector)
    if getattr(args, "country", None):
        over["transfer_countries"] = tuple(args.country)
    return base.merged(**over)


def _registry(args):
    if args.countries is None and args.sectors is None:
        return tiva_registry()
    if args.countries is None or args.sectors is None:
        raise IngestionError("--countries and --sectors must be given together")
    return load_registry(args.countries, args.sectors)


def _tensor(args):
    return load_tensor(args.tensor, _registry(args), keep_intra=args.keep_intra)


def _emit(bundle_or_files, config: RunConfig, out=None):
    out = out or sys.stdout
    files = bundle_or_files.files if isinstance(bundle_or_files, RunBundle) else bundle_or_files
    if config.out_dir:
        if isinstance(bundle_or_files, RunBundle):
            bundle_or_files.write(config.out_dir)
        else:
            for name, text in files.items():
                path = os.path.join(config.out_dir, name)
                os.makedirs(os.path.dirname(path), exist_ok=True)
                with open(path, "wb") as f:
                    f.write(text if isinstance(text, bytes) else text.encode("utf-8"))
        print(f"wrote {len(files)} files to {config.out_dir}", file=out)
    else:
        print(f"{len(files)} tables produced (pass --out DIR to write them)", file=out)


def _echo_config(config: RunConfig, out=None):
    out = out or sys.stdout
    print("effective config: " + json.dumps(config.to_dict(), sort_keys=True), file=out)


# ---------------------------------------------------------------------------

def cmd_validate(args, config):
    report = validate(_tensor(args))
    print(report.summary())
    if config.out_dir:
        os.makedirs(config.out_dir, exist_ok=True)
        with open(os.path.join(config.out_dir, "validation.json"), "w", encoding="utf-8") as f:
            f.write(to_json({**dataclasses.asdict(report), "ok": report.ok}))
    return EXIT_OK if report.ok else EXIT_INVALID


def cmd_synth(args, config):
    tensor = synth_generate(args.countries, args.sectors, density=args.density, seed=config.seed)
    reg = tensor.registry
    print(f"synthetic tensor: {reg.n_countries} countries x {reg.n_sectors} sectors, seed {config.seed}, "
          f"total {tensor.total:.6g}")
    if config.out_dir:
        os.makedirs(config.out_dir, exist_ok=True)
        write_registry(reg, os.path.join(config.out_dir, "countries.csv"), os.path.join(config.out_dir, "sectors.csv"))
        write_tensor(tensor, os.path.join(config.out_dir, "tensor.csv"))
        print(f"wrote countries.csv, sectors.csv, tensor.csv to {config.out_dir}")
    return EXIT_OK


def cmd_rank(args, config):
    tensor = _tensor(args)
    bundle = run_full(config, tensor, write=False, stages=("planes", "fits"))
    gp, reg = bundle.results["gpvm"], tensor.registry
    print(f"N = {reg.n_nodes} nodes; GPVM iterations {gp.diagnostics['iterations']}")
    for name, rv in (("PageRank", gp.pagerank), ("CheiRank", gp.cheirank)):
        top = ", ".join(reg.node_label(int(i) + 1) for i in rv.order[:5])
        print(f"top {name}: {top}")
    for name, fit in bundle.results["fits"].items():
        if "beta" in fit:
            print(f"exponent {name}: {fit['beta']:.4f} +- {fit['stderr']:.4f}")
    _emit(bundle, config)
    return EXIT_OK


def cmd_spectrum(args, config):
    tensor = _tensor(args)
    config = config.merged(spectrum=True)
    bundle = run_full(config, tensor, write=False, stages=("spectrum",))
    for name in ("G", "G_star"):
        spec = bundle.results[f"spectrum_{name}"]
        print(f"{name} (alpha={spec.alpha}): |lambda_2| = {abs(spec.eigenvalues[1]):.6f}, gap = {spec.gap():.6f}")
    _emit(bundle, config)
    return EXIT_OK


def cmd_correlate(args, config):
    tensor = _tensor(args)
    bundle = run_full(config, tensor, write=False, stages=("correlators", "balances"))
    for basis in (GPVM, VALUE):
        rep = bundle.results[f"correlators_{basis}"]
        print(f"{basis}: kappa = {rep.kappa:.6f}, kappa(c) = {rep.kappa_c_reduced:.6f}, "
              f"kappa(s) = {rep.kappa_s_reduced:.6f}")
    _emit(bundle, config)
    return EXIT_OK


def cmd_shock(args, config):
    tensor = _tensor(args)
    reg = tensor.registry
    kind = KINDS[args.kind]
    bases = (GPVM, VALUE) if args.basis == "both" else (args.basis,)
    files = {"config.json": to_json(config.bundle_dict())}
    status = EXIT_OK
    with threadpool_limits(limits=config.threads):
        base = run_full(config, tensor, write=False, stages=())
        gp, imp, exp = base.results["gpvm"], base.results["importrank"], base.results["exportrank"]
        baselines = {GPVM: Baseline(GPVM, gp.pagerank.p, gp.cheirank.p, (gp.v_second, gp.vstar_second)),
                     VALUE: Baseline(VALUE, imp.p, exp.p)}
        common = dict(convention=config.convention, alpha=config.alpha, tol=config.tol, max_iter=config.max_iter,
                      hold_personalization=config.hold_personalization)
        for basis in bases:
            if args.target is not None:
                table = rank_derivatives(tensor, kind, args.target, basis=basis, step=config.step,
                                         baseline=baselines[basis], **common)
                files.update(derivative_tables(reg, table))
                dbc = masked_list(table.dB_c)
                own = table.shock.target - 1 if kind == COUNTRY_LABOR else None
                msg = f"{basis}: step {table.step:g}, max step disagreement {table.max_disagreement:.3g}"
                if own is not None and dbc[own] is not None:
                    msg += f", own-country dB/dsigma = {dbc[own]:.4f}"
                print(msg)
            else:
                sweep = balance_derivative_matrix(tensor, kind, basis, step=config.step,
                                                  baseline=baselines[basis], **common)
                files.update(sweep_tables(reg, sweep))
                print(f"{basis}: swept {len(sweep.targets)} targets, {len(sweep.failures)} failed")
                for code, why in sweep.failures.items():
                    print(f"  {code}: {why}")
                if sweep.failures:
                    status = EXIT_COMPUTE
    _emit(files, config)
    return status


def cmd_transfer(args, config):
    tensor = _tensor(args)
    reg = tensor.registry
    base = run_full(config, tensor, write=False, stages=())
    gp = base.results["gpvm"]
    with threadpool_limits(limits=config.threads):
        tm = transfer_matrix(gp.google(tensor, FORWARD), gp.google(tensor, REVERSED), config.eta)
    files = {"config.json": to_json(config.bundle_dict())}
    files.update(transfer_tables(reg, tm, config.transfer_countries))
    print(f"eta = {tm.eta}; series terms = {tm.terms}")
    if args.sector is not None:
        sid = reg.sector_id(args.sector)
        scode = reg.sectors[sid - 1].code
        files[f"transfer/profile_world_{scode}.csv"] = profile_table(reg, reduced_transfer(tm, reg), sid)
        for c in config.transfer_countries:
            cid = reg.country_id(c)
            ccode = reg.countries[cid - 1].code
            raw = raw_m_transform(tensor, cid, sid)
            files[f"transfer/profile_{ccode}_{scode}.csv"] = profile_table(
                reg, reduced_transfer(tm, reg, cid), sid, raw=raw)
    _emit(files, config)
    return EXIT_OK


def cmd_run_all(args, config):
    tensor = _tensor(args)
    bundle = run_full(config, tensor, write=False)
    for stage, secs in bundle.timings.items():
        print(f"stage {stage}: {secs:.2f}s")
    failed = {k: len(v.failures) for k, v in bundle.results.items() if k.startswith("sweep_") and v.failures}
    if failed:
        print(f"sweep targets failing the linearity check: {failed}")
    _emit(bundle, config)
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate, "synth": cmd_synth, "rank": cmd_rank, "spectrum": cmd_spectrum,
    "correlate": cmd_correlate, "shock": cmd_shock, "transfer": cmd_transfer, "run-all": cmd_run_all,
}


def _status_for(exc: BaseException) -> int:
    if isinstance(exc, PipelineError):
        exc = exc.cause
    if isinstance(exc, (ValidationError, IngestionError, OSError)):
        return EXIT_INVALID
    return EXIT_COMPUTE


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    try:
        config = _config(args)
    except (ValueError, OSError) as exc:
        print(f"gmnet: bad configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    _echo_config(config)
    try:
        return COMMANDS[args.command](args, config)
    except (GmnetError, ValueError, KeyError, IndexError, OSError, np.linalg.LinAlgError) as exc:
        if isinstance(exc, PipelineError):
            print(f"gmnet: stage {exc.stage} failed: {exc.cause}", file=sys.stderr)
        else:
            print(f"gmnet: {type(exc).__name__}: {exc}", file=sys.stderr)
        return _status_for(exc)


if __name__ == "__main__":
    sys.exit(main())
