"""End-to-end runs: configuration, baseline caching and reproducible output bundles."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .correlators import correlator_report
from .errors import GmnetError, PipelineError
from .google_core import DEFAULT_ALPHA, DEFAULT_MAX_ITER, DEFAULT_TOL, FORWARD, REVERSED, GpvmResult, gpvm
from .net_model import MoneyTensor, Registry
from .rank_analytics import fit_exponent, rank_plane
from .sensitivity import (COUNTRY_LABOR, DEFAULT_STEP, GPVM, SCALE_SOURCE, SECTOR_PRICE, VALUE,
                          Baseline, balance, balance_derivative_matrix)
from .spectral import eigenstate_report, full_spectrum
from .tables import format_grid, format_rows, to_json
from .transfer import DEFAULT_ETA, reduced_transfer, transfer_matrix, transform_vector
from .value_rank import (RankVector, format_rank_table, import_export_values, reduce_over_countries,
                         reduce_over_sectors, sector_shares, value_probabilities)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    alpha: float = DEFAULT_ALPHA
    eta: float = DEFAULT_ETA
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    step: float = DEFAULT_STEP
    convention: str = SCALE_SOURCE
    out_dir: str | None = None
    threads: int = 1
    seed: int = 0
    spectrum: bool = True
    spectrum_alpha: float = 1.0
    eigenstates: int = 4
    eigenstate_nodes: int = 10
    sweeps: tuple = (SECTOR_PRICE, COUNTRY_LABOR)
    sweep_bases: tuple = (GPVM, VALUE)
    hold_personalization: bool = False
    fit_kmax: int = 1000
    top_n: int = 20
    transfer: bool = True
    transfer_countries: tuple = ()
    local_sectors: tuple = ()

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        if not 0 <= self.eta < 1:
            raise ValueError("eta must be in [0, 1)")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        for name in ("sweeps", "sweep_bases", "transfer_countries", "local_sectors"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v, tuple) else v)
                for f in dataclasses.fields(self) for v in [getattr(self, f.name)]}

    def bundle_dict(self) -> dict:
        """Config as recorded in a bundle: the output location is left out so bundles compare byte-for-byte."""
        d = self.to_dict()
        del d["out_dir"]
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    def merged(self, **overrides) -> "RunConfig":
        return dataclasses.replace(self, **{k: v for k, v in overrides.items() if v is not None})


class BaselineCache:
    """GPVM baselines keyed on (tensor digest, solver settings)."""

    def __init__(self):
        self._store: dict = {}
        self.hits = 0
        self.misses = 0

    def gpvm(self, tensor: MoneyTensor, config: RunConfig) -> GpvmResult:
        key = (tensor.digest, config.alpha, config.tol, config.max_iter)
        if key in self._store:
            self.hits += 1
        else:
            self.misses += 1
            self._store[key] = gpvm(tensor, config.alpha, config.tol, config.max_iter)
        return self._store[key]

    def clear(self):
        self._store.clear()


default_cache = BaselineCache()


@dataclass
class RunBundle:
    config: RunConfig
    input_digest: str
    files: dict = field(default_factory=dict)      # relative path -> bytes
    results: dict = field(default_factory=dict)    # in-memory objects by name
    timings: dict = field(default_factory=dict)    # stage -> seconds; not part of the bundle files

    def add(self, name: str, text: str):
        self.files[name] = text.encode("utf-8")

    def manifest(self) -> dict:
        return {
            "package_version": __version__,
            "config": self.config.bundle_dict(),
            "input_digest": self.input_digest,
            "threads": self.config.threads,
            "files": {name: hashlib.sha256(data).hexdigest() for name, data in sorted(self.files.items())},
        }

    def write(self, out_dir) -> None:
        for name, data in self.files.items():
            path = os.path.join(out_dir, name)
            os.makedirs(os.path.dirname(path), exist_ok=True)
            with open(path, "wb") as f:
                f.write(data)
        with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as f:
            f.write(to_json(self.manifest()))


# ---------------------------------------------------------------------------
# Table builders shared with the CLI
# ---------------------------------------------------------------------------

def rank_tables(registry: Registry, ranks: dict) -> dict:
    """``ranks/<kind>.csv`` plus country and sector reductions for each RankVector."""
    out = {}
    for name, rv in ranks.items():
        out[f"ranks/{name}.csv"] = format_rank_table(rv, registry)
        out[f"ranks/{name}_countries.csv"] = format_rank_table(reduce_over_sectors(rv, registry), registry)
        out[f"ranks/{name}_sectors.csv"] = format_rank_table(reduce_over_countries(rv, registry), registry)
    return out


def plane_tables(registry: Registry, pairs: dict, local_sectors=()) -> dict:
    out = {}
    for basis, (p, ps) in pairs.items():
        for scope in ("node", "country", "sector"):
            out[f"planes/{basis}_{scope}.csv"] = rank_plane(scope, p, ps, registry).to_csv()
        for sec in local_sectors:
            plane = rank_plane("country_in_sector", p, ps, registry, sector=sec)
            out[f"planes/{basis}_countries_in_{registry.sectors[plane.sector - 1].code}.csv"] = plane.to_csv()
    return out


def top_table(registry: Registry, gp: GpvmResult, imp: RankVector, exp: RankVector, n: int) -> str:
    """Top-n node labels for PageRank, CheiRank, 2DRank, ImportRank and ExportRank side by side."""
    plane = rank_plane("node", gp.pagerank, gp.cheirank, registry)
    n = min(n, registry.n_nodes)
    label = registry.node_label
    cols = [
        [label(int(i) + 1) for i in gp.pagerank.order[:n]],
        [label(int(i) + 1) for i in gp.cheirank.order[:n]],
        plane.top(n, by="K2"),
        [label(int(i) + 1) for i in imp.order[:n]],
        [label(int(i) + 1) for i in exp.order[:n]],
    ]
    return format_rows(["rank", "K", "K_star", "K2", "K_import", "K_export"],
                       ([k + 1, *(c[k] for c in cols)] for k in range(n)))


def sector_share_table(registry: Registry, values) -> str:
    imp, exp = sector_shares(values, registry)
    ki, ke = RankVector(imp, "").ranks, RankVector(exp, "").ranks
    return format_rows(["sector", "code", "import_rank", "import_share_pct", "export_rank", "export_share_pct"],
                       ([e.id, e.code, int(ki[k]), 100 * imp[k], int(ke[k]), 100 * exp[k]]
                        for k, e in enumerate(registry.sectors)))


def balance_tables(registry: Registry, P, P_star, basis: str) -> dict:
    bal = balance(P, P_star, registry, basis)
    codes = [e.code for e in registry.countries]
    return {
        f"balance/{basis}.csv": format_rows(["country", "B"], zip(codes, np.ma.asarray(bal.country))),
        f"balance/{basis}_partial.csv": format_grid(bal.country_sector, codes,
                                                    [e.code for e in registry.sectors], "country"),
    }


def sweep_tables(registry: Registry, sweep) -> dict:
    stem = f"sensitivity/{sweep.family}_{sweep.basis}"
    codes = [e.code for e in registry.countries]
    out = {
        f"{stem}_dB_c.csv": format_grid(sweep.dB_c, codes, sweep.targets, "country"),
        f"{stem}_failures.json": to_json(sweep.failures),
    }
    if sweep.family == SECTOR_PRICE:
        scodes = [e.code for e in registry.sectors]
        out[f"{stem}_without_diagonal.csv"] = format_grid(sweep.without_diagonal(), codes, sweep.targets, "country")
        rows = []
        for c, cc in enumerate(codes):
            for s, sc in enumerate(scodes):
                for t, tc in enumerate(sweep.targets):
                    v = sweep.dB_cs[c, s, t]
                    rows.append([cc, sc, tc, v])
        out[f"{stem}_dB_cs.csv"] = format_rows(["country", "sector", "shocked_sector", "dB_cs"], rows)
    return out


def spectrum_tables(registry: Registry, spec, name: str, n_states: int, n_nodes: int) -> dict:
    reports = []
    for k in range(1, min(n_states + 1, spec.eigenvalues.size)):
        rep = eigenstate_report(spec, k, n=n_nodes, registry=registry)
        reports.append({"index": rep.index, "eigenvalue": [rep.eigenvalue.real, rep.eigenvalue.imag],
                        "ipr": rep.ipr, "nodes": rep.labels, "amplitudes": rep.amplitudes})
    return {
        f"spectrum/{name}.csv": spec.to_csv(),
        f"spectrum/{name}_eigenstates.json": to_json({"alpha": spec.alpha, "gap": spec.gap(), "states": reports}),
    }


def transfer_tables(registry: Registry, tm, countries=()) -> dict:
    scodes = [e.code for e in registry.sectors]
    out = {"transfer/R_world.csv": format_grid(reduced_transfer(tm, registry), scodes, scodes, "sector")}
    for c in countries:
        cid = registry.country_id(c)
        code = registry.countries[cid - 1].code
        out[f"transfer/R_{code}.csv"] = format_grid(reduced_transfer(tm, registry, cid), scodes, scodes, "sector")
    return out


def derivative_tables(registry: Registry, table) -> dict:
    """Per-node, per-country and per-(country, sector) tables for one shock target."""
    shock = table.shock
    fam = registry.sectors if shock.kind == SECTOR_PRICE else registry.countries
    stem = f"sensitivity/{shock.kind}_{fam[shock.target - 1].code}_{table.basis}"
    label = registry.node_label
    nodes = format_rows(["node", "label", "D", "D_star", "D_log", "D_star_log"],
                        ([i + 1, label(i + 1), table.D[i], table.D_star[i], table.D_log[i], table.D_star_log[i]]
                         for i in range(registry.n_nodes)))
    codes = [e.code for e in registry.countries]
    meta = {"shock": dataclasses.asdict(shock), "step": table.step, "halvings": table.halvings,
            "max_disagreement": table.max_disagreement, "diagnostics": table.diagnostics}
    return {
        f"{stem}_nodes.csv": nodes,
        f"{stem}_dB_c.csv": format_rows(["country", "dB"], zip(codes, table.dB_c)),
        f"{stem}_dB_cs.csv": format_grid(table.dB_cs, codes, [e.code for e in registry.sectors], "country"),
        f"{stem}_meta.json": to_json(meta),
    }


def profile_table(registry: Registry, R: np.ndarray, sector, raw=None) -> str:
    """Column of a reduced transfer matrix for one source sector, optionally beside the one-hop profile."""
    sid = registry.sector_id(sector)
    prof = transform_vector(R, sid)
    header = ["sector", "code", "transfer"]
    rows = [[e.id, e.code, prof[k]] for k, e in enumerate(registry.sectors)]
    if raw is not None:
        header.append("one_hop")
        for k, row in enumerate(rows):
            row.append(raw[k])
    return format_rows(header, rows)


# ---------------------------------------------------------------------------
# Full run
# ---------------------------------------------------------------------------

STAGES = ("values", "gpvm", "planes", "fits", "spectrum", "correlators", "balances", "sensitivity", "transfer")


def run_full(config: RunConfig, tensor: MoneyTensor, cache: BaselineCache | None = None,
             write: bool = True, stages=None) -> RunBundle:
    """Run the analysis stages and collect the produced tables into a :class:`RunBundle`.

    ``stages`` restricts the run to a subset of :data:`STAGES`; the value and
    GPVM stages always run because everything else reads from them.
    """
    cache = cache if cache is not None else default_cache
    wanted = set(STAGES if stages is None else stages) | {"values", "gpvm"}
    unknown = wanted - set(STAGES)
    if unknown:
        raise ValueError(f"unknown stages: {sorted(unknown)}")
    reg = tensor.registry
    bundle = RunBundle(config, tensor.digest)
    bundle.add("config.json", to_json(config.bundle_dict()))
    stage = "setup"

    def timed(name):
        nonlocal stage
        stage = name
        bundle.timings[name] = time.perf_counter()

    def done():
        bundle.timings[stage] = time.perf_counter() - bundle.timings[stage]
        logger.info("stage %s done in %.2fs", stage, bundle.timings[stage])

    try:
        with threadpool_limits(limits=config.threads):
            timed("values")
            values = import_export_values(tensor)
            imp, exp = value_probabilities(values)
            bundle.files.update({k: v.encode() for k, v in rank_tables(reg, {"importrank": imp, "exportrank": exp}).items()})
            bundle.add("ranks/sector_shares.csv", sector_share_table(reg, values))
            bundle.results.update(values=values, importrank=imp, exportrank=exp)
            done()

            timed("gpvm")
            gp = cache.gpvm(tensor, config)
            bundle.files.update({k: v.encode() for k, v in rank_tables(reg, {
                "pagerank": gp.pagerank, "cheirank": gp.cheirank,
                "pagerank_first": gp.pagerank_first, "cheirank_first": gp.cheirank_first}).items()})
            bundle.add("ranks/gpvm_diagnostics.json", to_json(gp.diagnostics))
            bundle.results["gpvm"] = gp
            done()
            pairs = {GPVM: (gp.pagerank, gp.cheirank), VALUE: (imp, exp)}

            if "planes" in wanted:
                timed("planes")
                bundle.files.update({k: v.encode() for k, v in plane_tables(reg, pairs, config.local_sectors).items()})
                bundle.add("planes/top.csv", top_table(reg, gp, imp, exp, config.top_n))
                done()

            if "fits" in wanted:
                timed("fits")
                fits = {}
                kmax = min(config.fit_kmax, reg.n_nodes)
                for name, rv in (("pagerank", gp.pagerank), ("cheirank", gp.cheirank),
                                 ("importrank", imp), ("exportrank", exp)):
                    try:
                        beta, err = fit_exponent(rv, (1, kmax))
                        fits[name] = {"beta": beta, "stderr": err, "k_range": [1, kmax]}
                    except ValueError as exc:
                        fits[name] = {"error": str(exc)}
                bundle.add("fits.json", to_json(fits))
                bundle.results["fits"] = fits
                done()

            if config.spectrum and "spectrum" in wanted:
                timed("spectrum")
                for name, direction in (("G", FORWARD), ("G_star", REVERSED)):
                    spec = full_spectrum(gp.google(tensor, direction, config.spectrum_alpha), keep_matrix=False)
                    bundle.files.update({k: v.encode() for k, v in spectrum_tables(
                        reg, spec, name, config.eigenstates, config.eigenstate_nodes).items()})
                    bundle.results[f"spectrum_{name}"] = spec
                done()

            if "correlators" in wanted:
                timed("correlators")
                summary = {}
                scodes = [e.code for e in reg.sectors]
                for basis, (p, ps) in pairs.items():
                    rep = correlator_report(p, ps, reg, basis)
                    summary[basis] = rep.summary()
                    bundle.add(f"correlators/kappa_ss_{basis}.csv", format_grid(rep.kappa_ss, scodes, scodes, "sector"))
                    bundle.results[f"correlators_{basis}"] = rep
                bundle.add("correlators/summary.json", to_json(summary))
                done()

            if "balances" in wanted:
                timed("balances")
                for basis, (p, ps) in pairs.items():
                    bundle.files.update({k: v.encode() for k, v in balance_tables(reg, p.p, ps.p, basis).items()})
                done()

            if config.sweeps and "sensitivity" in wanted:
                timed("sensitivity")
                baselines = {GPVM: Baseline(GPVM, gp.pagerank.p, gp.cheirank.p, (gp.v_second, gp.vstar_second)),
                             VALUE: Baseline(VALUE, imp.p, exp.p)}
                for family in config.sweeps:
                    for basis in config.sweep_bases:
                        sweep = balance_derivative_matrix(
                            tensor, family, basis, step=config.step, convention=config.convention,
                            baseline=baselines[basis], alpha=config.alpha, tol=config.tol,
                            max_iter=config.max_iter, hold_personalization=config.hold_personalization)
                        bundle.files.update({k: v.encode() for k, v in sweep_tables(reg, sweep).items()})
                        bundle.results[f"sweep_{family}_{basis}"] = sweep
                done()

            if config.transfer and "transfer" in wanted:
                timed("transfer")
                tm = transfer_matrix(gp.google(tensor, FORWARD), gp.google(tensor, REVERSED), config.eta)
                bundle.files.update({k: v.encode() for k, v in transfer_tables(reg, tm, config.transfer_countries).items()})
                bundle.results["transfer"] = tm
                done()
    except (GmnetError, ValueError, np.linalg.LinAlgError) as exc:
        manifest = bundle.manifest()
        if write and config.out_dir:
            bundle.write(config.out_dir)
        raise PipelineError(stage, exc, manifest) from exc

    if write and config.out_dir:
        bundle.write(config.out_dir)
    return bundle
