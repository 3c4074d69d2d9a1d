"""Price and labor-cost shocks, trade balances and their finite-difference derivatives.

A shock multiplies a slice of the flow tensor by ``1 + delta``.  With the default
``scale_source`` convention a sector-price shock on ``s'`` scales every flow whose
source sector is ``s'``; a labor shock on ``c'`` scales every flow leaving ``c'``.
Derivatives rerun the whole ranking pipeline on the shocked tensor.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import GmnetError, LinearityError
from .google_core import DEFAULT_ALPHA, DEFAULT_MAX_ITER, DEFAULT_TOL, gpvm
from .net_model import MoneyTensor, Registry
from .value_rank import import_export_values, value_probabilities

logger = logging.getLogger(__name__)

SECTOR_PRICE = "sector_price"
COUNTRY_LABOR = "country_labor"
SCALE_SOURCE = "scale_source"
SCALE_DESTINATION = "scale_destination"
GPVM = "gpvm"
VALUE = "value"

DEFAULT_STEP = 0.01
LINEARITY_RTOL = 0.01
LINEARITY_FLOOR = 1e-12
MAX_HALVINGS = 4


@dataclass(frozen=True)
class ShockSpec:
    kind: str
    target: int           # 1-based sector id (price) or country id (labor)
    magnitude: float
    convention: str = SCALE_SOURCE

    def __post_init__(self):
        if self.kind not in (SECTOR_PRICE, COUNTRY_LABOR):
            raise ValueError(f"unknown shock kind {self.kind!r}")
        if self.convention not in (SCALE_SOURCE, SCALE_DESTINATION):
            raise ValueError(f"unknown shock convention {self.convention!r}")
        if not self.magnitude > -1:
            raise ValueError("shock magnitude must exceed -1")


def _shock_axis(kind: str, convention: str) -> int:
    # values[c, c_src, s, s_src]
    if kind == SECTOR_PRICE:
        return 3 if convention == SCALE_SOURCE else 2
    return 1 if convention == SCALE_SOURCE else 0


def resolve_target(registry: Registry, kind: str, target) -> int:
    try:
        if kind == SECTOR_PRICE:
            return registry.sector_id(target)
        return registry.country_id(target)
    except (KeyError, IndexError) as exc:
        raise ValueError(f"unknown shock target {target!r}: {exc.args[0]}") from None


def apply_shock(tensor: MoneyTensor, shock: ShockSpec) -> MoneyTensor:
    target = resolve_target(tensor.registry, shock.kind, shock.target)
    values = np.array(tensor.values)
    index = [slice(None)] * 4
    index[_shock_axis(shock.kind, shock.convention)] = target - 1
    values[tuple(index)] *= 1.0 + shock.magnitude
    return tensor.with_values(values)


# ---------------------------------------------------------------------------
# Probabilities per basis and balances
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Baseline:
    """Unshocked probabilities for one basis, computed once and shared by every probe."""

    basis: str
    P: np.ndarray
    P_star: np.ndarray
    personalization: tuple | None = None


def basis_probabilities(tensor: MoneyTensor, basis: str = GPVM, alpha: float = DEFAULT_ALPHA,
                        tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                        personalization: tuple | None = None) -> Baseline:
    """(P, P*) from GPVM PageRank/CheiRank or from ImportRank/ExportRank values."""
    if basis == GPVM:
        res = gpvm(tensor, alpha=alpha, tol=tol, max_iter=max_iter, personalization=personalization)
        return Baseline(GPVM, res.pagerank.p, res.cheirank.p, (res.v_second, res.vstar_second))
    if basis == VALUE:
        imp, exp = value_probabilities(import_export_values(tensor))
        return Baseline(VALUE, imp.p, exp.p)
    raise ValueError(f"unknown basis {basis!r}")


@dataclass(frozen=True, eq=False)
class BalanceReport:
    country: np.ma.MaskedArray          # B_c
    country_sector: np.ma.MaskedArray   # B_cs
    basis: str


def balance(P, P_star, registry: Registry, basis: str = GPVM) -> BalanceReport:
    """``B_c = (P*_c - P_c)/(P*_c + P_c)`` and ``B_cs = (P*_cs - P_cs)/(P*_c + P_c)``."""
    nc, ns = registry.n_countries, registry.n_sectors
    a = np.asarray(P, dtype=float).reshape(nc, ns)
    b = np.asarray(P_star, dtype=float).reshape(nc, ns)
    den = a.sum(axis=1) + b.sum(axis=1)
    undefined = den == 0
    safe = np.where(undefined, 1.0, den)
    bcs = (b - a) / safe[:, None]
    bc = (b.sum(axis=1) - a.sum(axis=1)) / safe
    return BalanceReport(
        np.ma.masked_array(bc, mask=undefined),
        np.ma.masked_array(bcs, mask=np.repeat(undefined[:, None], ns, axis=1)),
        basis,
    )


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DerivativeTable:
    basis: str
    step: float
    D: np.ndarray
    D_star: np.ndarray
    D_log: np.ma.MaskedArray
    D_star_log: np.ma.MaskedArray
    dB_c: np.ma.MaskedArray
    dB_cs: np.ma.MaskedArray
    shock: ShockSpec | None = None
    halvings: int = 0
    max_disagreement: float = 0.0
    diagnostics: dict = field(default_factory=dict)


def _masked_log(d, p):
    zero = p == 0
    return np.ma.masked_array(np.divide(d, p, out=np.zeros_like(d), where=~zero), mask=zero)


def _difference(base: Baseline, base_bal: BalanceReport, probe: Baseline, registry, h):
    D = (probe.P - base.P) / h
    Ds = (probe.P_star - base.P_star) / h
    bal = balance(probe.P, probe.P_star, registry, base.basis)
    dbc = (bal.country - base_bal.country) / h
    dbcs = (bal.country_sector - base_bal.country_sector) / h
    return D, Ds, np.ma.asarray(dbc), np.ma.asarray(dbcs)


def _disagreement(first, second, floor):
    """Worst relative gap between two step estimates over components above ``floor``."""
    worst, where = 0.0, None
    for name, a, b in zip(("D", "D*", "dB_c", "dB_cs"), first, second):
        a = np.ma.filled(np.ma.asarray(a, dtype=float), 0.0).ravel()
        b = np.ma.filled(np.ma.asarray(b, dtype=float), 0.0).ravel()
        scale = np.maximum(np.abs(a), np.abs(b))
        sel = scale > floor
        if not np.any(sel):
            continue
        rel = np.abs(a[sel] - b[sel]) / scale[sel]
        k = int(np.argmax(rel))
        if rel[k] > worst:
            worst, where = float(rel[k]), (name, int(np.flatnonzero(sel)[k]))
    return worst, where


def shock_derivatives(tensor: MoneyTensor, perturb: Callable[[MoneyTensor, float], MoneyTensor],
                      basis: str = GPVM, step: float = DEFAULT_STEP, baseline: Baseline | None = None,
                      alpha: float = DEFAULT_ALPHA, tol: float = DEFAULT_TOL,
                      max_iter: int = DEFAULT_MAX_ITER, hold_personalization: bool = False,
                      rtol: float = LINEARITY_RTOL, floor: float = LINEARITY_FLOOR,
                      max_halvings: int = MAX_HALVINGS) -> DerivativeTable:
    """Forward-difference derivatives of P, P*, B_c and B_cs under ``perturb(tensor, h)``.

    Estimates at ``h`` and ``h/2`` must agree to ``rtol`` on every component whose
    magnitude exceeds ``floor``; otherwise ``h`` is halved, at most ``max_halvings``
    times, before :class:`LinearityError` is raised.
    """
    reg = tensor.registry
    if baseline is None:
        baseline = basis_probabilities(tensor, basis, alpha, tol, max_iter)
    base_bal = balance(baseline.P, baseline.P_star, reg, basis)
    fixed = baseline.personalization if (hold_personalization and basis == GPVM) else None

    def probe(h):
        shocked = basis_probabilities(perturb(tensor, h), basis, alpha, tol, max_iter, fixed)
        return _difference(baseline, base_bal, shocked, reg, h)

    if step == 0:
        n = reg.n_nodes
        zeros = np.zeros(n)
        return DerivativeTable(basis, 0.0, zeros, zeros.copy(), _masked_log(zeros, baseline.P),
                               _masked_log(zeros, baseline.P_star),
                               np.ma.zeros(reg.n_countries), np.ma.zeros((reg.n_countries, reg.n_sectors)))

    h = step
    worst, where = np.inf, None
    for halvings in range(max_halvings + 1):
        first = probe(h)
        second = probe(h / 2)
        worst, where = _disagreement(first, second, floor)
        if worst <= rtol:
            D, Ds, dbc, dbcs = first
            return DerivativeTable(basis, h, D, Ds, _masked_log(D, baseline.P),
                                   _masked_log(Ds, baseline.P_star), dbc, dbcs,
                                   halvings=halvings, max_disagreement=worst,
                                   diagnostics={"worst_component": where})
        logger.debug("linearity check failed at step %g (worst %.3g at %s); halving", h, worst, where)
        h /= 2
    raise LinearityError(f"finite differences not linear down to step {2 * h:g}: "
                         f"worst relative disagreement {worst:.3g} at {where}", worst=where)


def rank_derivatives(tensor: MoneyTensor, kind: str, target, basis: str = GPVM,
                     step: float = DEFAULT_STEP, convention: str = SCALE_SOURCE,
                     **kwargs) -> DerivativeTable:
    """Derivatives with respect to one sector price or one country labor cost."""
    tid = resolve_target(tensor.registry, kind, target)

    def perturb(t, h):
        return apply_shock(t, ShockSpec(kind, tid, h, convention))

    table = shock_derivatives(tensor, perturb, basis=basis, step=step, **kwargs)
    return replace(table, shock=ShockSpec(kind, tid, table.step, convention))


# ---------------------------------------------------------------------------
# Sweeps over every target of a family
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BalanceSweep:
    family: str
    basis: str
    convention: str
    targets: list                        # codes, in id order
    dB_c: np.ma.MaskedArray              # N_c x n_targets
    dB_cs: np.ma.MaskedArray             # N_c x N_s x n_targets
    tables: list
    failures: dict

    def cross_sector(self, country: int) -> np.ma.MaskedArray:
        """``dB_cs / d delta_s'`` for one country (1-based id): rows s, columns s'."""
        if self.family != SECTOR_PRICE:
            raise ValueError("cross-sector matrices come from a sector-price sweep")
        return self.dB_cs[country - 1]

    def without_diagonal(self) -> np.ma.MaskedArray:
        """``dB_c/d delta_s' - dB_cs'/d delta_s'`` (N_c x N_s)."""
        if self.family != SECTOR_PRICE:
            raise ValueError("diagonal removal applies to a sector-price sweep")
        diag = np.ma.stack([self.dB_cs[:, s, s] for s in range(self.dB_cs.shape[1])], axis=1)
        return self.dB_c - diag


def balance_derivative_matrix(tensor: MoneyTensor, family: str, basis: str = GPVM,
                              step: float = DEFAULT_STEP, convention: str = SCALE_SOURCE,
                              baseline: Baseline | None = None, workers: int = 1,
                              alpha: float = DEFAULT_ALPHA, tol: float = DEFAULT_TOL,
                              max_iter: int = DEFAULT_MAX_ITER, hold_personalization: bool = False,
                              **kwargs) -> BalanceSweep:
    """Sweep every sector (price) or every country (labor) target; failures are recorded, not raised."""
    reg = tensor.registry
    ents = reg.sectors if family == SECTOR_PRICE else reg.countries
    if family not in (SECTOR_PRICE, COUNTRY_LABOR):
        raise ValueError(f"unknown shock family {family!r}")
    if baseline is None:
        baseline = basis_probabilities(tensor, basis, alpha, tol, max_iter)

    def job(tid):
        try:
            return rank_derivatives(tensor, family, tid, basis=basis, step=step, convention=convention,
                                    baseline=baseline, alpha=alpha, tol=tol, max_iter=max_iter,
                                    hold_personalization=hold_personalization, **kwargs), None
        except GmnetError as exc:
            return None, f"{type(exc).__name__}: {exc}"

    ids = [e.id for e in ents]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, ids))
    else:
        results = [job(t) for t in ids]

    nc, ns, nt = reg.n_countries, reg.n_sectors, len(ids)
    dbc = np.ma.masked_all((nc, nt))
    dbcs = np.ma.masked_all((nc, ns, nt))
    failures = {}
    for k, (table, err) in enumerate(results):
        if table is None:
            failures[ents[k].code] = err
            continue
        dbc[:, k] = table.dB_c
        dbcs[:, :, k] = table.dB_cs
    return BalanceSweep(family, basis, convention, [e.code for e in ents], dbc, dbcs,
                        [t for t, _ in results], failures)
