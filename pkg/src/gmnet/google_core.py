"""Stochastic and Google matrices, personalization vectors and the two-pass GPVM solve.

Forward direction (S, G) follows money to its destination and ranks the import
side (PageRank).  Reversed direction (S*, G*) runs the same construction on the
transposed flows and ranks the export side (CheiRank).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DegenerateInputError
from .net_model import MoneyTensor
from .value_rank import CHEIRANK, PAGERANK, RankVector, reduce_over_countries

logger = logging.getLogger(__name__)

FORWARD = "forward"
REVERSED = "reversed"
DIRECTIONS = (FORWARD, REVERSED)

DEFAULT_ALPHA = 0.5
DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 100_000


def _check_direction(direction):
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")


def _flows(tensor: MoneyTensor, direction: str) -> np.ndarray:
    _check_direction(direction)
    return tensor.matrix if direction == FORWARD else tensor.matrix.T


def column_normalize(a: np.ndarray) -> np.ndarray:
    """Divide each column by its sum; all-zero columns become uniform ``1/N``."""
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    col = a.sum(axis=0)
    dangling = col == 0
    out = np.divide(a, col, out=np.zeros_like(a), where=~dangling)
    out[:, dangling] = 1.0 / n
    return out


def build_stochastic(tensor: MoneyTensor, direction: str = FORWARD) -> np.ndarray:
    """Column-stochastic S (forward) or S* (reversed) with dangling columns set to ``1/N``."""
    return column_normalize(_flows(tensor, direction))


def personalization_first(tensor: MoneyTensor, direction: str = FORWARD) -> np.ndarray:
    """Each country gets mass ``1/N_c``, split over its sectors by import (or export) value.

    A country with no value in this direction spreads its ``1/N_c`` uniformly over its sectors.
    """
    reg = tensor.registry
    nc, ns = reg.n_countries, reg.n_sectors
    flows = _flows(tensor, direction)
    # forward: imports of the destination node; reversed: exports
    node_value = flows.sum(axis=1).reshape(nc, ns)
    country_value = node_value.sum(axis=1, keepdims=True)
    empty = country_value[:, 0] == 0
    if np.any(empty):
        logger.debug("personalization fallback for %d countries with zero %s value",
                     int(empty.sum()), "import" if direction == FORWARD else "export")
    safe = np.where(country_value == 0, 1.0, country_value)
    v = node_value / (nc * safe)
    v[empty] = 1.0 / (nc * ns)
    return v.ravel()


def personalization_second(sector_probs, n_countries: int) -> np.ndarray:
    """Replicate the sector profile ``P_s / N_c`` across every country."""
    ps = sector_probs.p if isinstance(sector_probs, RankVector) else np.asarray(sector_probs, dtype=float)
    return np.tile(ps / n_countries, n_countries)


@dataclass(frozen=True, eq=False)
class GoogleMatrix:
    """``G = alpha * S + (1 - alpha) * v e^T``, kept in factored form."""

    S: np.ndarray
    alpha: float
    v: np.ndarray
    direction: str = FORWARD

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        v = np.asarray(self.v, dtype=float)
        if v.shape != (self.S.shape[0],):
            raise ValueError("personalization vector length does not match S")
        if np.any(v < 0) or not np.isclose(v.sum(), 1.0, rtol=0, atol=1e-12):
            raise ValueError("personalization vector must be nonnegative and sum to 1")

    @property
    def n(self) -> int:
        return self.S.shape[0]

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.alpha * (self.S @ x) + (1.0 - self.alpha) * x.sum() * self.v

    def dense(self) -> np.ndarray:
        return self.alpha * self.S + (1.0 - self.alpha) * np.outer(self.v, np.ones(self.n))


def google_matrix(tensor: MoneyTensor, direction: str, alpha: float, v: np.ndarray) -> GoogleMatrix:
    return GoogleMatrix(build_stochastic(tensor, direction), alpha, v, direction)


def pagerank(G: GoogleMatrix, start=None, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
             kind: str = PAGERANK) -> RankVector:
    """Power iteration to the ``lambda = 1`` right eigenvector, normalized to unit sum.

    Stops once ``||G x - x||_1 <= tol``; the returned vector is the last ``G x``.
    """
    x = np.array(G.v if start is None else start, dtype=float)
    if np.any(x < 0) or not x.sum() > 0:
        raise ValueError("start vector must be nonnegative with positive sum")
    x /= x.sum()
    residual = np.inf
    for it in range(1, max_iter + 1):
        y = G.matvec(x)
        y /= y.sum()
        residual = float(np.abs(y - x).sum())
        x = y
        if residual <= tol:
            return RankVector(x, kind, info={"iterations": it, "residual": residual})
    raise ConvergenceError(f"power iteration did not converge in {max_iter} steps "
                           f"(last residual {residual:.3e})", residual=residual, iterations=max_iter)


@dataclass(frozen=True, eq=False)
class GpvmResult:
    pagerank: RankVector
    cheirank: RankVector
    pagerank_first: RankVector
    cheirank_first: RankVector
    v_first: np.ndarray
    v_second: np.ndarray
    vstar_first: np.ndarray
    vstar_second: np.ndarray
    alpha: float
    diagnostics: dict = field(default_factory=dict)

    def personalization(self, direction: str) -> np.ndarray:
        return self.v_second if direction == FORWARD else self.vstar_second

    def google(self, tensor: MoneyTensor, direction: str, alpha: float | None = None) -> GoogleMatrix:
        """Rebuild the final (second-pass) Google matrix for ``direction``."""
        return google_matrix(tensor, direction, self.alpha if alpha is None else alpha,
                             self.personalization(direction))


def _gpvm_direction(tensor, direction, alpha, tol, max_iter, v_fixed=None):
    reg = tensor.registry
    S = build_stochastic(tensor, direction)
    kind = PAGERANK if direction == FORWARD else CHEIRANK
    if v_fixed is not None:
        G = GoogleMatrix(S, alpha, v_fixed, direction)
        final = pagerank(G, tol=tol, max_iter=max_iter, kind=kind)
        return final, final, v_fixed, v_fixed
    v1 = personalization_first(tensor, direction)
    first = pagerank(GoogleMatrix(S, alpha, v1, direction), tol=tol, max_iter=max_iter, kind=kind)
    v2 = personalization_second(reduce_over_countries(first, reg), reg.n_countries)
    final = pagerank(GoogleMatrix(S, alpha, v2, direction), tol=tol, max_iter=max_iter, kind=kind)
    return first, final, v1, v2


def gpvm(tensor: MoneyTensor, alpha: float = DEFAULT_ALPHA, tol: float = DEFAULT_TOL,
         max_iter: int = DEFAULT_MAX_ITER, personalization: tuple | None = None) -> GpvmResult:
    """Two-pass personalized PageRank and CheiRank.

    Pass one personalizes by per-country value shares; pass two by the sector
    profile of the pass-one ranking.  ``personalization=(v, v_star)`` skips the
    first pass and holds both vectors fixed (used for ablations).
    """
    if not tensor.total > 0:
        raise DegenerateInputError("total exchange value V is zero")
    fixed = personalization or (None, None)
    p1, p, v1, v2 = _gpvm_direction(tensor, FORWARD, alpha, tol, max_iter, fixed[0])
    q1, q, w1, w2 = _gpvm_direction(tensor, REVERSED, alpha, tol, max_iter, fixed[1])
    diag = {
        "iterations": {"pagerank_first": p1.info["iterations"], "pagerank": p.info["iterations"],
                       "cheirank_first": q1.info["iterations"], "cheirank": q.info["iterations"]},
        "residuals": {"pagerank_first": p1.info["residual"], "pagerank": p.info["residual"],
                      "cheirank_first": q1.info["residual"], "cheirank": q.info["residual"]},
        "pass_l1_change": {"pagerank": float(np.abs(p.p - p1.p).sum()),
                           "cheirank": float(np.abs(q.p - q1.p).sum())},
    }
    return GpvmResult(p, q, p1, q1, v1, v2, w1, w2, alpha, diag)
