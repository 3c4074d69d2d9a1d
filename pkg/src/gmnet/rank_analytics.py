"""2DRank, rank-plane tables and power-law exponent fits."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .net_model import Registry
from .value_rank import RankVector, rank_order, reduce_over_countries, reduce_over_sectors

SCOPES = ("node", "country", "sector", "country_in_sector")


def _check_permutation(k: np.ndarray, name: str) -> np.ndarray:
    k = np.asarray(k)
    if k.ndim != 1 or not np.array_equal(np.sort(k), np.arange(1, k.size + 1)):
        raise ValueError(f"{name} is not a permutation of 1..{k.size}")
    return k.astype(np.int64)


def two_d_rank(K, K_star) -> np.ndarray:
    """Order entities by first appearance in the growing squares ``[1, k] x [1, k]``.

    At step k the entity with ``K = k`` (if its ``K* <= k``) is admitted before the
    entity with ``K* = k`` (if its ``K <= k``); a corner entity is admitted once.
    Returns the 1-based 2DRank of each entity.
    """
    K = _check_permutation(K, "K")
    K_star = _check_permutation(K_star, "K*")
    if K.size != K_star.size:
        raise ValueError("K and K* must have the same length")
    m = K.size
    at_k = np.empty(m, dtype=np.int64)
    at_k[K - 1] = np.arange(m)
    at_kstar = np.empty(m, dtype=np.int64)
    at_kstar[K_star - 1] = np.arange(m)
    k2 = np.zeros(m, dtype=np.int64)
    nxt = 1
    for k in range(1, m + 1):
        a = at_k[k - 1]
        if K_star[a] <= k and k2[a] == 0:
            k2[a] = nxt
            nxt += 1
        b = at_kstar[k - 1]
        if K[b] <= k and k2[b] == 0:
            k2[b] = nxt
            nxt += 1
    return k2


@dataclass(frozen=True, eq=False)
class RankPlane:
    scope: str
    labels: list
    K: np.ndarray
    K_star: np.ndarray
    K2: np.ndarray
    p: np.ndarray
    p_star: np.ndarray
    sector: int | None = None

    def rows(self, order_by: str = "K2"):
        keys = getattr(self, order_by)
        for pos in np.argsort(keys, kind="stable"):
            yield (self.labels[pos], int(self.K[pos]), int(self.K_star[pos]), int(self.K2[pos]),
                   float(self.p[pos]), float(self.p_star[pos]))

    def top(self, n: int, by: str = "K") -> list:
        keys = getattr(self, by)
        order = np.argsort(keys, kind="stable")[:n]
        return [self.labels[i] for i in order]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["entity", "K", "K_star", "K2", "p", "p_star"])
        for label, k, ks, k2, p, ps in self.rows():
            w.writerow([label, k, ks, k2, repr(p), repr(ps)])
        return buf.getvalue()


def _arr(p):
    return p.p if isinstance(p, RankVector) else np.asarray(p, dtype=float)


def rank_plane(scope: str, p, p_star, registry: Registry, sector: int | str | None = None) -> RankPlane:
    """(K, K*, K2) table for node, country, sector or countries-within-one-sector scope.

    ``p`` and ``p_star`` are node-level probability vectors (GPVM or value based).
    """
    if scope not in SCOPES:
        raise ValueError(f"scope must be one of {SCOPES}")
    p, p_star = _arr(p), _arr(p_star)
    sid = None
    if scope == "node":
        labels = [registry.node_label(i) for i in range(1, registry.n_nodes + 1)]
        a, b = p, p_star
    elif scope == "country":
        labels = [e.code for e in registry.countries]
        a, b = reduce_over_sectors(p, registry).p, reduce_over_sectors(p_star, registry).p
    elif scope == "sector":
        labels = [e.code for e in registry.sectors]
        a, b = reduce_over_countries(p, registry).p, reduce_over_countries(p_star, registry).p
    else:
        if sector is None:
            raise ValueError("countries-within-sector scope needs a sector")
        sid = registry.sector_id(sector)
        labels = [e.code for e in registry.countries]
        ns = registry.n_sectors
        a = p.reshape(-1, ns)[:, sid - 1]
        b = p_star.reshape(-1, ns)[:, sid - 1]
    K, Ks = rank_order(a), rank_order(b)
    return RankPlane(scope, labels, K, Ks, two_d_rank(K, Ks), np.asarray(a), np.asarray(b), sid)


def fit_exponent(p, k_range: tuple[int, int] | None = None) -> tuple[float, float]:
    """Least-squares ``beta`` in ``p(K) ~ K^-beta`` over ranks ``k_range`` (inclusive), with its stderr."""
    values = np.sort(_arr(p))[::-1]
    n = values.size
    lo, hi = k_range if k_range is not None else (1, min(1000, n))
    if not 1 <= lo < hi <= n:
        raise ValueError(f"k_range {lo, hi} must lie within 1..{n}")
    if hi - lo + 1 < 10:
        raise ValueError("need at least 10 points for the fit")
    seg = values[lo - 1:hi]
    if np.any(seg <= 0):
        raise ValueError("nonpositive probabilities inside the fit range")
    k = np.arange(lo, hi + 1, dtype=float)
    fit = stats.linregress(np.log(k), np.log(seg))
    return -float(fit.slope), float(fit.stderr)
