"""PageRank-CheiRank correlators: global, sector-sector, per-sector and reduced.

Entries that divide by a zero sector marginal are masked rather than NaN so that
exports can write an explicit missing marker.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .net_model import Registry
from .tables import masked_list
from .value_rank import RankVector


def _arr(p):
    return p.p if isinstance(p, RankVector) else np.asarray(p, dtype=float)


def global_correlator(P, P_star) -> float:
    """``kappa = N * sum_i P(i) P*(i) - 1``."""
    P, P_star = _arr(P), _arr(P_star)
    if P.shape != P_star.shape:
        raise ValueError(f"length mismatch: {P.shape} vs {P_star.shape}")
    return float(P.size * np.dot(P, P_star) - 1.0)


def sector_sector_correlator(P, P_star, registry: Registry) -> np.ma.MaskedArray:
    """N_s x N_s matrix ``kappa[s, s']``; masked where a sector marginal is zero."""
    nc, ns = registry.n_countries, registry.n_sectors
    a = _arr(P).reshape(nc, ns)
    b = _arr(P_star).reshape(nc, ns)
    joint = a.T @ b                      # sum_c P(c,s) P*(c,s')
    marg = np.outer(a.sum(axis=0), b.sum(axis=0))
    undefined = marg == 0
    kappa = nc * np.divide(joint, marg, out=np.zeros_like(joint), where=~undefined) - 1.0
    return np.ma.masked_array(kappa, mask=undefined)


def sector_correlators(P, P_star, registry: Registry) -> np.ma.MaskedArray:
    """Diagonal ``kappa_s = kappa[s, s]``."""
    return sector_sector_correlator(P, P_star, registry).diagonal().copy()


def reduced_correlators(P, P_star, registry: Registry) -> tuple[float, float]:
    """``(kappa(c), kappa(s))`` from probabilities traced over sectors and over countries."""
    nc, ns = registry.n_countries, registry.n_sectors
    a = _arr(P).reshape(nc, ns)
    b = _arr(P_star).reshape(nc, ns)
    kc = nc * np.dot(a.sum(axis=1), b.sum(axis=1)) - 1.0
    ks = ns * np.dot(a.sum(axis=0), b.sum(axis=0)) - 1.0
    return float(kc), float(ks)


@dataclass(frozen=True, eq=False)
class CorrelatorReport:
    kappa: float
    kappa_ss: np.ma.MaskedArray
    kappa_s: np.ma.MaskedArray
    kappa_c_reduced: float
    kappa_s_reduced: float
    basis: str

    def summary(self) -> dict:
        return {
            "basis": self.basis,
            "kappa": self.kappa,
            "kappa_countries": self.kappa_c_reduced,
            "kappa_sectors": self.kappa_s_reduced,
            "kappa_s": masked_list(self.kappa_s),
        }


def correlator_report(P, P_star, registry: Registry, basis: str = "gpvm") -> CorrelatorReport:
    kss = sector_sector_correlator(P, P_star, registry)
    kc, ks = reduced_correlators(P, P_star, registry)
    return CorrelatorReport(global_correlator(P, P_star), kss, kss.diagonal().copy(), kc, ks, basis)
