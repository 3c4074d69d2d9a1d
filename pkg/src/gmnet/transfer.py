"""Sector transformation through the resolvent ``T = (1 - eta) (1 - eta G*)^-1 G``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .google_core import GoogleMatrix
from .net_model import MoneyTensor, Registry

DEFAULT_ETA = 0.7
SERIES_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class TransferMatrix:
    T: np.ndarray
    eta: float
    terms: int        # number of powers of (eta G*) summed


def _dense(G):
    return G.dense() if isinstance(G, GoogleMatrix) else np.asarray(G, dtype=float)


def transfer_matrix(G, G_star, eta: float = DEFAULT_ETA, tol: float = SERIES_TOL) -> TransferMatrix:
    """Neumann series ``sum_k (eta G*)^k`` applied to ``(1 - eta) G``.

    The partial sum is doubled each round (``S <- S + A^m S``, ``A^m <- A^m A^m``)
    and stops once the next block's leading term ``(1 - eta) (eta G*)^m`` has max
    column sum below ``tol``.  ``eta = 0`` returns ``G`` itself.
    """
    if not 0 <= eta < 1:
        raise ValueError(f"eta must be in [0, 1), got {eta}")
    g = _dense(G)
    if eta == 0:
        return TransferMatrix(g.copy(), 0.0, 1)
    n = g.shape[0]
    power = eta * _dense(G_star)     # (eta G*)^m
    partial = np.eye(n)              # sum_{k < m} (eta G*)^k
    terms = 1
    while (1.0 - eta) * np.abs(power).sum(axis=0).max() >= tol:
        partial = partial + power @ partial
        power = power @ power
        terms *= 2
    return TransferMatrix((1.0 - eta) * (partial @ g), eta, terms)


def reduced_transfer(T, registry: Registry, country=None) -> np.ndarray:
    """``R[s, s'] = sum_c T[(c, s), (c', s')]`` for source country ``c'``.

    With ``country=None`` returns the unweighted mean over all source countries.
    """
    t = T.T if isinstance(T, TransferMatrix) else np.asarray(T, dtype=float)
    nc, ns = registry.n_countries, registry.n_sectors
    blocks = t.reshape(nc, ns, nc, ns).sum(axis=0)      # [s, c', s']
    if country is None:
        return blocks.sum(axis=1) / nc
    cid = registry.country_id(country)
    return blocks[:, cid - 1, :].copy()


def transform_vector(R: np.ndarray, sector, registry: Registry | None = None) -> np.ndarray:
    """Column ``s'`` of a reduced transfer matrix: how sector ``s'`` spreads over all sectors."""
    sid = registry.sector_id(sector) if registry is not None else int(sector)
    if not 1 <= sid <= R.shape[1]:
        raise IndexError(f"sector id {sid} out of range")
    return R[:, sid - 1].copy()


def raw_m_transform(tensor: MoneyTensor, country, sector) -> np.ma.MaskedArray:
    """One-hop baseline: normalized outflow of source ``(c', s')`` summed over destination countries.

    No dangling replacement; a source with no outflow gives a fully masked profile.
    """
    reg = tensor.registry
    cid, sid = reg.country_id(country), reg.sector_id(sector)
    col = tensor.values[:, cid - 1, :, sid - 1].sum(axis=0)
    total = col.sum()
    if total == 0:
        return np.ma.masked_all(reg.n_sectors)
    return np.ma.masked_array(col / total, mask=np.zeros(reg.n_sectors, dtype=bool))
