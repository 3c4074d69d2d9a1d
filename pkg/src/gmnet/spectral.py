"""Full dense spectrum of G / G*, inverse participation ratios and eigenstate reports."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import SpectralError
from .google_core import GoogleMatrix
from .net_model import Registry

MAX_DENSE_N = 10_000


def ipr(psi) -> float:
    """Inverse participation ratio ``(sum |psi|^2)^2 / sum |psi|^4``."""
    a2 = np.abs(np.asarray(psi)) ** 2
    den = np.sum(a2 ** 2)
    if den == 0:
        raise ValueError("IPR of a zero vector is undefined")
    return float(np.sum(a2) ** 2 / den)


def _fix_phase(vecs: np.ndarray) -> np.ndarray:
    """Unit 2-norm columns with the largest-magnitude component real positive."""
    vecs = vecs / np.linalg.norm(vecs, axis=0)
    lead = vecs[np.argmax(np.abs(vecs), axis=0), np.arange(vecs.shape[1])]
    return vecs * (np.abs(lead) / lead)


def _spectral_order(lam: np.ndarray) -> np.ndarray:
    # |lambda| descending, then Re descending, then Im ascending; rounding keeps
    # conjugate pairs and float-noise ties together
    mag = np.round(np.abs(lam), 12)
    re = np.round(lam.real, 12)
    im = np.round(lam.imag, 12)
    return np.lexsort((im, -re, -mag))


@dataclass(frozen=True, eq=False)
class SpectrumResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray      # columns, sum |psi|^2 = 1
    alpha: float
    direction: str
    matrix: np.ndarray | None = None

    @cached_property
    def ipr(self) -> np.ndarray:
        a2 = np.abs(self.eigenvectors) ** 2
        return a2.sum(axis=0) ** 2 / (a2 ** 2).sum(axis=0)

    def residuals(self) -> np.ndarray:
        """``||G psi - lambda psi||_2 / ||psi||_2`` for every pair."""
        if self.matrix is None:
            raise ValueError("matrix was not kept")
        r = self.matrix @ self.eigenvectors - self.eigenvectors * self.eigenvalues
        return np.linalg.norm(r, axis=0) / np.linalg.norm(self.eigenvectors, axis=0)

    def display_vector(self, k: int) -> np.ndarray:
        """Eigenvector ``k`` rescaled so that ``sum |psi| = 1``."""
        v = self.eigenvectors[:, k]
        return v / np.abs(v).sum()

    def gap(self) -> float:
        """``1 - |lambda_2|``."""
        return float(1.0 - np.abs(self.eigenvalues[1]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "re", "im", "abs", "ipr"])
        for k, (lam, xi) in enumerate(zip(self.eigenvalues, self.ipr), 1):
            w.writerow([k, repr(float(lam.real)), repr(float(lam.imag)), repr(float(abs(lam))), repr(float(xi))])
        return buf.getvalue()


def full_spectrum(G, alpha: float | None = None, direction: str | None = None,
                  keep_matrix: bool = True) -> SpectrumResult:
    """All eigenpairs of ``G`` (a :class:`GoogleMatrix` or a dense array) by dense decomposition."""
    if isinstance(G, GoogleMatrix):
        alpha = G.alpha if alpha is None else alpha
        if alpha != G.alpha:
            G = GoogleMatrix(G.S, alpha, G.v, G.direction)
        direction = direction or G.direction
        dense = G.dense()
    else:
        dense = np.asarray(G, dtype=float)
    n = dense.shape[0]
    if n > MAX_DENSE_N:
        raise SpectralError(f"N = {n} exceeds the dense-decomposition guard {MAX_DENSE_N}")
    try:
        lam, vecs = np.linalg.eig(dense)
    except np.linalg.LinAlgError as exc:
        raise SpectralError(f"eigendecomposition failed ({exc}); "
                            f"N = {n}, max |entry| = {np.abs(dense).max():.3e}, "
                            f"finite = {bool(np.all(np.isfinite(dense)))}") from exc
    lam = lam.astype(complex)
    vecs = vecs.astype(complex)
    order = _spectral_order(lam)
    return SpectrumResult(lam[order], _fix_phase(vecs[:, order]), alpha, direction,
                          dense if keep_matrix else None)


@dataclass(frozen=True)
class EigenstateReport:
    index: int
    eigenvalue: complex
    ipr: float
    nodes: list        # 1-based node ids, largest amplitude first
    labels: list
    amplitudes: list   # |psi_i| under sum |psi| = 1

    def rows(self):
        return list(zip(range(1, len(self.nodes) + 1), self.amplitudes, self.labels))


def select_eigenvalue(spectrum: SpectrumResult, selector, tol: float = 5e-4) -> int:
    """Index from an int position or from the nearest eigenvalue within ``tol``."""
    if isinstance(selector, (int, np.integer)):
        if not 0 <= selector < spectrum.eigenvalues.size:
            raise ValueError(f"eigenvalue index {selector} out of range")
        return int(selector)
    dist = np.abs(spectrum.eigenvalues - complex(selector))
    k = int(np.argmin(dist))
    if dist[k] > tol:
        raise ValueError(f"no eigenvalue within {tol} of {selector}")
    return k


def eigenstate_report(spectrum: SpectrumResult, selector, n: int = 10,
                      registry: Registry | None = None, tol: float = 5e-4) -> EigenstateReport:
    k = select_eigenvalue(spectrum, selector, tol)
    amp = np.abs(spectrum.display_vector(k))
    order = np.argsort(-amp, kind="stable")[:n]
    labels = [registry.node_label(int(i) + 1) if registry else str(int(i) + 1) for i in order]
    return EigenstateReport(k, complex(spectrum.eigenvalues[k]), float(spectrum.ipr[k]),
                            [int(i) + 1 for i in order], labels, [float(a) for a in amp[order]])
