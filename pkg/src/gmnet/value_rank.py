"""Import/export values, value-based rank vectors and reductions over countries or sectors."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DegenerateInputError
from .net_model import MoneyTensor, Registry

PAGERANK = "PageRank"
CHEIRANK = "CheiRank"
IMPORTRANK = "ImportRank"
EXPORTRANK = "ExportRank"


@dataclass(frozen=True)
class ValueTable:
    imports: np.ndarray   # V_cs, per node
    exports: np.ndarray   # V*_cs, per node
    total: float          # V


def import_export_values(tensor: MoneyTensor) -> ValueTable:
    m = tensor.matrix
    return ValueTable(imports=m.sum(axis=1), exports=m.sum(axis=0), total=tensor.total)


def rank_order(p) -> np.ndarray:
    """1-based rank of every entry: non-increasing probability, ties by ascending index."""
    p = np.asarray(p, dtype=float)
    if np.any(np.isnan(p)):
        raise ValueError("probability vector contains NaN")
    order = np.argsort(-p, kind="stable")
    ranks = np.empty(p.size, dtype=np.int64)
    ranks[order] = np.arange(1, p.size + 1)
    return ranks


@dataclass(frozen=True, eq=False)
class RankVector:
    """Probability vector with its induced ranking.

    ``scope`` is ``"node"``, ``"country"`` or ``"sector"``; ``info`` carries
    solver diagnostics when the vector came from an iteration.
    """

    p: np.ndarray
    kind: str
    scope: str = "node"
    info: dict = field(default_factory=dict)

    @cached_property
    def ranks(self) -> np.ndarray:
        return rank_order(self.p)

    @cached_property
    def order(self) -> np.ndarray:
        """0-based positions sorted by rank: ``order[K - 1]`` is the entity at rank K."""
        out = np.empty_like(self.ranks)
        out[self.ranks - 1] = np.arange(self.ranks.size)
        return out

    def sorted_p(self) -> np.ndarray:
        return self.p[self.order]

    def __len__(self):
        return self.p.size


def value_probabilities(values: ValueTable) -> tuple[RankVector, RankVector]:
    """ImportRank and ExportRank probabilities ``V_cs / V`` and ``V*_cs / V``."""
    if not values.total > 0:
        raise DegenerateInputError("total exchange value V is zero")
    return (RankVector(values.imports / values.total, IMPORTRANK),
            RankVector(values.exports / values.total, EXPORTRANK))


def _as_array(p):
    return p.p if isinstance(p, RankVector) else np.asarray(p, dtype=float)


def reduce_over_sectors(p, registry: Registry) -> RankVector:
    """Per-country probabilities ``P_c = sum_s P(c, s)``."""
    kind = p.kind if isinstance(p, RankVector) else ""
    arr = _as_array(p).reshape(registry.n_countries, registry.n_sectors)
    return RankVector(arr.sum(axis=1), kind, scope="country")


def reduce_over_countries(p, registry: Registry) -> RankVector:
    """Per-sector probabilities ``P_s = sum_c P(c, s)``."""
    kind = p.kind if isinstance(p, RankVector) else ""
    arr = _as_array(p).reshape(registry.n_countries, registry.n_sectors)
    return RankVector(arr.sum(axis=0), kind, scope="sector")


def sector_shares(values: ValueTable, registry: Registry) -> tuple[np.ndarray, np.ndarray]:
    """Fraction of global import and export value per sector."""
    imp = values.imports.reshape(registry.n_countries, registry.n_sectors).sum(axis=0)
    exp = values.exports.reshape(registry.n_countries, registry.n_sectors).sum(axis=0)
    return imp / values.total, exp / values.total


def format_rank_table(rv: RankVector, registry: Registry) -> str:
    """``rank,node,country_code,sector_code,probability`` rows in rank order."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    ns = registry.n_sectors
    if rv.scope == "node":
        w.writerow(["rank", "node", "country_code", "sector_code", "probability"])
        for k, pos in enumerate(rv.order, 1):
            c, s = divmod(int(pos), ns)
            w.writerow([k, pos + 1, registry.countries[c].code, registry.sectors[s].code, repr(float(rv.p[pos]))])
    else:
        ents = registry.countries if rv.scope == "country" else registry.sectors
        w.writerow(["rank", rv.scope, "code", "probability"])
        for k, pos in enumerate(rv.order, 1):
            w.writerow([k, pos + 1, ents[pos].code, repr(float(rv.p[pos]))])
    return buf.getvalue()


def total_mass(p) -> float:
    return math.fsum(_as_array(p))
