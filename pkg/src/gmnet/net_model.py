"""Country/sector registries, node indexing and the money-transfer tensor.

The tensor is stored densely as ``values[c, c2, s, s2]``: the amount of money
flowing from country ``c2``, sector ``s2`` to country ``c``, sector ``s``
(0-based array positions; public ids are 1-based).  Flattening with
``i = s + (c - 1) * N_s`` gives the N x N flow matrix whose columns are
sources and rows are destinations.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

from .errors import IngestionError, ValidationError

TENSOR_HEADER = ("src_country", "src_sector", "dst_country", "dst_sector", "value")
REGISTRY_HEADER = ("id", "code", "name")


@dataclass(frozen=True)
class Entity:
    id: int
    code: str
    name: str


@dataclass(frozen=True)
class Registry:
    countries: tuple[Entity, ...]
    sectors: tuple[Entity, ...]

    def __post_init__(self):
        object.__setattr__(self, "countries", tuple(self.countries))
        object.__setattr__(self, "sectors", tuple(self.sectors))
        for label, items in (("country", self.countries), ("sector", self.sectors)):
            ids = [e.id for e in items]
            if ids != list(range(1, len(items) + 1)):
                raise ValidationError(f"{label} ids must be contiguous from 1, got {ids[:5]}...")
            codes = [e.code for e in items]
            if len(set(codes)) != len(codes):
                raise ValidationError(f"duplicate {label} codes")
        if len(self.countries) < 2:
            raise ValidationError("need at least two countries")
        if len(self.sectors) < 1:
            raise ValidationError("need at least one sector")

    @classmethod
    def from_codes(cls, country_codes: Sequence[str], sector_codes: Sequence[str]) -> "Registry":
        return cls(
            tuple(Entity(i, c, c) for i, c in enumerate(country_codes, 1)),
            tuple(Entity(i, s, s) for i, s in enumerate(sector_codes, 1)),
        )

    @property
    def n_countries(self) -> int:
        return len(self.countries)

    @property
    def n_sectors(self) -> int:
        return len(self.sectors)

    @property
    def n_nodes(self) -> int:
        return len(self.countries) * len(self.sectors)

    @cached_property
    def _country_ids(self) -> dict[str, int]:
        return {e.code: e.id for e in self.countries}

    @cached_property
    def _sector_ids(self) -> dict[str, int]:
        return {e.code: e.id for e in self.sectors}

    def country_id(self, code: str | int) -> int:
        """Resolve a country code (or pass through a valid id)."""
        if isinstance(code, (int, np.integer)):
            if not 1 <= code <= self.n_countries:
                raise IndexError(f"country id {code} out of range 1..{self.n_countries}")
            return int(code)
        try:
            return self._country_ids[code]
        except KeyError:
            raise KeyError(f"unknown country code {code!r}") from None

    def sector_id(self, code: str | int) -> int:
        if isinstance(code, (int, np.integer)):
            if not 1 <= code <= self.n_sectors:
                raise IndexError(f"sector id {code} out of range 1..{self.n_sectors}")
            return int(code)
        try:
            return self._sector_ids[code]
        except KeyError:
            raise KeyError(f"unknown sector code {code!r}") from None

    def node_label(self, i: int) -> str:
        c, s = node_of(i, self)
        return f"{self.countries[c - 1].code} {self.sectors[s - 1].code}"

    def digest(self) -> str:
        h = hashlib.sha256()
        for e in self.countries + self.sectors:
            h.update(f"{e.id}\x1f{e.code}\x1f{e.name}\x1e".encode())
        return h.hexdigest()


def node_index(c: int, s: int, registry: Registry) -> int:
    """1-based node id ``i = s + (c - 1) * N_s``."""
    if not 1 <= c <= registry.n_countries:
        raise IndexError(f"country id {c} out of range 1..{registry.n_countries}")
    if not 1 <= s <= registry.n_sectors:
        raise IndexError(f"sector id {s} out of range 1..{registry.n_sectors}")
    return s + (c - 1) * registry.n_sectors


def node_of(i: int, registry: Registry) -> tuple[int, int]:
    """Inverse of :func:`node_index`."""
    if not 1 <= i <= registry.n_nodes:
        raise IndexError(f"node id {i} out of range 1..{registry.n_nodes}")
    c, s = divmod(i - 1, registry.n_sectors)
    return c + 1, s + 1


@dataclass(frozen=True, eq=False)
class MoneyTensor:
    """Immutable nonnegative flow tensor ``values[c, c_src, s, s_src]``.

    Intra-country cells are zeroed on construction unless ``keep_intra`` is set.
    """

    registry: Registry
    values: np.ndarray
    year: int | None = None
    dropped_intra: float = 0.0
    keep_intra: bool = False

    def __post_init__(self):
        nc, ns = self.registry.n_countries, self.registry.n_sectors
        arr = np.array(self.values, dtype=float, copy=True)
        if arr.shape != (nc, nc, ns, ns):
            raise ValidationError(f"tensor shape {arr.shape} does not match registry {(nc, nc, ns, ns)}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("tensor contains non-finite values")
        if np.any(arr < 0):
            raise ValidationError("tensor contains negative values")
        if not self.keep_intra:
            idx = np.arange(nc)
            arr[idx, idx] = 0.0
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @classmethod
    def from_matrix(cls, registry: Registry, matrix: np.ndarray, **kwargs) -> "MoneyTensor":
        """Build from an N x N flow matrix (rows destination nodes, columns source nodes)."""
        nc, ns = registry.n_countries, registry.n_sectors
        a = np.asarray(matrix, dtype=float)
        if a.shape != (nc * ns, nc * ns):
            raise ValidationError(f"matrix shape {a.shape} does not match registry")
        return cls(registry, a.reshape(nc, ns, nc, ns).transpose(0, 2, 1, 3), **kwargs)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.values.shape

    @cached_property
    def matrix(self) -> np.ndarray:
        """N x N flow matrix; column ``i'`` holds the outflow of source node ``i'``."""
        n = self.registry.n_nodes
        a = np.ascontiguousarray(self.values.transpose(0, 2, 1, 3).reshape(n, n))
        a.setflags(write=False)
        return a

    @cached_property
    def total(self) -> float:
        return math.fsum(self.values.ravel())

    @cached_property
    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.registry.digest().encode())
        h.update(np.ascontiguousarray(self.values).tobytes())
        h.update(repr((self.year, self.keep_intra)).encode())
        return h.hexdigest()

    def with_values(self, values: np.ndarray) -> "MoneyTensor":
        return MoneyTensor(self.registry, values, year=self.year, keep_intra=self.keep_intra)


# ---------------------------------------------------------------------------
# Registry and tensor files
# ---------------------------------------------------------------------------

def _open_text(source):
    if isinstance(source, (str, os.PathLike)):
        return open(source, newline="", encoding="utf-8")
    return source


def load_entities(source) -> tuple[Entity, ...]:
    f = _open_text(source)
    try:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or [h.strip() for h in reader.fieldnames] != list(REGISTRY_HEADER):
            raise IngestionError(f"registry header must be {','.join(REGISTRY_HEADER)}")
        out = []
        for row in reader:
            try:
                out.append(Entity(int(row["id"]), row["code"].strip(), row["name"].strip()))
            except (TypeError, ValueError) as exc:
                raise IngestionError(f"bad registry row {row}: {exc}") from None
        return tuple(out)
    finally:
        if f is not source:
            f.close()


def load_registry(countries, sectors) -> Registry:
    return Registry(load_entities(countries), load_entities(sectors))


def tiva_registry() -> Registry:
    """The 58-country (57 + rest of world) by 37-sector TiVA registry."""
    pkg = resources.files("gmnet") / "data"
    with (pkg / "countries.csv").open(encoding="utf-8") as fc, (pkg / "sectors.csv").open(encoding="utf-8") as fs:
        return load_registry(fc, fs)


def format_entities(entities: Iterable[Entity]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REGISTRY_HEADER)
    for e in entities:
        w.writerow([e.id, e.code, e.name])
    return buf.getvalue()


def format_tensor(tensor: MoneyTensor) -> str:
    """Serialize nonzero cells, source-major order, values in round-trip repr."""
    reg = tensor.registry
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TENSOR_HEADER)
    v = tensor.values
    # iterate sources first so each source node's outflow is contiguous
    for c2, s2, c, s in zip(*np.nonzero(v.transpose(1, 3, 0, 2))):
        w.writerow([
            reg.countries[c2].code, reg.sectors[s2].code,
            reg.countries[c].code, reg.sectors[s].code,
            repr(float(v[c, c2, s, s2])),
        ])
    return buf.getvalue()


def write_tensor(tensor: MoneyTensor, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(format_tensor(tensor))


def write_registry(registry: Registry, countries_path, sectors_path) -> None:
    with open(countries_path, "w", newline="", encoding="utf-8") as f:
        f.write(format_entities(registry.countries))
    with open(sectors_path, "w", newline="", encoding="utf-8") as f:
        f.write(format_entities(registry.sectors))


def _records(source):
    """Yield (line_no, record tuple) from a path, text stream or iterable of records."""
    if isinstance(source, (str, os.PathLike)) or hasattr(source, "read"):
        f = _open_text(source)
        try:
            reader = csv.reader(f)
            header = next(reader, None)
            if header is None:
                return
            if tuple(h.strip() for h in header) != TENSOR_HEADER:
                raise IngestionError(f"tensor header must be {','.join(TENSOR_HEADER)}, got {header}")
            for n, row in enumerate(reader, start=2):
                if not row:
                    continue
                yield n, tuple(row)
        finally:
            if f is not source:
                f.close()
    else:
        for n, row in enumerate(source, start=1):
            if isinstance(row, dict):
                row = tuple(row[k] for k in TENSOR_HEADER)
            yield n, tuple(row)


def load_tensor(source, registry: Registry, *, keep_intra: bool = False, year: int | None = None) -> MoneyTensor:
    """Populate a dense tensor from ``(src_country, src_sector, dst_country, dst_sector, value)`` records.

    Intra-country records are dropped (their value summed into ``dropped_intra``)
    unless ``keep_intra`` is set.  Duplicate cells are an error.
    """
    nc, ns = registry.n_countries, registry.n_sectors
    values = np.zeros((nc, nc, ns, ns))
    seen = set()
    dropped = []
    for n, rec in _records(source):
        if len(rec) != 5:
            raise IngestionError(f"record {n}: expected 5 fields, got {len(rec)}: {rec!r}")
        sc, ss, dc, ds, raw = rec
        try:
            c2 = registry.country_id(str(sc).strip())
            s2 = registry.sector_id(str(ss).strip())
            c = registry.country_id(str(dc).strip())
            s = registry.sector_id(str(ds).strip())
        except KeyError as exc:
            raise IngestionError(f"record {n} {rec!r}: {exc.args[0]}") from None
        try:
            value = float(raw)
        except (TypeError, ValueError):
            raise IngestionError(f"record {n} {rec!r}: value is not a number") from None
        if not math.isfinite(value):
            raise ValidationError(f"record {n} {rec!r}: non-finite value")
        if value < 0:
            raise ValidationError(f"record {n} {rec!r}: negative value")
        key = (c, c2, s, s2)
        if key in seen:
            raise IngestionError(f"record {n} {rec!r}: duplicate cell")
        seen.add(key)
        if c == c2 and not keep_intra:
            dropped.append(value)
            continue
        values[c - 1, c2 - 1, s - 1, s2 - 1] = value
    return MoneyTensor(registry, values, year=year, dropped_intra=math.fsum(dropped), keep_intra=keep_intra)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass
class ValidationReport:
    total: float
    import_by_country: np.ndarray
    export_by_country: np.ndarray
    dangling_export: list[int] = field(default_factory=list)
    dangling_import: list[int] = field(default_factory=list)
    n_nan: int = 0
    n_negative: int = 0
    n_intra_nonzero: int = 0
    fatal: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.fatal

    def summary(self, registry: Registry | None = None) -> str:
        lines = [
            f"total value V = {self.total!r}",
            f"nodes without exports (dangling in forward S): {len(self.dangling_export)}",
            f"nodes without imports (dangling in reversed S*): {len(self.dangling_import)}",
            f"non-finite cells: {self.n_nan}; negative cells: {self.n_negative}; "
            f"nonzero intra-country cells: {self.n_intra_nonzero}",
        ]
        lines += [f"FATAL: {msg}" for msg in self.fatal]
        lines.append("status: " + ("ok" if self.ok else "invalid"))
        return "\n".join(lines)


def validate(tensor, registry: Registry | None = None) -> ValidationReport:
    """Report-only checks on a :class:`MoneyTensor` or a raw 4-index array."""
    if isinstance(tensor, MoneyTensor):
        registry = tensor.registry
        arr = np.asarray(tensor.values, dtype=float)
        keep_intra = tensor.keep_intra
    else:
        if registry is None:
            raise TypeError("registry is required for raw arrays")
        arr = np.asarray(tensor, dtype=float)
        keep_intra = False
    nc, ns = registry.n_countries, registry.n_sectors
    bad = ~np.isfinite(arr)
    n_nan = int(bad.sum())
    n_neg = int((arr[~bad] < 0).sum())
    clean = np.where(bad, 0.0, arr)
    n = nc * ns
    mat = clean.transpose(0, 2, 1, 3).reshape(n, n)
    imports = mat.sum(axis=1)
    exports = mat.sum(axis=0)
    idx = np.arange(nc)
    n_intra = int(np.count_nonzero(clean[idx, idx])) if not keep_intra else 0
    report = ValidationReport(
        total=math.fsum(clean.ravel()),
        import_by_country=imports.reshape(nc, ns).sum(axis=1),
        export_by_country=exports.reshape(nc, ns).sum(axis=1),
        dangling_export=[int(i) + 1 for i in np.flatnonzero(exports == 0)],
        dangling_import=[int(i) + 1 for i in np.flatnonzero(imports == 0)],
        n_nan=n_nan,
        n_negative=n_neg,
        n_intra_nonzero=n_intra,
    )
    if n_nan:
        report.fatal.append(f"{n_nan} non-finite cells")
    if n_neg:
        report.fatal.append(f"{n_neg} negative cells")
    if n_intra:
        report.fatal.append(f"{n_intra} nonzero intra-country cells")
    if not report.total > 0:
        report.fatal.append("total exchange value V is zero")
    return report


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

def synth_registry(n_countries: int, n_sectors: int) -> Registry:
    width_c = max(2, len(str(n_countries)))
    width_s = max(2, len(str(n_sectors)))
    return Registry(
        tuple(Entity(i, f"K{i:0{width_c}d}", f"Country {i}") for i in range(1, n_countries + 1)),
        tuple(Entity(i, f"S{i:0{width_s}d}", f"Sector {i}") for i in range(1, n_sectors + 1)),
    )


def synth_generate(n_countries: int, n_sectors: int, density: float = 0.5, seed: int = 0,
                   registry: Registry | None = None) -> MoneyTensor:
    """Random heavy-tailed flow tensor, a pure function of its arguments.

    Each off-diagonal cell is kept with probability ``density``; at low density
    some source nodes end up with no outflow (dangling) and that is intended.
    """
    if n_countries < 2:
        raise ValueError("n_countries must be >= 2")
    if not 0 < density <= 1:
        raise ValueError("density must be in (0, 1]")
    registry = registry or synth_registry(n_countries, n_sectors)
    rng = np.random.default_rng(seed)
    shape = (n_countries, n_countries, n_sectors, n_sectors)
    country_size = rng.lognormal(0.0, 1.0, n_countries)
    sector_size = rng.lognormal(0.0, 1.0, n_sectors)
    base = rng.lognormal(0.0, 1.0, shape)
    keep = rng.random(shape) < density
    values = (base * keep
              * country_size[None, :, None, None] * country_size[:, None, None, None] ** 0.5
              * sector_size[None, None, None, :] * sector_size[None, None, :, None] ** 0.5)
    return MoneyTensor(registry, values)
