"""Mixed-type dataset ingestion and latent-interval construction.

Columns of continuous, binary, ordinal, or count type are tied to a latent
standard-normal scale through the rescaled empirical CDF

    F(y) = #{y_i <= y} / (n + 1),

which stays strictly inside (0, 1) so that normal quantiles are always
finite.  Discrete levels turn into threshold intervals on the latent scale,
continuous observations into normal scores, and every cell of a dataset
receives an interval (lower, upper], degenerate when the cell pins its
latent coordinate exactly.  Missing cells get (-inf, +inf) and are treated
as missing completely at random.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import IO, Sequence, Union

import numpy as np
from scipy.special import ndtri


class DataError(ValueError):
    """A dataset, schema, or column violates its contract."""


class VariableKind(str, Enum):
    CONTINUOUS = "continuous"
    BINARY = "binary"
    ORDINAL = "ordinal"
    COUNT = "count"

    @property
    def is_discrete(self) -> bool:
        return self is not VariableKind.CONTINUOUS


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: VariableKind


@dataclass
class MixedDataset:
    """Numeric data matrix plus per-column type tags.

    ``values`` is an (n, p) float array; discrete columns hold their numeric
    level codes.  Missing cells are flagged in ``missing`` and carry NaN in
    ``values``.  Validation runs on construction.
    """

    values: np.ndarray
    missing: np.ndarray
    schema: tuple[ColumnSpec, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        missing = np.asarray(self.missing, dtype=bool)
        if values.ndim != 2:
            raise DataError("values must be a 2-d array")
        if missing.shape != values.shape:
            raise DataError("missing mask shape does not match values")
        schema = tuple(self.schema)
        n, p = values.shape
        if p != len(schema):
            raise DataError(f"schema lists {len(schema)} columns, data has {p}")
        if n < 2:
            raise DataError(f"need at least 2 rows, got {n}")
        if p < 1:
            raise DataError("need at least 1 column")
        observed = ~missing
        if not np.all(np.isfinite(values[observed])):
            raise DataError("non-missing cells must be finite")
        values = values.copy()
        values[missing] = np.nan
        for j, spec in enumerate(schema):
            col_obs = observed[:, j]
            if not col_obs.any():
                raise DataError(f"column '{spec.name}' is entirely missing")
            if spec.kind is VariableKind.BINARY:
                levels = np.unique(values[col_obs, j])
                if levels.size > 2:
                    raise DataError(
                        f"binary column '{spec.name}' has {levels.size} distinct levels"
                    )
        self.values = values
        self.missing = missing
        self.schema = schema

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(spec.name for spec in self.schema)

    @property
    def kinds(self) -> tuple[VariableKind, ...]:
        return tuple(spec.kind for spec in self.schema)

    def column(self, j: int) -> np.ndarray:
        """Non-missing values of column j."""
        return self.values[~self.missing[:, j], j]


@dataclass(frozen=True)
class Ecdf:
    """Rescaled empirical CDF of one column: F(y) = #{y_i <= y} / (n + 1).

    ``values`` are the sorted distinct observed values; ``cum_counts[k]``
    counts observations <= values[k].
    """

    values: np.ndarray
    cum_counts: np.ndarray
    n: int

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        idx = np.searchsorted(self.values, y, side="right")
        padded = np.concatenate(([0], self.cum_counts))
        out = padded[idx] / (self.n + 1)
        return out if out.ndim else float(out)


def rescaled_ecdf(column: np.ndarray) -> Ecdf:
    """Build the rescaled ECDF from one column, ignoring NaN cells."""
    col = np.asarray(column, dtype=float)
    col = col[~np.isnan(col)]
    if col.size == 0:
        raise DataError("cannot build an ECDF from an empty column")
    values, counts = np.unique(col, return_counts=True)
    return Ecdf(values=values, cum_counts=np.cumsum(counts), n=int(col.size))


def normal_scores(column: np.ndarray, ecdf: Ecdf | None = None) -> np.ndarray:
    """Normal scores z = Phi^-1(F(y)) for one column; NaN cells stay NaN.

    Ties share the same score because F is evaluated at the observed value.
    """
    col = np.asarray(column, dtype=float)
    if ecdf is None:
        ecdf = rescaled_ecdf(col)
    out = np.full(col.shape, np.nan)
    obs = ~np.isnan(col)
    out[obs] = ndtri(ecdf(col[obs]))
    return out


@dataclass(frozen=True)
class ThresholdSet:
    """Latent cutpoints for one discrete column.

    ``cuts`` has length n_levels + 1 with cuts[0] = -inf and cuts[-1] = +inf;
    level r (0-indexed) occupies the latent interval (cuts[r], cuts[r+1]].
    ``levels`` are the sorted distinct observed codes.
    """

    cuts: np.ndarray
    levels: np.ndarray

    def __post_init__(self):
        cuts = np.asarray(self.cuts, dtype=float)
        if not (np.isneginf(cuts[0]) and np.isposinf(cuts[-1])):
            raise DataError("outer thresholds must be -inf and +inf")
        if cuts.size >= 3 and not np.all(np.diff(cuts[1:-1]) > 0):
            raise DataError("interior thresholds must strictly increase")

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def level_index(self, value) -> np.ndarray:
        """Index of the level for each value (values must be observed codes)."""
        idx = np.searchsorted(self.levels, np.asarray(value, dtype=float))
        return np.minimum(idx, self.n_levels - 1)

    def interval_for(self, value):
        """Latent interval (lower, upper] of the level holding ``value``."""
        r = self.level_index(value)
        return self.cuts[r], self.cuts[r + 1]

    def level_of_latent(self, z) -> np.ndarray:
        """Map latent draws back to level codes (inverse of interval_for)."""
        interior = self.cuts[1:-1]
        idx = np.searchsorted(interior, np.asarray(z, dtype=float), side="left")
        return self.levels[np.minimum(idx, self.n_levels - 1)]


def ordinal_thresholds(column: np.ndarray, ecdf: Ecdf | None = None) -> ThresholdSet:
    """Estimate latent thresholds for a discrete column.

    Interior cut after level r sits at Phi^-1(F(c_r)); the outer cuts are
    +-inf.  A single-level column still gets one finite cut so its cell
    interval stays informative rather than collapsing to (-inf, +inf).
    """
    col = np.asarray(column, dtype=float)
    if ecdf is None:
        ecdf = rescaled_ecdf(col)
    levels = ecdf.values
    if levels.size == 1:
        interior = ndtri(np.array([ecdf.n / (ecdf.n + 1)]))
    else:
        interior = ndtri(ecdf(levels[:-1]))
    cuts = np.concatenate(([-np.inf], interior, [np.inf]))
    return ThresholdSet(cuts=cuts, levels=levels)


@dataclass
class IntervalBounds:
    """Per-cell latent intervals (lower, upper] for a dataset.

    ``degenerate`` marks cells whose latent coordinate is pinned to a point
    (lower == upper), which happens for observed continuous cells under the
    partitioned representation.
    """

    lower: np.ndarray
    upper: np.ndarray
    degenerate: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        degenerate = np.asarray(self.degenerate, dtype=bool)
        if lower.shape != upper.shape or lower.shape != degenerate.shape:
            raise DataError("bounds arrays must share one shape")
        ok = np.where(degenerate, lower == upper, lower < upper)
        if not np.all(ok):
            raise DataError("need lower < upper (or == on degenerate cells)")
        self.lower, self.upper, self.degenerate = lower, upper, degenerate

    @property
    def n(self) -> int:
        return self.lower.shape[0]

    @property
    def p(self) -> int:
        return self.lower.shape[1]

    def row(self, i: int):
        return self.lower[i], self.upper[i], self.degenerate[i]


def _continuous_full_bounds(col: np.ndarray, ecdf: Ecdf):
    """Interval (a, b] consistent with the rank event for a continuous cell.

    a is the normal score of the largest distinct value below y (or -inf),
    b the score of y itself; tied cells share the same interval.
    """
    f_here = ecdf(col)
    upper = ndtri(f_here)
    idx = np.searchsorted(ecdf.values, col)  # position of y among distinct values
    padded = np.concatenate(([0], ecdf.cum_counts))
    f_prev = padded[idx] / (ecdf.n + 1)
    lower = np.where(idx == 0, -np.inf, ndtri(np.maximum(f_prev, 1e-300)))
    return lower, upper


def interval_bounds(dataset: MixedDataset, mode: str = "full") -> IntervalBounds:
    """Latent interval for every cell of the dataset.

    mode 'full': every observed cell gets a finite-probability interval
    (discrete cells from thresholds, continuous cells from the rank event).
    mode 'partitioned': observed continuous cells are degenerate at their
    normal scores; only discrete and missing cells remain intervals.
    """
    if mode not in ("full", "partitioned"):
        raise DataError(f"unknown bounds mode '{mode}'")
    n, p = dataset.n, dataset.p
    lower = np.full((n, p), -np.inf)
    upper = np.full((n, p), np.inf)
    degenerate = np.zeros((n, p), dtype=bool)
    for j, spec in enumerate(dataset.schema):
        obs = ~dataset.missing[:, j]
        col = dataset.values[obs, j]
        ecdf = rescaled_ecdf(col)
        if spec.kind.is_discrete:
            ts = ordinal_thresholds(col, ecdf)
            lo, hi = ts.interval_for(col)
            lower[obs, j] = lo
            upper[obs, j] = hi
        elif mode == "full":
            lo, hi = _continuous_full_bounds(col, ecdf)
            lower[obs, j] = lo
            upper[obs, j] = hi
        else:
            z = ndtri(ecdf(col))
            lower[obs, j] = z
            upper[obs, j] = z
            degenerate[obs, j] = True
    return IntervalBounds(lower=lower, upper=upper, degenerate=degenerate)


def dataset_normal_scores(dataset: MixedDataset) -> np.ndarray:
    """Normal scores for every column (NaN at missing cells)."""
    out = np.empty((dataset.n, dataset.p))
    for j in range(dataset.p):
        out[:, j] = normal_scores(dataset.values[:, j])
    return out


_KIND_LOOKUP = {k.value: k for k in VariableKind}

PathOrIO = Union[str, Path, IO[str]]


def _read_schema(source) -> tuple[str, list[ColumnSpec]]:
    if isinstance(source, dict):
        doc = source
    elif hasattr(source, "read"):
        doc = json.load(source)
    else:
        with open(source, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    if not isinstance(doc, dict) or "columns" not in doc:
        raise DataError("schema must be a JSON object with a 'columns' list")
    missing_token = doc.get("missing_token", "NA")
    specs = []
    for entry in doc["columns"]:
        try:
            name = entry["name"]
            kind = _KIND_LOOKUP[entry["kind"]]
        except (KeyError, TypeError) as exc:
            raise DataError(f"bad schema entry {entry!r}") from exc
        specs.append(ColumnSpec(name=name, kind=kind))
    if len({s.name for s in specs}) != len(specs):
        raise DataError("duplicate column names in schema")
    return missing_token, specs


def load_dataset(csv_source: PathOrIO, schema_source) -> MixedDataset:
    """Load a CSV (header row required) against a schema.

    The schema is a JSON document: {"missing_token": "NA", "columns":
    [{"name": ..., "kind": ...}, ...]}.  Missing cells must match the token
    exactly; columns are reordered to schema order.
    """
    missing_token, specs = _read_schema(schema_source)
    if hasattr(csv_source, "read"):
        rows = list(csv.reader(csv_source))
    else:
        with open(csv_source, "r", encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    if not rows:
        raise DataError("CSV file is empty")
    header, data_rows = rows[0], rows[1:]
    positions = {}
    for spec in specs:
        if spec.name not in header:
            raise DataError(f"unknown column '{spec.name}': not in CSV header")
        positions[spec.name] = header.index(spec.name)
    extra = set(header) - {s.name for s in specs}
    if extra:
        raise DataError(f"unknown column(s) in CSV not covered by schema: {sorted(extra)}")
    n, p = len(data_rows), len(specs)
    values = np.full((n, p), np.nan)
    missing = np.zeros((n, p), dtype=bool)
    for i, row in enumerate(data_rows):
        if len(row) != len(header):
            raise DataError(f"row {i + 2} has {len(row)} fields, header has {len(header)}")
        for j, spec in enumerate(specs):
            cell = row[positions[spec.name]]
            if cell == missing_token:
                missing[i, j] = True
                continue
            try:
                values[i, j] = float(cell)
            except ValueError as exc:
                raise DataError(
                    f"column '{spec.name}', row {i + 2}: cannot parse {cell!r} as a number"
                ) from exc
    return MixedDataset(values=values, missing=missing, schema=tuple(specs))
