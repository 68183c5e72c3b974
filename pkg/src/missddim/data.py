"""Tabular ingestion: schema inference, encoding, missingness simulation, splits.

Raw cells are kept as typed Python objects (``float`` for continuous columns,
canonical ``str`` for categorical ones, ``None`` when missing). The model works
on an encoded real matrix: continuous columns are standardized, categorical
columns become one-hot blocks.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import NumericError, ParameterError, SchemaError

MISSING_TOKENS = ("", "na", "nan", "?")
CATEGORICAL_MAX_DISTINCT = 20
CONTINUOUS, CATEGORICAL = "continuous", "categorical"


def is_missing(cell, missing_tokens: Iterable[str] = MISSING_TOKENS) -> bool:
    if cell is None:
        return True
    if isinstance(cell, float):
        return math.isnan(cell)
    return str(cell).strip().lower() in missing_tokens


def _as_float(cell) -> float | None:
    try:
        v = float(cell)
    except (TypeError, ValueError):
        return None
    return v if math.isfinite(v) else None


def canonical_category(cell) -> str:
    """Integer-valued numbers collapse to their integer spelling (``"2.0"`` -> ``"2"``)."""
    v = _as_float(cell)
    if v is not None and v.is_integer():
        return str(int(v))
    return str(cell).strip()


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    categories: tuple[str, ...] = ()
    mean: float | None = None
    std: float | None = None

    @property
    def width(self) -> int:
        return len(self.categories) if self.kind == CATEGORICAL else 1

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.kind == CATEGORICAL:
            d["categories"] = list(self.categories)
        else:
            d["mean"], d["std"] = self.mean, self.std
        return d


@dataclass(frozen=True)
class Schema:
    """Per-column kinds and statistics plus the encoded-column layout."""

    columns: tuple[ColumnSpec, ...]
    offsets: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        offs, pos = [], 0
        for c in self.columns:
            if c.kind == CATEGORICAL:
                if len(set(c.categories)) != len(c.categories):
                    raise SchemaError(f"column {c.name!r}: duplicate categories")
                if not c.categories:
                    raise SchemaError(f"column {c.name!r}: no categories")
            elif c.kind == CONTINUOUS:
                if c.std is None or not c.std > 0:
                    raise SchemaError(f"column {c.name!r}: std must be > 0 (constant column?)")
            else:
                raise SchemaError(f"column {c.name!r}: unknown kind {c.kind!r}")
            offs.append(pos)
            pos += c.width
        object.__setattr__(self, "offsets", tuple(offs))

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def d_raw(self) -> int:
        return len(self.columns)

    @property
    def d_enc(self) -> int:
        return sum(c.width for c in self.columns)

    def slice_of(self, j: int) -> slice:
        return slice(self.offsets[j], self.offsets[j] + self.columns[j].width)

    def encoded_owner(self) -> np.ndarray:
        """Raw column index of every encoded column."""
        return np.repeat(np.arange(self.d_raw), [c.width for c in self.columns])

    def continuous_mask(self) -> np.ndarray:
        """Boolean over encoded columns: True where the column is continuous."""
        kinds = np.array([c.kind == CONTINUOUS for c in self.columns])
        return kinds[self.encoded_owner()]

    def expand(self, raw_mask: np.ndarray) -> np.ndarray:
        """Broadcast a ``(..., d_raw)`` mask onto the encoded layout."""
        return np.asarray(raw_mask)[..., self.encoded_owner()]

    def to_dict(self) -> dict:
        return {"columns": [c.to_dict() for c in self.columns]}

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        cols = []
        for c in d["columns"]:
            if c["kind"] == CATEGORICAL:
                cols.append(ColumnSpec(c["name"], CATEGORICAL, tuple(c["categories"])))
            else:
                cols.append(ColumnSpec(c["name"], CONTINUOUS, mean=float(c["mean"]), std=float(c["std"])))
        return cls(tuple(cols))

    @property
    def schema_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _rows_and_header(csv_rows) -> tuple[list[str], list[list]]:
    if hasattr(csv_rows, "columns") and hasattr(csv_rows, "itertuples"):
        header = [str(c) for c in csv_rows.columns]
        return header, [list(r) for r in csv_rows.itertuples(index=False, name=None)]
    rows = [list(r) for r in csv_rows]
    if not rows:
        raise SchemaError("no header row")
    return [str(h) for h in rows[0]], rows[1:]


def _column_stats(observed: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(observed, dtype=np.float64)
    mean = float(arr.mean())
    return mean, float(np.sqrt(np.mean((arr - mean) ** 2)))


def infer_schema(csv_rows, declared_types: dict[str, str] | None = None,
                 missing_tokens: Iterable[str] = MISSING_TOKENS,
                 max_distinct: int = CATEGORICAL_MAX_DISTINCT) -> Schema:
    """Infer column kinds and statistics from a header + rows table.

    ``csv_rows`` is either a list of rows whose first row is the header or a
    pandas DataFrame. A column is categorical if any observed cell is
    non-numeric, or if it holds at most ``max_distinct`` distinct integer
    values; ``declared_types`` (column name -> kind) overrides the rule.
    """
    header, rows = _rows_and_header(csv_rows)
    if len(rows) < 2:
        raise SchemaError(f"need at least 2 data rows, got {len(rows)}")
    declared = dict(declared_types or {})
    unknown = set(declared) - set(header)
    if unknown:
        raise SchemaError(f"declared types for unknown columns: {sorted(unknown)}")
    tokens = tuple(t.lower() for t in missing_tokens)
    cols = []
    for j, name in enumerate(header):
        cells = [r[j] for r in rows if not is_missing(r[j], tokens)]
        if not cells:
            raise SchemaError(f"column {name!r} has no observed values")
        nums = [_as_float(c) for c in cells]
        kind = declared.get(name)
        if kind is None:
            if any(v is None for v in nums):
                kind = CATEGORICAL
            else:
                distinct = set(nums)
                kind = (CATEGORICAL if len(distinct) <= max_distinct
                        and all(v.is_integer() for v in distinct) else CONTINUOUS)
        if kind == CATEGORICAL:
            cats = list(dict.fromkeys(canonical_category(c) for c in cells))
            cols.append(ColumnSpec(name, CATEGORICAL, tuple(cats)))
        elif kind == CONTINUOUS:
            bad = [c for c, v in zip(cells, nums) if v is None]
            if bad:
                raise SchemaError(f"column {name!r} declared continuous but holds {bad[0]!r}")
            mean, std = _column_stats(nums)
            if not std > 0:
                raise SchemaError(f"continuous column {name!r} is constant")
            cols.append(ColumnSpec(name, CONTINUOUS, mean=mean, std=std))
        else:
            raise SchemaError(f"column {name!r}: unknown kind {kind!r}")
    return Schema(tuple(cols))


def parse_cell(cell, spec: ColumnSpec, missing_tokens: Iterable[str] = MISSING_TOKENS):
    """Typed value of a raw cell (``None`` if missing)."""
    if is_missing(cell, missing_tokens):
        return None
    if spec.kind == CONTINUOUS:
        v = _as_float(cell)
        if v is None:
            raise SchemaError(f"column {spec.name!r}: non-numeric value {cell!r}")
        return v
    return canonical_category(cell)


def encode(row: Sequence, schema: Schema) -> tuple[np.ndarray, np.ndarray]:
    """Encode one raw row. Returns ``(values, mask)``, mask 1 where observed."""
    if len(row) != schema.d_raw:
        raise SchemaError(f"row has {len(row)} cells, schema has {schema.d_raw} columns")
    vec = np.zeros(schema.d_enc)
    mask = np.zeros(schema.d_enc)
    for j, (cell, spec) in enumerate(zip(row, schema.columns)):
        v = parse_cell(cell, spec)
        if v is None:
            continue
        sl = schema.slice_of(j)
        if spec.kind == CONTINUOUS:
            vec[sl] = (v - spec.mean) / spec.std
        else:
            try:
                k = spec.categories.index(v)
            except ValueError:
                raise SchemaError(f"column {spec.name!r}: unseen category {v!r}") from None
            vec[sl.start + k] = 1.0
        mask[sl] = 1.0
    return vec, mask


def decode(vec: np.ndarray, schema: Schema) -> list:
    """Map an encoded vector back to typed raw values (argmax for categories)."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (schema.d_enc,):
        raise SchemaError(f"expected encoded length {schema.d_enc}, got {vec.shape}")
    if not np.isfinite(vec).all():
        raise NumericError("cannot decode non-finite encoded values")
    out = []
    for j, spec in enumerate(schema.columns):
        block = vec[schema.slice_of(j)]
        if spec.kind == CONTINUOUS:
            out.append(float(block[0] * spec.std + spec.mean))
        else:
            out.append(spec.categories[int(np.argmax(block))])
    return out


def encode_matrix(values: np.ndarray, schema: Schema,
                  allow_unseen: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`encode` over an object array of typed values.

    Cells flagged in ``allow_unseen`` may hold categories missing from the
    schema; they encode as an all-zero block instead of raising.
    """
    n = values.shape[0]
    enc = np.zeros((n, schema.d_enc))
    mask = np.zeros((n, schema.d_enc))
    for j, spec in enumerate(schema.columns):
        col = values[:, j]
        present = np.array([v is not None for v in col], dtype=bool)
        sl = schema.slice_of(j)
        if spec.kind == CONTINUOUS:
            x = np.array([v if v is not None else np.nan for v in col], dtype=np.float64)
            enc[present, sl.start] = (x[present] - spec.mean) / spec.std
        else:
            lookup = {c: k for k, c in enumerate(spec.categories)}
            for i in np.flatnonzero(present):
                k = lookup.get(col[i])
                if k is None:
                    if allow_unseen is not None and allow_unseen[i, j]:
                        continue
                    raise SchemaError(f"column {spec.name!r}: unseen category {col[i]!r}")
                enc[i, sl.start + k] = 1.0
        mask[present, sl] = 1.0
    return enc, mask


def decode_matrix(enc: np.ndarray, schema: Schema) -> np.ndarray:
    """Vectorized :func:`decode`; returns an object array of typed values."""
    enc = np.asarray(enc, dtype=np.float64)
    if not np.isfinite(enc).all():
        raise NumericError("cannot decode non-finite encoded values")
    out = np.empty((enc.shape[0], schema.d_raw), dtype=object)
    for j, spec in enumerate(schema.columns):
        block = enc[:, schema.slice_of(j)]
        if spec.kind == CONTINUOUS:
            out[:, j] = (block[:, 0] * spec.std + spec.mean).tolist()
        else:
            cats = np.array(spec.categories, dtype=object)
            out[:, j] = cats[np.argmax(block, axis=1)]
    return out


@dataclass
class TabularDataset:
    """Typed cells with native and simulated missingness masks.

    ``values`` holds every originally observed cell, including cells hidden by
    simulation (their ground truth); natively missing cells are ``None``.
    """

    schema: Schema
    values: np.ndarray
    native_missing: np.ndarray
    simulated_missing: np.ndarray
    row_ids: np.ndarray

    def __post_init__(self):
        n, d = self.values.shape
        if d != self.schema.d_raw:
            raise SchemaError(f"dataset has {d} columns, schema has {self.schema.d_raw}")
        self.native_missing = np.asarray(self.native_missing, dtype=bool)
        self.simulated_missing = np.asarray(self.simulated_missing, dtype=bool)
        if np.any(self.native_missing & self.simulated_missing):
            raise SchemaError("simulated missingness overlaps native missingness")
        # hidden ground truth may use a category the visible data never shows
        self.complete_encoded, _ = encode_matrix(self.values, self.schema,
                                                 allow_unseen=self.simulated_missing)
        self.complete_encoded.setflags(write=False)

    @classmethod
    def from_rows(cls, csv_rows, schema: Schema | None = None,
                  declared_types: dict[str, str] | None = None,
                  missing_tokens: Iterable[str] = MISSING_TOKENS) -> "TabularDataset":
        header, rows = _rows_and_header(csv_rows)
        if schema is None:
            schema = infer_schema([header] + rows, declared_types, missing_tokens)
        elif header != schema.names:
            raise SchemaError(f"header {header} does not match schema columns {schema.names}")
        values = np.empty((len(rows), len(header)), dtype=object)
        for i, r in enumerate(rows):
            if len(r) != len(header):
                raise SchemaError(f"row {i} has {len(r)} cells, header has {len(header)}")
            for j, spec in enumerate(schema.columns):
                values[i, j] = parse_cell(r[j], spec, missing_tokens)
        native = np.vectorize(lambda v: v is None, otypes=[bool])(values) if len(rows) else \
            np.zeros((0, len(header)), dtype=bool)
        return cls(schema, values, native, np.zeros_like(native), np.arange(len(rows)))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def observed(self) -> np.ndarray:
        """Raw cells visible to an imputer."""
        return ~(self.native_missing | self.simulated_missing)

    @property
    def observed_encoded(self) -> np.ndarray:
        return self.schema.expand(self.observed).astype(np.float64)

    @property
    def encoded(self) -> np.ndarray:
        """Encoded matrix with every hidden cell zeroed."""
        return self.complete_encoded * self.observed_encoded

    @property
    def ground_truth(self) -> np.ndarray:
        out = np.full(self.values.shape, None, dtype=object)
        out[self.simulated_missing] = self.values[self.simulated_missing]
        return out

    def visible_values(self) -> np.ndarray:
        out = self.values.copy()
        out[~self.observed] = None
        return out

    def subset(self, idx) -> "TabularDataset":
        idx = np.asarray(idx)
        return TabularDataset(self.schema, self.values[idx], self.native_missing[idx],
                              self.simulated_missing[idx], self.row_ids[idx])

    def with_schema(self, schema: Schema) -> "TabularDataset":
        return TabularDataset(schema, self.values, self.native_missing,
                              self.simulated_missing, self.row_ids)


def refit_statistics(dataset: TabularDataset) -> Schema:
    """Recompute continuous mean/std from the cells currently visible in ``dataset``.

    Column kinds and category lists are kept.
    """
    cols = []
    obs = dataset.observed
    for j, spec in enumerate(dataset.schema.columns):
        if spec.kind == CATEGORICAL:
            cols.append(spec)
            continue
        cells = [v for v, o in zip(dataset.values[:, j], obs[:, j]) if o]
        if not cells:
            raise SchemaError(f"column {spec.name!r} has no observed values in this fold")
        mean, std = _column_stats(cells)
        if not std > 0:
            raise SchemaError(f"continuous column {spec.name!r} is constant in this fold")
        cols.append(replace(spec, mean=mean, std=std))
    return Schema(tuple(cols))


def simulate_mcar(dataset: TabularDataset, rate: float, seed: int,
                  columns: Sequence[str] | None = None) -> TabularDataset:
    """Hide each currently observed cell independently with probability ``rate``.

    ``columns`` restricts masking to the named columns. A row never loses all
    of its observed cells: if it would, one of them (chosen uniformly) is
    kept. The schema is left unchanged.
    """
    if not 0.0 < rate < 1.0:
        raise ParameterError(f"rate must be in (0, 1), got {rate}")
    rng = np.random.default_rng(seed)
    observed = dataset.observed
    eligible = observed.copy()
    if columns is not None:
        unknown = set(columns) - set(dataset.schema.names)
        if unknown:
            raise ParameterError(f"unknown columns {sorted(unknown)}")
        eligible[:, [n not in columns for n in dataset.schema.names]] = False
    hide = (rng.random(eligible.shape) < rate) & eligible
    emptied = np.flatnonzero(observed.any(axis=1) & ~(observed & ~hide).any(axis=1))
    for i in emptied:
        keep = rng.choice(np.flatnonzero(observed[i]))
        hide[i, keep] = False
    return TabularDataset(dataset.schema, dataset.values, dataset.native_missing,
                          dataset.simulated_missing | hide, dataset.row_ids)


def split(dataset: TabularDataset, test_fraction: float = 0.2,
          seed: int = 0) -> tuple[TabularDataset, TabularDataset]:
    """Uniform row split; continuous statistics are refit on the training fold."""
    if not 0.0 < test_fraction < 1.0:
        raise ParameterError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n_test = int(round(dataset.n * test_fraction))
    if n_test < 2 or dataset.n - n_test < 2:
        raise ParameterError(f"split of {dataset.n} rows leaves a fold with fewer than 2 rows")
    perm = np.random.default_rng(seed).permutation(dataset.n)
    test_idx, train_idx = np.sort(perm[:n_test]), np.sort(perm[n_test:])
    train = dataset.subset(train_idx)
    schema = refit_statistics(train)
    return train.with_schema(schema), dataset.subset(test_idx).with_schema(schema)


# -- file I/O ---------------------------------------------------------------

def format_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def read_csv(path) -> list[list[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [row for row in csv.reader(fh)]


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([format_cell(v) for v in r])


def load_dataset(path, schema: Schema | None = None, truth_path=None, mask_path=None,
                 declared_types: dict[str, str] | None = None,
                 missing_tokens: Iterable[str] = MISSING_TOKENS) -> TabularDataset:
    """Read a CSV, optionally restoring simulated cells from sidecar files."""
    ds = TabularDataset.from_rows(read_csv(path), schema, declared_types, missing_tokens)
    if truth_path is None:
        return ds
    names = ds.schema.names
    values = ds.values.copy()
    simulated = np.zeros_like(ds.native_missing)
    for r in read_csv(truth_path)[1:]:
        i, j = int(r[0]), names.index(r[1])
        values[i, j] = parse_cell(r[2], ds.schema.columns[j], missing_tokens)
        simulated[i, j] = True
    if mask_path is not None:
        for r in read_csv(mask_path)[1:]:
            if r[2] == "simulated" and not simulated[int(r[0]), names.index(r[1])]:
                raise SchemaError(f"mask sidecar cell ({r[0]}, {r[1]}) has no ground truth")
    return TabularDataset(ds.schema, values, ds.native_missing & ~simulated, simulated, ds.row_ids)


def write_masked(dataset: TabularDataset, out_dir) -> dict[str, Path]:
    """Write ``masked.csv`` plus ``truth.csv`` and ``mask.csv`` sidecars."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = dataset.schema.names
    paths = {"masked": out_dir / "masked.csv", "truth": out_dir / "truth.csv",
             "mask": out_dir / "mask.csv"}
    write_csv(paths["masked"], names, dataset.visible_values())
    truth_rows, mask_rows = [], []
    for i, j in zip(*np.nonzero(dataset.native_missing | dataset.simulated_missing)):
        status = "simulated" if dataset.simulated_missing[i, j] else "native"
        mask_rows.append((int(i), names[j], status))
        if status == "simulated":
            truth_rows.append((int(i), names[j], dataset.values[i, j]))
    write_csv(paths["truth"], ["row_index", "column_name", "value"], truth_rows)
    write_csv(paths["mask"], ["row_index", "column_name", "status"], mask_rows)
    return paths
