"""Flow matrices: build from call records, coarsen up the hierarchy, and
apply gravity normalization.

Matrices are dense numpy arrays ordered by the hierarchy's per-level unit
index (row = origin, column = destination). Raw matrices hold int64 counts;
normalized matrices hold float64 residual flow with an exactly-zero
diagonal.
"""

from __future__ import annotations

import array
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import MatrixKindError, ParseError, ReferentialError
from .ingest import FlowRecord
from .spatial import Level, SpatialHierarchy, pairwise_distance_matrix


class MatrixKind(enum.Enum):
    RAW = "raw"
    NORMALIZED = "normalized"


@dataclass
class FlowMatrix:
    """Square nonnegative flow matrix over the units of one spatial level."""

    level: Level
    kind: MatrixKind
    ids: tuple[str, ...]
    values: np.ndarray
    annotation: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values)
        n = len(self.ids)
        if self.values.shape != (n, n):
            raise ValueError(f"matrix shape {self.values.shape} != ({n}, {n})")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("matrix contains non-finite entries")
        if np.any(self.values < 0):
            raise ValueError("matrix contains negative entries")

    @property
    def n(self) -> int:
        return len(self.ids)

    def total(self):
        return self.values.sum()


def build_site_matrix(flows: Iterable[FlowRecord], h: SpatialHierarchy) -> FlowMatrix:
    """Aggregate call+text volume into the site-level origin/destination matrix.

    M[i, j] = total (calls + texts) from site i to site j over the whole
    input; self-flows land on the diagonal. Accumulation buffers compact
    index/volume arrays (8 bytes per record, not Python objects) and the
    counts are int64 (a year of national traffic overflows 32-bit).
    """
    index = {u: i for i, u in enumerate(h.ids(Level.SITE))}
    n = len(index)
    rows = array.array("q")
    cols = array.array("q")
    vols = array.array("q")
    rows_append, cols_append, vols_append = rows.append, cols.append, vols.append
    for rec in flows:
        try:
            i = index[rec.from_site]
        except KeyError:
            raise ReferentialError(f"unknown site id {rec.from_site!r}") from None
        try:
            j = index[rec.to_site]
        except KeyError:
            raise ReferentialError(f"unknown site id {rec.to_site!r}") from None
        rows_append(i)
        cols_append(j)
        vols_append(rec.calls + rec.texts)
    values = np.zeros((n, n), dtype=np.int64)
    if rows:
        np.add.at(values, (np.frombuffer(rows, dtype=np.int64),
                           np.frombuffer(cols, dtype=np.int64)),
                  np.frombuffer(vols, dtype=np.int64))
    return FlowMatrix(Level.SITE, MatrixKind.RAW, h.ids(Level.SITE), values)


def merge(a: FlowMatrix, b: FlowMatrix) -> FlowMatrix:
    """Entry-wise sum of two raw matrices built from disjoint input shards.

    Associative and commutative, so shard order does not matter.
    """
    if a.kind is not MatrixKind.RAW or b.kind is not MatrixKind.RAW:
        raise MatrixKindError("only raw matrices can be merged")
    if a.level is not b.level or a.ids != b.ids:
        raise ValueError("matrices cover different unit sets")
    return FlowMatrix(a.level, MatrixKind.RAW, a.ids, a.values + b.values,
                      dict(a.annotation))


def coarsen(m: FlowMatrix, h: SpatialHierarchy, target: Level) -> FlowMatrix:
    """Sum-preserving aggregation of a raw matrix to a coarser level.

    M_target[I, J] = sum over child units i in I, j in J of m[i, j].
    Composable: site->region equals site->arrondissement->region exactly.
    """
    if m.kind is not MatrixKind.RAW:
        raise MatrixKindError("cannot coarsen a normalized matrix (not sum-preserving)")
    if not target.coarser_than(m.level):
        raise ValueError(f"{target.value} is not coarser than {m.level.value}")
    parent = h.parent_index(m.level, target)
    n_out = h.n(target)
    # two-pass aggregation (rows then columns) beats a flat scatter-add
    row_agg = np.zeros((n_out, m.n), dtype=m.values.dtype)
    np.add.at(row_agg, parent, m.values)
    out = np.zeros((n_out, n_out), dtype=m.values.dtype)
    np.add.at(out.T, parent, row_agg.T)
    return FlowMatrix(target, MatrixKind.RAW, h.ids(target), out, dict(m.annotation))


def normalize_gravity(m: FlowMatrix, h: SpatialHierarchy, alpha: float = 1.0) -> FlowMatrix:
    """Divide out the gravity expectation: M_hat[i, j] = m[i, j] * d_ij**alpha / (n_i * n_j).

    n_i is the contained-site count of unit i and d_ij the great-circle
    distance between centroids. The diagonal is exactly zero (d_ii = 0).
    """
    if m.kind is not MatrixKind.RAW:
        raise MatrixKindError("input must be a raw matrix")
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    counts = h.site_counts(m.level).astype(np.float64)
    if np.any(counts == 0):
        bad = m.ids[int(np.argmin(counts))]
        raise ReferentialError(f"unit {bad!r} has zero contained sites")
    d = pairwise_distance_matrix(h, m.level)
    weights = d if alpha == 1.0 else d**alpha
    out = m.values.astype(np.float64) * weights / np.outer(counts, counts)
    np.fill_diagonal(out, 0.0)
    annotation = dict(m.annotation)
    annotation["alpha"] = alpha
    return FlowMatrix(m.level, MatrixKind.NORMALIZED, m.ids, out, annotation)


# ── serialization ────────────────────────────────────────────────────
# matrix.csv: "from_id,to_id,value" with zero entries omitted, rows sorted
# by (from_id, to_id); sidecar matrix.meta.json records level/kind/alpha.


def write_matrix_csv(m: FlowMatrix, path) -> None:
    path = Path(path)
    raw = m.kind is MatrixKind.RAW
    i_idx, j_idx = np.nonzero(m.values)
    vals = m.values[i_idx, j_idx]
    with open(path, "w", encoding="utf-8") as out:
        out.write("from_id,to_id,value\n")
        ids = m.ids
        if raw:
            out.writelines(
                f"{ids[i]},{ids[j]},{v}\n" for i, j, v in zip(i_idx, j_idx, vals)
            )
        else:
            out.writelines(
                f"{ids[i]},{ids[j]},{v!r}\n"
                for i, j, v in zip(i_idx, j_idx, (float(v) for v in vals))
            )
    meta = {
        "level": m.level.value,
        "kind": m.kind.value,
        "alpha": m.annotation.get("alpha"),
        "source": m.annotation.get("source"),
    }
    meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name.rsplit(".csv", 1)[0] + ".meta.json")


def read_matrix_csv(path, h: SpatialHierarchy) -> FlowMatrix:
    path = Path(path)
    meta = json.loads(meta_path(path).read_text(encoding="utf-8"))
    level = Level.parse(meta["level"])
    kind = MatrixKind(meta["kind"])
    ids = h.ids(level)
    index = {u: i for i, u in enumerate(ids)}
    dtype = np.int64 if kind is MatrixKind.RAW else np.float64
    values = np.zeros((len(ids), len(ids)), dtype=dtype)
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != "from_id,to_id,value":
            raise ParseError(f"bad matrix header {header!r}", line=1)
        for line_num, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise ParseError("expected 3 fields", line=line_num, field="row")
            try:
                i = index[parts[0]]
                j = index[parts[1]]
            except KeyError as e:
                raise ReferentialError(f"unknown {level.value} id {e.args[0]!r}") from None
            values[i, j] = int(parts[2]) if kind is MatrixKind.RAW else float(parts[2])
    annotation = {}
    if meta.get("alpha") is not None:
        annotation["alpha"] = meta["alpha"]
    if meta.get("source") is not None:
        annotation["source"] = meta["source"]
    return FlowMatrix(level, kind, ids, values, annotation)
