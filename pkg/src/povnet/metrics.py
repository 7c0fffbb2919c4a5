"""Per-node importance scores over flow matrices.

Six measures: raw/normalized activity (with outgoing/incoming/within/total
directions), eigenvector centrality, PageRank, total outgoing residual
flow, and introversion. Eigenvector centrality follows an outgoing-edge
convention (x_i proportional to the weighted sum of the scores of i's
outgoing neighbours); PageRank ranks by incoming endorsement, which is the
standard formulation. Gravity residual expects a normalized matrix and
introversion a raw one.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConvergenceError, DegenerateMatrixError, MatrixKindError, ParseError
from .flows import FlowMatrix, MatrixKind
from .spatial import Level

#: Canonical measure names as they appear in scores.csv.
ACTIVITY_RAW = "activity_raw"
ACTIVITY_NORMALIZED = "activity_normalized"
EIGENVECTOR = "eigenvector"
PAGERANK = "pagerank"
GRAVITY_RESIDUAL = "gravity_residual"
INTROVERSION = "introversion"

MEASURES = (ACTIVITY_RAW, ACTIVITY_NORMALIZED, EIGENVECTOR, PAGERANK,
            GRAVITY_RESIDUAL, INTROVERSION)

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10000
DEFAULT_DAMPING = 0.85


class Direction(enum.Enum):
    OUTGOING = "outgoing"
    INCOMING = "incoming"
    WITHIN = "within"
    TOTAL = "total"


@dataclass
class NodeScores:
    """One score per spatial unit from a single measure."""

    level: Level
    measure: str
    scores: dict[str, float]
    direction: Direction | None = None

    def vector(self, ids) -> np.ndarray:
        return np.array([self.scores[u] for u in ids], dtype=np.float64)


def activity(m: FlowMatrix, direction: Direction = Direction.OUTGOING) -> NodeScores:
    """Aggregate flow per unit.

    outgoing_i = sum_{j != i} m[i, j]; incoming_i = sum_{j != i} m[j, i];
    within_i = m[i, i]; total = outgoing + incoming + within.
    """
    v = m.values.astype(np.float64)
    diag = np.diag(v)
    if direction is Direction.OUTGOING:
        s = v.sum(axis=1) - diag
    elif direction is Direction.INCOMING:
        s = v.sum(axis=0) - diag
    elif direction is Direction.WITHIN:
        s = diag.copy()
    else:
        s = v.sum(axis=1) + v.sum(axis=0) - diag
    measure = ACTIVITY_RAW if m.kind is MatrixKind.RAW else ACTIVITY_NORMALIZED
    return NodeScores(m.level, measure, dict(zip(m.ids, s.tolist())), direction)


def eigenvector_centrality(
    m: FlowMatrix,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> NodeScores:
    """Leading eigenvector of the flow matrix, L1-normalized.

    Power iteration from the uniform vector in the outgoing (row) form
    x <- M x. Iterates with a unit diagonal shift (M + I), which leaves
    eigenvectors unchanged but guarantees a dominant eigenvalue on
    periodic structures (e.g. pure two-cycles). Convergence is successive-
    iterate L1 distance < tol.
    """
    v = m.values.astype(np.float64)
    n = m.n
    if n < 1 or not np.any(v > 0):
        raise DegenerateMatrixError("matrix has no positive entries")
    x = np.full(n, 1.0 / n)
    diff = np.inf
    for _ in range(max_iter):
        y = v @ x + x
        total = y.sum()
        if total == 0.0:
            raise DegenerateMatrixError("iteration collapsed to the zero vector")
        y /= total
        diff = np.abs(y - x).sum()
        x = y
        if diff < tol:
            return NodeScores(m.level, EIGENVECTOR, dict(zip(m.ids, x.tolist())))
    raise ConvergenceError("eigenvector centrality did not converge",
                           residual=float(diff), iterations=max_iter)


def pagerank(
    m: FlowMatrix,
    damping: float = DEFAULT_DAMPING,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> NodeScores:
    """Weighted directed PageRank.

    PR_i = (1-d)/N + d * sum_j (m[j, i] / out_j) * PR_j, where out_j is
    the total outgoing weight of j. Dangling nodes (out_j = 0) spread
    their mass uniformly; teleport is uniform. Power iteration from the
    uniform vector; the result sums to 1.
    """
    if not 0.0 < damping < 1.0:
        raise ValueError(f"damping must be in (0, 1), got {damping}")
    v = m.values.astype(np.float64)
    n = m.n
    out = v.sum(axis=1)
    dangling = out == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(out[:, None] > 0.0, v / out[:, None], 0.0)
    wt = w.T.copy()
    x = np.full(n, 1.0 / n)
    base = (1.0 - damping) / n
    diff = np.inf
    for _ in range(max_iter):
        y = base + damping * (wt @ x + x[dangling].sum() / n)
        diff = np.abs(y - x).sum()
        x = y
        if diff < tol:
            x = x / x.sum()  # remove residual drift so the sum is exactly 1
            return NodeScores(m.level, PAGERANK, dict(zip(m.ids, x.tolist())))
    raise ConvergenceError("pagerank did not converge",
                           residual=float(diff), iterations=max_iter)


def gravity_residual(m: FlowMatrix) -> NodeScores:
    """Total outgoing residual flow per unit: sum_j m[i, j] of the
    normalized matrix (whose diagonal is zero by construction)."""
    if m.kind is not MatrixKind.NORMALIZED:
        raise MatrixKindError("gravity residual requires a normalized matrix")
    s = m.values.sum(axis=1)
    return NodeScores(m.level, GRAVITY_RESIDUAL, dict(zip(m.ids, s.tolist())))


def introversion(m: FlowMatrix) -> NodeScores:
    """Fraction of each unit's originated volume that stays within it:
    m[i, i] / sum_j m[i, j], with the diagonal included in the sum.

    A zero row is 0/0; it scores 0 (an isolated unit communicates
    "within" zero times) and emits a warning.
    """
    if m.kind is not MatrixKind.RAW:
        raise MatrixKindError("introversion requires a raw matrix")
    v = m.values.astype(np.float64)
    row = v.sum(axis=1)
    diag = np.diag(v)
    zero = row == 0.0
    if np.any(zero):
        names = [m.ids[i] for i in np.flatnonzero(zero)]
        warnings.warn(f"introversion undefined (zero row) for {names}; scoring 0",
                      stacklevel=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(zero, 0.0, diag / np.where(zero, 1.0, row))
    return NodeScores(m.level, INTROVERSION, dict(zip(m.ids, s.tolist())))


# ── serialization ────────────────────────────────────────────────────
# scores.csv: "unit_id,measure,direction,score", sorted by unit_id (then
# measure and direction for determinism). Direction is blank except for
# activity variants.


def write_scores_csv(score_sets: list[NodeScores], path) -> None:
    rows = []
    for ns in score_sets:
        direction = ns.direction.value if ns.direction is not None else ""
        for unit_id, score in ns.scores.items():
            rows.append((unit_id, ns.measure, direction, score))
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    with open(path, "w", encoding="utf-8") as out:
        out.write("unit_id,measure,direction,score\n")
        out.writelines(f"{u},{m},{d},{s!r}\n" for u, m, d, s in rows)


def read_scores_csv(path, level: Level) -> dict[tuple[str, str], NodeScores]:
    """Read scores.csv back into {(measure, direction): NodeScores}."""
    result: dict[tuple[str, str], dict[str, float]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != "unit_id,measure,direction,score":
            raise ParseError(f"bad scores header {header!r}", line=1)
        for line_num, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise ParseError("expected 4 fields", line=line_num, field="row")
            result.setdefault((parts[1], parts[2]), {})[parts[0]] = float(parts[3])
    return {
        key: NodeScores(level, key[0], scores,
                        Direction(key[1]) if key[1] else None)
        for key, scores in result.items()
    }


def compute_standard_scores(raw: FlowMatrix, normalized: FlowMatrix,
                            damping: float = DEFAULT_DAMPING,
                            pagerank_tol: float = DEFAULT_TOL,
                            pagerank_max_iter: int = DEFAULT_MAX_ITER,
                            eigenvector_tol: float = DEFAULT_TOL,
                            eigenvector_max_iter: int = DEFAULT_MAX_ITER) -> list[NodeScores]:
    """The measure set the pipeline reports at each level."""
    return [
        activity(raw, Direction.OUTGOING),
        activity(normalized, Direction.OUTGOING),
        eigenvector_centrality(normalized, tol=eigenvector_tol,
                               max_iter=eigenvector_max_iter),
        pagerank(normalized, damping=damping, tol=pagerank_tol,
                 max_iter=pagerank_max_iter),
        gravity_residual(normalized),
        introversion(raw),
    ]
