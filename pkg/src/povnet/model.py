"""Linear poverty models: fit headcount/intensity regressions on unit
scores, predict at any spatial level, and compose the predicted index.

Predicted headcount (H) and intensity (A) are percents; both are clamped
to [0, 100] before composing MPI = (H/100) * (A/100), so the index stays
a valid fraction. Raw (unclamped) values and a clamping flag are kept in
every prediction. Because per-level score vectors each sum to one, a
model fitted at a coarse level sees systematically smaller scores at a
finer level; an optional mean-preserving rescale (finer scores times
n_fine / n_fit) compensates, off by default.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

from .errors import FeatureMismatchError, InsufficientDataError, ParseError
from .ingest import PovertyRecord
from .metrics import NodeScores
from .spatial import Level, SpatialHierarchy
from .stats import LinearModel, ols_fit


@dataclass(frozen=True)
class PovertyModelPair:
    """Headcount and intensity regressions sharing one feature."""

    feature: str
    fit_level: Level | None
    h_model: LinearModel
    a_model: LinearModel
    clamp: bool = True


@dataclass(frozen=True)
class PovertyPrediction:
    unit_id: str
    level: Level
    feature: str
    feature_value: float
    H_raw: float
    A_raw: float
    H: float
    A: float
    MPI: float
    clamped: bool


def fit_poverty_models(
    scores: NodeScores,
    poverty: list[PovertyRecord],
    clamp: bool = True,
) -> tuple[PovertyModelPair, list[str]]:
    """Fit H and A on the inner join of scores and poverty records.

    Returns the model pair plus the ids dropped by the join (present on
    one side only). Fewer than 3 joined units is an error.
    """
    by_region = {p.region: p for p in poverty}
    joined = [u for u in sorted(scores.scores) if u in by_region]
    dropped = sorted(
        (set(scores.scores) | set(by_region)) - set(joined)
    )
    if len(joined) < 3:
        raise InsufficientDataError(
            f"only {len(joined)} units present in both scores and poverty data"
        )
    x = [scores.scores[u] for u in joined]
    h = ols_fit(x, [by_region[u].H for u in joined])
    a = ols_fit(x, [by_region[u].A for u in joined])
    pair = PovertyModelPair(scores.measure, scores.level, h, a, clamp)
    return pair, dropped


def predict(
    models: PovertyModelPair,
    scores: NodeScores,
    rescale: bool = False,
) -> list[PovertyPrediction]:
    """Apply the fitted pair to a score vector at any level.

    With rescale=True, scores are multiplied by n_target / n_fit before
    applying the models (mean-preserving across levels, since score
    vectors sum to one per level).
    """
    if scores.measure != models.feature:
        raise FeatureMismatchError(
            f"scores measure {scores.measure!r} != model feature {models.feature!r}"
        )
    factor = 1.0
    if rescale:
        factor = len(scores.scores) / models.h_model.n
    preds = []
    for unit_id in sorted(scores.scores):
        f = scores.scores[unit_id] * factor
        h_raw = models.h_model.predict(f)
        a_raw = models.a_model.predict(f)
        if models.clamp:
            h = min(100.0, max(0.0, h_raw))
            a = min(100.0, max(0.0, a_raw))
        else:
            h, a = h_raw, a_raw
        mpi = (h / 100.0) * (a / 100.0)
        preds.append(
            PovertyPrediction(
                unit_id, scores.level, models.feature, f,
                h_raw, a_raw, h, a, mpi,
                clamped=(h != h_raw or a != a_raw),
            )
        )
    return preds


@dataclass(frozen=True)
class ConsistencyRow:
    region: str
    region_mpi: float
    arrondissement_mpi: float  # site-count-weighted mean over the region
    relative_difference: float  # signed, relative to the region prediction
    arrondissement_count: int


def level_consistency_report(
    region_preds: list[PovertyPrediction],
    arr_preds: list[PovertyPrediction],
    h: SpatialHierarchy,
) -> list[ConsistencyRow]:
    """Compare each region's prediction with the site-count-weighted mean
    of its arrondissements' predictions. Regions without any predicted
    arrondissement are omitted with a warning."""
    by_region: dict[str, list[PovertyPrediction]] = {}
    for p in arr_preds:
        region = h.parent_id(Level.ARRONDISSEMENT, p.unit_id, Level.REGION)
        by_region.setdefault(region, []).append(p)
    rows = []
    for rp in sorted(region_preds, key=lambda p: p.unit_id):
        children = by_region.get(rp.unit_id)
        if not children:
            warnings.warn(f"region {rp.unit_id}: no predicted arrondissements; omitted",
                          stacklevel=2)
            continue
        weights = [h.site_count(Level.ARRONDISSEMENT, c.unit_id) for c in children]
        wsum = sum(weights)
        mean_mpi = sum(w * c.MPI for w, c in zip(weights, children)) / wsum
        rel = (mean_mpi - rp.MPI) / rp.MPI if rp.MPI != 0 else float("inf")
        rows.append(ConsistencyRow(rp.unit_id, rp.MPI, mean_mpi, rel, len(children)))
    return rows


# ── serialization ────────────────────────────────────────────────────


def write_model_json(models: PovertyModelPair, path) -> None:
    doc = {
        "feature": models.feature,
        "fit_level": models.fit_level.value if models.fit_level else None,
        "h": _model_dict(models.h_model),
        "a": _model_dict(models.a_model),
        "clamp": models.clamp,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _model_dict(m: LinearModel) -> dict:
    return {"slope": m.slope, "intercept": m.intercept, "r2": m.r_squared, "n": m.n}


def read_model_json(path) -> PovertyModelPair:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return PovertyModelPair(
        feature=doc["feature"],
        fit_level=Level.parse(doc["fit_level"]) if doc.get("fit_level") else None,
        h_model=_model_from(doc["h"]),
        a_model=_model_from(doc["a"]),
        clamp=bool(doc.get("clamp", True)),
    )


def _model_from(d: dict) -> LinearModel:
    return LinearModel(float(d["slope"]), float(d["intercept"]),
                       float(d.get("r2", 0.0)), int(d.get("n", 0)))


PREDICTIONS_HEADER = "unit_id,level,feature,feature_value,H_raw,A_raw,H,A,MPI,clamped"


def write_predictions_csv(preds: list[PovertyPrediction], path) -> None:
    with open(path, "w", encoding="utf-8") as out:
        out.write(PREDICTIONS_HEADER + "\n")
        for p in sorted(preds, key=lambda q: q.unit_id):
            out.write(
                f"{p.unit_id},{p.level.value},{p.feature},{p.feature_value!r},"
                f"{p.H_raw!r},{p.A_raw!r},{p.H!r},{p.A!r},{p.MPI!r},"
                f"{'true' if p.clamped else 'false'}\n"
            )


def read_predictions_csv(path) -> list[PovertyPrediction]:
    preds = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != PREDICTIONS_HEADER:
            raise ParseError(f"bad predictions header {header!r}", line=1)
        for line_num, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            f = line.split(",")
            if len(f) != 10:
                raise ParseError("expected 10 fields", line=line_num, field="row")
            preds.append(
                PovertyPrediction(
                    f[0], Level.parse(f[1]), f[2], float(f[3]),
                    float(f[4]), float(f[5]), float(f[6]), float(f[7]),
                    float(f[8]), f[9] == "true",
                )
            )
    return preds
