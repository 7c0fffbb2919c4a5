"""End-to-end orchestration: configuration, stage running, and manifests.

A run is driven by a single JSON config (every field overridable from the
command line by its dotted name). Outputs are plain files in one output
directory; the manifest records the resolved config, its hash, input file
hashes, and the produced artifacts — no timestamps, so a rerun with the
same config and inputs is byte-identical. A lockfile serializes runs per
output directory, and a failed stage removes whatever it already wrote.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
import warnings
from pathlib import Path

from . import __version__, behavior, flows, geojson, ingest, metrics, model, render, synth
from .errors import (
    ConfigError,
    EmptySampleError,
    PovnetError,
    UndefinedStatisticError,
)
from .spatial import Level
from .stats import loo_influence, pearson

DEFAULT_CONFIG: dict = {
    "inputs": {
        "flows": None,
        "hierarchy": None,
        "poverty": None,
        "userlog": None,
        "behavior": None,
        "boundaries": None,
    },
    "out": "out",
    "alpha": 1.0,
    "feature": "pagerank",
    "behavior_feature": None,  # null -> use the top-ranked indicator
    "model_file": None,        # stored-model mode: skip fitting
    "pagerank": {"damping": 0.85, "tol": 1e-10, "max_iter": 10000},
    "eigenvector": {"tol": 1e-10, "max_iter": 10000},
    "night_hours": [20, 21, 22, 23],
    "retention": {"min_day_fraction": 0.5, "min_modal_share": 0.95},
    "year_days": 365,
    "clamp": True,
    "rescale": False,
    "influence_threshold": 0.1,
    "seed": 0,
    "synth": {
        "regions": 5,
        "arr_per_region": [2, 4],
        "sites_per_arr": [2, 5],
        "attractiveness": None,
        "flow_rate": 40.0,
        "within_rate": 2.0,
        "hour_spread": 3,
        "poverty_link_h": [-16.0, 55.0],
        "poverty_link_a": [-8.0, 52.0],
        "poverty_noise_sd": 0.0,
        "users": 200,
        "retained_fraction": 0.7,
        "behavior_link": {"pct_initiated_conversation": [-0.6, 0.75]},
        "behavior_noise_sd": 0.02,
        "year": 2013,
    },
    "map": {
        "value_field": "MPI",
        "classes": 5,
        "scheme": "quantile",
        "low_color": "#fee5d9",
        "high_color": "#a50f15",
        "missing_color": "#d9d9d9",
    },
}

LOCKFILE = ".povnet.lock"

# config sub-dicts with open-ended keys: replaced wholesale, never merged
_LEAF_DICTS = {"behavior_link"}


def default_config() -> dict:
    return copy.deepcopy(DEFAULT_CONFIG)


def load_config(path: str | None, overrides: dict | None = None) -> dict:
    """Resolve a config: defaults <- JSON file <- dotted-key overrides."""
    cfg = default_config()
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            loaded = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file is not valid JSON: {e}") from e
        _merge(cfg, loaded)
    for key, value in (overrides or {}).items():
        set_by_dotted_key(cfg, key, value)
    _validate_config(cfg)
    return cfg


def _merge(dst: dict, src: dict, prefix: str = "") -> None:
    for key, value in src.items():
        if key not in dst:
            raise ConfigError(f"unknown config field {prefix + key!r}")
        if key in _LEAF_DICTS:
            dst[key] = value
        elif isinstance(dst[key], dict) and isinstance(value, dict):
            _merge(dst[key], value, prefix + key + ".")
        else:
            dst[key] = value


def set_by_dotted_key(cfg: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = cfg
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"unknown config field {dotted!r}")
        node = node[part]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise ConfigError(f"unknown config field {dotted!r}")
    node[parts[-1]] = value


def flatten_config(cfg: dict, prefix: str = "") -> dict:
    flat = {}
    for key, value in cfg.items():
        if isinstance(value, dict) and key not in _LEAF_DICTS:
            flat.update(flatten_config(value, prefix + key + "."))
        else:
            flat[prefix + key] = value
    return flat


def _validate_config(cfg: dict) -> None:
    ret = cfg["retention"]
    for name in ("min_day_fraction", "min_modal_share"):
        v = ret[name]
        if not 0.0 <= v <= 1.0:
            raise ConfigError(f"retention.{name}={v} outside [0, 1]")
    if cfg["alpha"] <= 0:
        raise ConfigError(f"alpha={cfg['alpha']} must be positive")
    if not 0.0 < cfg["pagerank"]["damping"] < 1.0:
        raise ConfigError("pagerank.damping must be in (0, 1)")
    if cfg["year_days"] not in (365, 366):
        raise ConfigError("year_days must be 365 or 366")


def manifest_config(cfg: dict) -> dict:
    """The config as recorded in manifests: the output directory is
    normalized away since it never affects artifact bytes."""
    cfg = copy.deepcopy(cfg)
    cfg["out"] = "."
    return cfg


def config_hash(cfg: dict) -> str:
    canonical = json.dumps(manifest_config(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _require_inputs(cfg: dict, roles: tuple[str, ...]) -> dict[str, Path]:
    paths = {}
    for role in roles:
        value = cfg["inputs"][role]
        if value is None:
            raise ConfigError(f"inputs.{role} is required but not set")
        p = Path(value)
        if not p.exists():
            raise ConfigError(f"inputs.{role} does not exist: {p}")
        paths[role] = p
    for role in ("boundaries",):
        value = cfg["inputs"][role]
        if value is not None:
            p = Path(value)
            if not p.exists():
                raise ConfigError(f"inputs.{role} does not exist: {p}")
            paths[role] = p
    return paths


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class RunContext:
    """Owns the output directory for one run: lockfile, written-file
    tracking (for cleanup on failure), and the manifest."""

    def __init__(self, outdir: Path, cfg: dict, command: str):
        self.outdir = Path(outdir)
        self.cfg = cfg
        self.command = command
        self.written: list[Path] = []
        self.inputs: dict[str, dict] = {}
        self.stage = "setup"
        self.outdir.mkdir(parents=True, exist_ok=True)
        self._lock = self.outdir / LOCKFILE
        try:
            fd = os.open(self._lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            os.close(fd)
        except FileExistsError:
            raise ConfigError(
                f"output directory {self.outdir} is locked by another run "
                f"(remove {self._lock} if stale)"
            ) from None

    def path(self, name: str) -> Path:
        p = self.outdir / name
        self.written.append(p)
        return p

    def record_input(self, role: str, path: Path) -> None:
        self.inputs[role] = {"path": str(path), "sha256": _sha256_file(path)}

    def enter_stage(self, name: str) -> None:
        self.stage = name

    def write_manifest(self) -> None:
        manifest = {
            "tool": {"name": "povnet", "version": __version__},
            "command": self.command,
            "config": manifest_config(self.cfg),
            "config_hash": config_hash(self.cfg),
            "inputs": {k: self.inputs[k] for k in sorted(self.inputs)},
            "outputs": sorted(p.name for p in self.written),
        }
        path = self.path("manifest.json")
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")

    def fail(self) -> None:
        for p in self.written:
            try:
                p.unlink(missing_ok=True)
            except OSError:
                pass

    def release(self) -> None:
        self._lock.unlink(missing_ok=True)

    def __enter__(self) -> "RunContext":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if exc is not None:
            if isinstance(exc, PovnetError) and not hasattr(exc, "stage"):
                exc.stage = self.stage
            self.fail()
        self.release()


# ── pipeline command ─────────────────────────────────────────────────


def write_matrix(ctx: RunContext, m, name: str) -> None:
    """Write matrix.csv plus its .meta.json sidecar, tracking both."""
    flows.write_matrix_csv(m, ctx.path(f"{name}.csv"))
    ctx.path(f"{name}.meta.json")  # written by the call above; track it


def run_pipeline(cfg: dict) -> Path:
    """ingest -> matrices -> normalization -> measures -> correlations and
    influence -> model fit -> predictions at both levels -> consistency ->
    maps and figures. Returns the output directory."""
    paths = _require_inputs(cfg, ("flows", "hierarchy", "poverty"))
    with RunContext(Path(cfg["out"]), cfg, "pipeline") as ctx:
        for role, p in paths.items():
            ctx.record_input(role, p)

        ctx.enter_stage("ingest")
        h = ingest.parse_file(paths["hierarchy"], ingest.parse_hierarchy)
        poverty = ingest.parse_file(paths["poverty"], ingest.parse_poverty)
        if "boundaries" in paths:
            doc = geojson.load(paths["boundaries"])
            geojson.boundary_centroid_overrides(h, Level.REGION, doc)
            geojson.boundary_centroid_overrides(h, Level.ARRONDISSEMENT, doc)

        ctx.enter_stage("build-matrices")
        with open(paths["flows"], "r", encoding="utf-8", newline="") as fh:
            site_raw = flows.build_site_matrix(ingest.parse_flows(fh), h)
        site_raw.annotation["source"] = str(paths["flows"])
        arr_raw = flows.coarsen(site_raw, h, Level.ARRONDISSEMENT)
        region_raw = flows.coarsen(arr_raw, h, Level.REGION)
        write_matrix(ctx, site_raw, "matrix_site_raw")
        write_matrix(ctx, arr_raw, "matrix_arrondissement_raw")
        write_matrix(ctx, region_raw, "matrix_region_raw")

        ctx.enter_stage("normalize")
        arr_norm = flows.normalize_gravity(arr_raw, h, cfg["alpha"])
        region_norm = flows.normalize_gravity(region_raw, h, cfg["alpha"])
        write_matrix(ctx, arr_norm, "matrix_arrondissement_normalized")
        write_matrix(ctx, region_norm, "matrix_region_normalized")

        ctx.enter_stage("metrics")
        pr = cfg["pagerank"]
        ev = cfg["eigenvector"]
        solver_args = dict(
            damping=pr["damping"], pagerank_tol=pr["tol"],
            pagerank_max_iter=pr["max_iter"], eigenvector_tol=ev["tol"],
            eigenvector_max_iter=ev["max_iter"])
        region_scores = metrics.compute_standard_scores(region_raw, region_norm,
                                                        **solver_args)
        arr_scores = metrics.compute_standard_scores(arr_raw, arr_norm, **solver_args)
        metrics.write_scores_csv(region_scores, ctx.path("scores_region.csv"))
        metrics.write_scores_csv(arr_scores, ctx.path("scores_arrondissement.csv"))

        ctx.enter_stage("correlate")
        by_measure = {ns.measure: ns for ns in region_scores}
        correlate_scores_with_poverty(
            by_measure, poverty, ctx.path("correlations.csv"))
        feature_scores = by_measure[cfg["feature"]]
        influence_tables = write_influence_csv(
            feature_scores, poverty, ctx.path("influence.csv"),
            threshold=cfg["influence_threshold"])

        ctx.enter_stage("fit")
        if cfg["model_file"]:
            models = model.read_model_json(cfg["model_file"])
            if models.feature != cfg["feature"]:
                raise ConfigError(
                    f"stored model feature {models.feature!r} != configured "
                    f"feature {cfg['feature']!r}")
            dropped: list[str] = []
        else:
            models, dropped = model.fit_poverty_models(
                feature_scores, poverty, clamp=cfg["clamp"])
        if dropped:
            warnings.warn(f"units dropped by the fit join: {dropped}")
        model.write_model_json(models, ctx.path("model.json"))

        ctx.enter_stage("predict")
        region_preds = model.predict(models, feature_scores, rescale=cfg["rescale"])
        arr_preds = model.predict(
            models, next(ns for ns in arr_scores if ns.measure == cfg["feature"]),
            rescale=cfg["rescale"])
        model.write_predictions_csv(region_preds, ctx.path("predictions_region.csv"))
        model.write_predictions_csv(arr_preds, ctx.path("predictions_arrondissement.csv"))

        ctx.enter_stage("consistency")
        rows = model.level_consistency_report(region_preds, arr_preds, h)
        write_consistency_csv(rows, ctx.path("consistency.csv"))

        ctx.enter_stage("map")
        boundaries = geojson.load(paths["boundaries"]) if "boundaries" in paths else None
        map_spec = _map_spec(cfg)
        for level, preds in ((Level.REGION, region_preds),
                             (Level.ARRONDISSEMENT, arr_preds)):
            level_boundaries = None
            if boundaries is not None:
                subset = geojson.filter_features(boundaries, h.ids(level))
                if subset["features"]:
                    level_boundaries = subset
            doc = geojson.prediction_collection(preds, h, boundaries=level_boundaries)
            geojson.write(doc, ctx.path(f"map_{level.value}.geojson"))
            render.write_svg_choropleth(doc, map_spec, ctx.path(f"map_{level.value}.svg"))
            render.fig_prediction_map(preds, h, ctx.path(f"fig_map_{level.value}.png"))
        flow_doc = geojson.flow_collection(region_raw, h)
        geojson.write(flow_doc, ctx.path("flows_region.geojson"))

        ctx.enter_stage("figures")
        joined = _join_scores_poverty(feature_scores.scores, poverty)
        if joined:
            units, xs, H, A, mpi = joined
            render.fig_model_fit(xs, H, A, models, ctx.path("fig_model_fit.png"))
            if influence_tables.get("MPI") is not None:
                render.fig_influence(xs, mpi, units, influence_tables["MPI"], "MPI",
                                     cfg["feature"], ctx.path("fig_influence.png"))
        mpi_by_region = {p.region: p.MPI for p in poverty}
        render.fig_flow_network(region_raw, h, ctx.path("fig_flow_network.png"),
                                mpi_by_unit=mpi_by_region)

        ctx.enter_stage("manifest")
        ctx.write_manifest()
        return ctx.outdir


def _map_spec(cfg: dict) -> render.ChoroplethSpec:
    m = cfg["map"]
    return render.ChoroplethSpec(
        value_field=m["value_field"], classes=int(m["classes"]), scheme=m["scheme"],
        low_color=m["low_color"], high_color=m["high_color"],
        missing_color=m["missing_color"],
    )


def _join_scores_poverty(scores: dict[str, float], poverty):
    by_region = {p.region: p for p in poverty}
    units = [u for u in sorted(scores) if u in by_region]
    if len(units) < 3:
        return None
    xs = [scores[u] for u in units]
    H = [by_region[u].H for u in units]
    A = [by_region[u].A for u in units]
    mpi = [by_region[u].MPI for u in units]
    return units, xs, H, A, mpi


def correlate_scores_with_poverty(by_measure: dict, poverty, path) -> None:
    """correlations.csv: one row per (measure, target in H/A/MPI)."""
    lines = ["measure,target,r,p_value,n"]
    for measure in sorted(by_measure):
        joined = _join_scores_poverty(by_measure[measure].scores, poverty)
        if joined is None:
            warnings.warn(f"measure {measure}: fewer than 3 joined units; skipped")
            continue
        units, xs, H, A, mpi = joined
        for target, ys in (("H", H), ("A", A), ("MPI", mpi)):
            try:
                res = pearson(xs, ys)
            except UndefinedStatisticError:
                warnings.warn(f"correlation undefined for {measure} vs {target}")
                continue
            lines.append(f"{measure},{target},{res.r!r},{res.p_value!r},{res.n}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_influence_csv(scores, poverty, path, threshold: float = 0.1) -> dict:
    """influence.csv for the configured feature: leave-one-out rows per
    target. Returns the reports keyed by target name."""
    joined = _join_scores_poverty(scores.scores, poverty)
    lines = ["excluded_unit,target,r_with,r_without,delta,flagged"]
    reports: dict = {"H": None, "A": None, "MPI": None}
    if joined is not None and len(joined[0]) >= 4:
        units, xs, H, A, mpi = joined
        for target, ys in (("H", H), ("A", A), ("MPI", mpi)):
            report = loo_influence(xs, ys, units, threshold=threshold)
            reports[target] = report
            for row in report.rows:
                if row.undefined:
                    lines.append(f"{row.excluded},{target},{row.r_with!r},,,false")
                else:
                    lines.append(
                        f"{row.excluded},{target},{row.r_with!r},{row.r_without!r},"
                        f"{row.delta!r},{'true' if row.flagged else 'false'}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return reports


def write_consistency_csv(rows, path) -> None:
    lines = ["region_id,region_mpi,arrondissement_mpi,relative_difference,arrondissement_count"]
    for r in rows:
        lines.append(
            f"{r.region},{r.region_mpi!r},{r.arrondissement_mpi!r},"
            f"{r.relative_difference!r},{r.arrondissement_count}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ── behavior command ─────────────────────────────────────────────────


def run_behavior(cfg: dict) -> Path:
    """localization -> sample shares -> indicator aggregation -> ranking ->
    model fit on the chosen indicator -> arrondissement prediction -> map."""
    paths = _require_inputs(cfg, ("userlog", "behavior", "poverty", "hierarchy"))
    with RunContext(Path(cfg["out"]), cfg, "behavior") as ctx:
        for role, p in paths.items():
            ctx.record_input(role, p)

        ctx.enter_stage("ingest")
        h = ingest.parse_file(paths["hierarchy"], ingest.parse_hierarchy)
        poverty = ingest.parse_file(paths["poverty"], ingest.parse_poverty)

        ctx.enter_stage("localize")
        ret = cfg["retention"]
        with open(paths["userlog"], "r", encoding="utf-8", newline="") as fh:
            assignments = behavior.localize_users(
                ingest.parse_user_log(fh), h,
                year_days=cfg["year_days"],
                night_hours=tuple(cfg["night_hours"]),
                min_day_fraction=ret["min_day_fraction"],
                min_modal_share=ret["min_modal_share"],
            )
        retained = [a for a in assignments if a.retained]
        if not retained:
            raise EmptySampleError("no users survive the retention thresholds")
        behavior.write_homes_csv(assignments, ctx.path("homes.csv"))
        shares = behavior.sample_share_report(assignments, h)
        behavior.write_sample_share_csv(shares, ctx.path("sample_share.csv"))

        ctx.enter_stage("aggregate")
        with open(paths["behavior"], "r", encoding="utf-8", newline="") as fh:
            profiles = behavior.aggregate_user_medians(ingest.parse_behavior(fh))
        region_table = behavior.unit_indicator_medians(profiles, assignments, h, Level.REGION)
        arr_table = behavior.unit_indicator_medians(profiles, assignments, h, Level.ARRONDISSEMENT)
        behavior.write_indicator_table_csv(region_table, ctx.path("region_indicators.csv"))
        behavior.write_indicator_table_csv(arr_table, ctx.path("arrondissement_indicators.csv"))

        ctx.enter_stage("rank")
        ranks = behavior.rank_indicators(region_table, poverty,
                                         threshold=cfg["influence_threshold"])
        behavior.write_ranking_csv(ranks, ctx.path("indicator_ranking.csv"))

        ctx.enter_stage("fit")
        feature = cfg["behavior_feature"]
        if feature is None:
            defined = [r for r in ranks if not r.undefined]
            if not defined:
                raise EmptySampleError("no indicator has a defined correlation")
            feature = defined[0].indicator
        region_feature = region_table.scores_for(feature)
        if cfg["model_file"]:
            models = model.read_model_json(cfg["model_file"])
            if models.feature != feature:
                raise ConfigError(
                    f"stored model feature {models.feature!r} != indicator {feature!r}")
        else:
            models, _ = model.fit_poverty_models(region_feature, poverty,
                                                 clamp=cfg["clamp"])
        model.write_model_json(models, ctx.path("behavior_model.json"))

        ctx.enter_stage("predict")
        arr_feature = arr_table.scores_for(feature)
        # indicator medians live on one scale at every level: never rescale
        arr_preds = model.predict(models, arr_feature, rescale=False)
        model.write_predictions_csv(
            arr_preds, ctx.path("behavior_predictions_arrondissement.csv"))

        ctx.enter_stage("map")
        boundaries = None
        if "boundaries" in paths:
            subset = geojson.filter_features(geojson.load(paths["boundaries"]),
                                             h.ids(Level.ARRONDISSEMENT))
            if subset["features"]:
                boundaries = subset
        doc = geojson.prediction_collection(arr_preds, h, boundaries=boundaries)
        geojson.write(doc, ctx.path("behavior_map_arrondissement.geojson"))
        render.write_svg_choropleth(doc, _map_spec(cfg),
                                    ctx.path("behavior_map_arrondissement.svg"))
        render.fig_prediction_map(arr_preds, h, ctx.path("fig_behavior_map.png"))

        ctx.enter_stage("figures")
        render.fig_sample_share(shares, ctx.path("fig_sample_share.png"))
        joined = _join_scores_poverty(region_feature.scores, poverty)
        if joined:
            _, xs, H, A, _ = joined
            render.fig_model_fit(xs, H, A, models, ctx.path("fig_behavior_model_fit.png"))

        ctx.enter_stage("manifest")
        ctx.write_manifest()
        return ctx.outdir


# ── synth command ────────────────────────────────────────────────────


def run_synth(cfg: dict) -> Path:
    """Generate a synthetic world (plus truth.json) into the output directory."""
    spec = world_spec_from_config(cfg)
    with RunContext(Path(cfg["out"]), cfg, "synth") as ctx:
        ctx.enter_stage("synth")
        written = synth.gen_all(spec, ctx.outdir)
        ctx.written.extend(written.values())
        ctx.enter_stage("manifest")
        ctx.write_manifest()
        return ctx.outdir


def world_spec_from_config(cfg: dict) -> synth.WorldSpec:
    s = cfg["synth"]
    try:
        return synth.WorldSpec(
            seed=cfg["seed"],
            regions=s["regions"],
            arr_per_region=tuple(s["arr_per_region"]),
            sites_per_arr=tuple(s["sites_per_arr"]),
            attractiveness=s["attractiveness"],
            flow_rate=s["flow_rate"],
            within_rate=s["within_rate"],
            hour_spread=s["hour_spread"],
            poverty_link_h=tuple(s["poverty_link_h"]),
            poverty_link_a=tuple(s["poverty_link_a"]),
            poverty_noise_sd=s["poverty_noise_sd"],
            users=s["users"],
            retained_fraction=s["retained_fraction"],
            behavior_link={k: tuple(v) for k, v in s["behavior_link"].items()},
            behavior_noise_sd=s["behavior_noise_sd"],
            year=s["year"],
        )
    except ValueError as e:
        raise ConfigError(f"bad synth spec: {e}") from e
