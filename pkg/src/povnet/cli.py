"""Command-line interface.

Subcommands: synth, build-matrices, normalize, metrics, correlate, fit,
predict, behavior, map, pipeline. Every configuration field can be set in
a JSON config file (--config) and overridden by a command-line flag of
the same dotted name (e.g. --pagerank.damping 0.9); a few common fields
have short aliases (--out, --alpha, --damping, --seed, --measure,
--no-clamp, --rescale).

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric
non-convergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__, flows, geojson, ingest, metrics, model, pipeline, render
from .errors import ConfigError, ConvergenceError, PovnetError
from .spatial import Level

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NONCONVERGENCE = 4

_FLAT_DEFAULTS = pipeline.flatten_config(pipeline.DEFAULT_CONFIG)

# dotted keys covered by a short alias (registered separately)
_ALIASED = {"out", "alpha", "seed", "clamp", "rescale", "feature", "pagerank.damping"}


def _add_common_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="JSON config file")
    parser.add_argument("--out", metavar="DIR", help="output directory")
    parser.add_argument("--alpha", type=float, help="gravity distance exponent")
    parser.add_argument("--damping", type=float, help="pagerank damping factor")
    parser.add_argument("--seed", type=int, help="seed for the synthetic generator")
    parser.add_argument("--measure", help="feature measure (alias for --feature)")
    parser.add_argument("--no-clamp", action="store_true",
                        help="keep raw out-of-range H/A predictions")
    parser.add_argument("--rescale", action="store_true",
                        help="mean-preserving rescale of finer-level scores")
    for key in sorted(_FLAT_DEFAULTS):
        if key in _ALIASED:
            continue
        parser.add_argument(f"--{key}", dest=_dest(key), metavar="VALUE",
                            help=argparse.SUPPRESS)


def _dest(key: str) -> str:
    return "opt_" + key.replace(".", "__")


def _coerce(key: str, text: str):
    default = _FLAT_DEFAULTS[key]
    try:
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"expected a boolean, got {text!r}")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, list):
            value = json.loads(text)
            if not isinstance(value, list):
                raise ValueError("expected a JSON list")
            return value
        if isinstance(default, dict):
            value = json.loads(text)
            if not isinstance(value, dict):
                raise ValueError("expected a JSON object")
            return value
    except ValueError as e:
        raise ConfigError(f"bad value for --{key}: {e}") from None
    if text == "null":
        return None
    return text


def _resolve_config(args: argparse.Namespace) -> dict:
    overrides = {}
    for key in _FLAT_DEFAULTS:
        if key in _ALIASED:
            continue
        raw = getattr(args, _dest(key), None)
        if raw is not None:
            overrides[key] = _coerce(key, raw)
    if args.out is not None:
        overrides["out"] = args.out
    if args.alpha is not None:
        overrides["alpha"] = args.alpha
    if args.damping is not None:
        overrides["pagerank.damping"] = args.damping
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.measure is not None:
        overrides["feature"] = args.measure
    if args.no_clamp:
        overrides["clamp"] = False
    if args.rescale:
        overrides["rescale"] = True
    return pipeline.load_config(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="povnet",
        description="Poverty mapping from call-flow networks.",
        epilog=(
            "Any config field is also a flag of the same dotted name, e.g. "
            "--inputs.flows data/flows.csv --pagerank.damping 0.9 "
            "--retention.min_modal_share 0.9 --synth.users 500"
        ),
    )
    parser.add_argument("--version", action="version", version=f"povnet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    commands = {
        "synth": "generate a synthetic world with planted ground truth",
        "build-matrices": "aggregate flow records into site/arrondissement/region matrices",
        "normalize": "gravity-normalize a raw flow matrix",
        "metrics": "compute all importance measures from a raw+normalized matrix pair",
        "correlate": "correlate unit scores with poverty indicators",
        "fit": "fit the linear headcount/intensity model pair",
        "predict": "apply a stored model pair to a score vector",
        "behavior": "run the behavioral-indicator pipeline",
        "map": "emit GeoJSON / SVG / PNG maps from a predictions file",
        "pipeline": "run the full flow-matrix pipeline end to end",
    }
    parsers = {}
    for name, help_text in commands.items():
        p = sub.add_parser(name, help=help_text)
        _add_common_options(p)
        parsers[name] = p

    parsers["normalize"].add_argument("--matrix", required=True, metavar="PATH",
                                      help="raw matrix.csv (with .meta.json sidecar)")
    parsers["metrics"].add_argument("--raw", required=True, metavar="PATH")
    parsers["metrics"].add_argument("--normalized", required=True, metavar="PATH")
    for name in ("correlate", "fit"):
        parsers[name].add_argument("--scores", required=True, metavar="PATH")
        parsers[name].add_argument("--level", default="region",
                                   choices=[lv.value for lv in Level])
    parsers["predict"].add_argument("--model", required=True, metavar="PATH")
    parsers["predict"].add_argument("--scores", required=True, metavar="PATH")
    parsers["predict"].add_argument("--level", default="region",
                                    choices=[lv.value for lv in Level])
    parsers["map"].add_argument("--predictions", required=True, metavar="PATH")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve_config(args)
        outdir = _COMMANDS[args.command](cfg, args)
        print(f"povnet {args.command}: outputs in {outdir}")
        return EXIT_OK
    except ConfigError as e:
        _report(args.command, e)
        return EXIT_CONFIG
    except ConvergenceError as e:
        _report(args.command, e)
        return EXIT_NONCONVERGENCE
    except PovnetError as e:
        _report(args.command, e)
        return EXIT_DATA


def _report(command: str, e: PovnetError) -> None:
    stage = getattr(e, "stage", None)
    where = f"{command}/{stage}" if stage else command
    print(f"povnet {where} failed: {e}", file=sys.stderr)


# ── stage commands (thin wrappers over the library) ──────────────────


def _cmd_pipeline(cfg, args):
    return pipeline.run_pipeline(cfg)


def _cmd_behavior(cfg, args):
    return pipeline.run_behavior(cfg)


def _cmd_synth(cfg, args):
    return pipeline.run_synth(cfg)


def _hierarchy(cfg):
    path = cfg["inputs"]["hierarchy"]
    if path is None or not Path(path).exists():
        raise ConfigError("inputs.hierarchy is required and must exist")
    return ingest.parse_file(path, ingest.parse_hierarchy)


def _poverty(cfg):
    path = cfg["inputs"]["poverty"]
    if path is None or not Path(path).exists():
        raise ConfigError("inputs.poverty is required and must exist")
    return ingest.parse_file(path, ingest.parse_poverty)


def _cmd_build_matrices(cfg, args):
    flows_path = cfg["inputs"]["flows"]
    if flows_path is None or not Path(flows_path).exists():
        raise ConfigError("inputs.flows is required and must exist")
    h = _hierarchy(cfg)
    with pipeline.RunContext(Path(cfg["out"]), cfg, "build-matrices") as ctx:
        ctx.record_input("flows", Path(flows_path))
        ctx.enter_stage("build-matrices")
        with open(flows_path, "r", encoding="utf-8", newline="") as fh:
            site_raw = flows.build_site_matrix(ingest.parse_flows(fh), h)
        site_raw.annotation["source"] = str(flows_path)
        arr_raw = flows.coarsen(site_raw, h, Level.ARRONDISSEMENT)
        region_raw = flows.coarsen(arr_raw, h, Level.REGION)
        for m, name in ((site_raw, "matrix_site_raw"),
                        (arr_raw, "matrix_arrondissement_raw"),
                        (region_raw, "matrix_region_raw")):
            pipeline.write_matrix(ctx, m, name)
        ctx.write_manifest()
        return ctx.outdir


def _cmd_normalize(cfg, args):
    h = _hierarchy(cfg)
    m = flows.read_matrix_csv(args.matrix, h)
    with pipeline.RunContext(Path(cfg["out"]), cfg, "normalize") as ctx:
        ctx.enter_stage("normalize")
        normalized = flows.normalize_gravity(m, h, cfg["alpha"])
        pipeline.write_matrix(ctx, normalized,
                              f"matrix_{normalized.level.value}_normalized")
        ctx.write_manifest()
        return ctx.outdir


def _cmd_metrics(cfg, args):
    h = _hierarchy(cfg)
    raw = flows.read_matrix_csv(args.raw, h)
    normalized = flows.read_matrix_csv(args.normalized, h)
    if raw.level is not normalized.level:
        raise ConfigError("raw and normalized matrices are at different levels")
    pr = cfg["pagerank"]
    ev = cfg["eigenvector"]
    with pipeline.RunContext(Path(cfg["out"]), cfg, "metrics") as ctx:
        ctx.enter_stage("metrics")
        scores = metrics.compute_standard_scores(
            raw, normalized, damping=pr["damping"],
            pagerank_tol=pr["tol"], pagerank_max_iter=pr["max_iter"],
            eigenvector_tol=ev["tol"], eigenvector_max_iter=ev["max_iter"])
        metrics.write_scores_csv(scores, ctx.path(f"scores_{raw.level.value}.csv"))
        ctx.write_manifest()
        return ctx.outdir


def _read_scores(args) -> dict:
    return metrics.read_scores_csv(args.scores, Level.parse(args.level))


def _cmd_correlate(cfg, args):
    poverty = _poverty(cfg)
    scores = _read_scores(args)
    by_measure = {ns.measure: ns for (m, d), ns in scores.items()
                  if d in ("", "outgoing")}
    with pipeline.RunContext(Path(cfg["out"]), cfg, "correlate") as ctx:
        ctx.enter_stage("correlate")
        pipeline.correlate_scores_with_poverty(
            by_measure, poverty, ctx.path("correlations.csv"))
        feature = cfg["feature"]
        if feature in by_measure:
            pipeline.write_influence_csv(
                by_measure[feature], poverty, ctx.path("influence.csv"),
                threshold=cfg["influence_threshold"])
        ctx.write_manifest()
        return ctx.outdir


def _cmd_fit(cfg, args):
    poverty = _poverty(cfg)
    scores = _read_scores(args)
    feature = cfg["feature"]
    candidates = [ns for key, ns in scores.items() if key[0] == feature]
    if not candidates:
        raise ConfigError(f"measure {feature!r} not present in {args.scores}")
    with pipeline.RunContext(Path(cfg["out"]), cfg, "fit") as ctx:
        ctx.enter_stage("fit")
        models, _ = model.fit_poverty_models(candidates[0], poverty,
                                             clamp=cfg["clamp"])
        model.write_model_json(models, ctx.path("model.json"))
        ctx.write_manifest()
        return ctx.outdir


def _cmd_predict(cfg, args):
    models = model.read_model_json(args.model)
    scores = _read_scores(args)
    candidates = [ns for key, ns in scores.items() if key[0] == models.feature]
    if not candidates:
        raise ConfigError(f"measure {models.feature!r} not present in {args.scores}")
    with pipeline.RunContext(Path(cfg["out"]), cfg, "predict") as ctx:
        ctx.enter_stage("predict")
        preds = model.predict(models, candidates[0], rescale=cfg["rescale"])
        level = Level.parse(args.level)
        model.write_predictions_csv(preds, ctx.path(f"predictions_{level.value}.csv"))
        ctx.write_manifest()
        return ctx.outdir


def _cmd_map(cfg, args):
    h = _hierarchy(cfg)
    preds = model.read_predictions_csv(args.predictions)
    if not preds:
        raise ConfigError(f"no predictions in {args.predictions}")
    level = preds[0].level
    boundaries = None
    if cfg["inputs"]["boundaries"]:
        doc = geojson.load(cfg["inputs"]["boundaries"])
        subset = geojson.filter_features(doc, h.ids(level))
        if subset["features"]:
            boundaries = subset
    with pipeline.RunContext(Path(cfg["out"]), cfg, "map") as ctx:
        ctx.enter_stage("map")
        doc = geojson.prediction_collection(preds, h, boundaries=boundaries)
        geojson.write(doc, ctx.path(f"map_{level.value}.geojson"))
        render.write_svg_choropleth(doc, pipeline._map_spec(cfg),
                                    ctx.path(f"map_{level.value}.svg"))
        render.fig_prediction_map(preds, h, ctx.path(f"fig_map_{level.value}.png"))
        ctx.write_manifest()
        return ctx.outdir


_COMMANDS = {
    "synth": _cmd_synth,
    "build-matrices": _cmd_build_matrices,
    "normalize": _cmd_normalize,
    "metrics": _cmd_metrics,
    "correlate": _cmd_correlate,
    "fit": _cmd_fit,
    "predict": _cmd_predict,
    "behavior": _cmd_behavior,
    "map": _cmd_map,
    "pipeline": _cmd_pipeline,
}


if __name__ == "__main__":
    sys.exit(main())
