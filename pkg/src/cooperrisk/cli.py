"""Command-line entry point: ``cooperrisk run | sweep | report``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .pipeline import PipelineConfig, StageError, run_pipeline, sweep
from .planner import GRADIENT_MODES, PlannerConfig
from .prediction import PredictorConfig
from .scene import TEMPLATES, NoiseProfile, ScenarioLog, generate_scenario

EXIT_OK, EXIT_STAGE, EXIT_CONFIG = 0, 1, 2
DEFAULT_DENSITY = 6
SWEEP_KEYS = {"pos": "pos", "heading": "heading", "dropout": "dropout", "delay": "delay"}

log = logging.getLogger("cooperrisk")


class ConfigError(ValueError):
    pass


def _load_scenario(source: str, seed: int, density: int, occlusion: bool) -> ScenarioLog:
    if source in TEMPLATES:
        return generate_scenario(source, density, seed, occlusion=occlusion)
    path = Path(source)
    if not path.is_file():
        raise ConfigError(f"--scenario must be a file or one of {', '.join(TEMPLATES)}")
    try:
        return ScenarioLog.from_json(path.read_text())
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from exc


def parse_grid(text: str) -> tuple[str, list[float]]:
    """``pos=0.2:1.0:0.2`` -> ``("pos", [0.2, 0.4, 0.6, 0.8, 1.0])``; a comma list also works."""
    name, _, body = text.partition("=")
    if name not in SWEEP_KEYS or not body:
        raise ConfigError(f"bad grid {text!r}; expected <{'|'.join(SWEEP_KEYS)}>=start:stop:step")
    try:
        if ":" in body:
            start, stop, step = (float(x) for x in body.split(":"))
            if step <= 0 or stop < start:
                raise ValueError
            n = int(np.floor((stop - start) / step + 1e-9)) + 1
            levels = [round(start + i * step, 10) for i in range(n)]
        else:
            levels = [float(x) for x in body.split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad grid values in {text!r}") from exc
    return name, levels


def _config(args) -> PipelineConfig:
    try:
        noise = NoiseProfile.parse(args.noise) if args.noise else None
        planner = PlannerConfig(horizon=args.planner_horizon, iterations=args.planner_iters,
                                gradient_mode=args.gradient_mode)
        return PipelineConfig(
            perception=args.perception,
            noise=noise,
            predictor=args.predictor,
            predictor_cfg=PredictorConfig(mode_count=args.modes),
            consistency=not args.no_consistency,
            samples=args.samples,
            planner=planner,
            plan=not getattr(args, "no_plan", False),
            seed=args.seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="scenario and sensing seed")
    p.add_argument("--density", type=int, default=DEFAULT_DENSITY, help="background objects per scene")
    p.add_argument("--occlusion", action="store_true", help="add an occluding truck (crossing only)")
    p.add_argument("--noise", help="override agent noise, e.g. pos=0.5,heading=0.02,dropout=0.1,delay=100")
    p.add_argument("--perception", choices=("v2x", "single", "gt"), default="v2x")
    p.add_argument("--predictor", choices=("cv", "multimodal"), default="multimodal")
    p.add_argument("--modes", type=int, default=5, help="trajectory modes per object")
    p.add_argument("--no-consistency", action="store_true", help="skip scene-consistency reweighting")
    p.add_argument("--samples", type=int, default=64, help="Monte Carlo samples per risk cell")
    p.add_argument("--planner-horizon", type=int, default=10)
    p.add_argument("--planner-iters", type=int, default=150)
    p.add_argument("--gradient-mode", choices=GRADIENT_MODES, default="analytic-standard")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cooperrisk", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the full pipeline on one scenario")
    run.add_argument("--scenario", required=True, help=f"scenario JSON file or template ({', '.join(TEMPLATES)})")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--riskmap-out", help="also write the risk map as per-layer CSV into this directory")
    run.add_argument("--no-plan", action="store_true", help="stop after prediction")
    _add_common(run)

    sw = sub.add_parser("sweep", help="batch metric against a noise or delay grid")
    sw.add_argument("--template", choices=TEMPLATES, default="crossing")
    sw.add_argument("--scenarios", type=int, default=10, help="scenarios per level (seeds seed..seed+n-1)")
    sw.add_argument("--noise-grid", action="append", default=[],
                    help="e.g. pos=0.2:1.0:0.2 or delay=0:500:100; repeatable")
    sw.add_argument("--delay-grid", help="shorthand for --noise-grid delay=<start:stop:step>")
    sw.add_argument("--metric", choices=("epa", "ap", "recall", "min_ade", "min_fde", "tor", "cr"), default="epa")
    sw.add_argument("--csv", help="write the CSV here instead of stdout")
    _add_common(sw)

    rep = sub.add_parser("report", help="summarize report.json files under a directory")
    rep.add_argument("dir")
    return parser


def cmd_run(args) -> int:
    config = _config(args)
    scenario = _load_scenario(args.scenario, args.seed, args.density, args.occlusion)
    report = run_pipeline(scenario, config, out_dir=args.out)
    if args.riskmap_out and report.riskmap is not None:
        report.riskmap.write_csv(args.riskmap_out)
    print(report.to_json())
    return EXIT_OK


def cmd_sweep(args) -> int:
    grids = [parse_grid(g) for g in args.noise_grid]
    if args.delay_grid:
        grids.append(parse_grid(f"delay={args.delay_grid}"))
    if not grids:
        raise ConfigError("give at least one --noise-grid or --delay-grid")
    if args.scenarios < 1:
        raise ConfigError("--scenarios must be at least 1")
    config = _config(args)
    if config.noise is None:
        config = replace(config, noise=NoiseProfile())
    try:
        scenarios = [generate_scenario(args.template, args.density, args.seed + i, occlusion=args.occlusion)
                     for i in range(args.scenarios)]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    rows = []
    for kind, levels in grids:
        for level, value in sweep(scenarios, config, kind, levels, args.metric):
            rows.append((kind, level, value))
    out = open(args.csv, "w", newline="") if args.csv else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["kind", "level", args.metric])
        for kind, level, value in rows:
            w.writerow([kind, f"{level:g}", "" if value is None else f"{value:.6f}"])
    finally:
        if args.csv:
            out.close()
    return EXIT_OK


def _fmt(v, scale=1.0):
    return "   -  " if v is None else f"{v * scale:6.2f}"


def cmd_report(args) -> int:
    root = Path(args.dir)
    files = sorted(root.rglob("report.json"))
    if not files:
        raise ConfigError(f"no report.json under {root}")
    groups: dict[tuple[str, str], list[dict]] = {}
    for f in files:
        doc = json.loads(f.read_text())
        groups.setdefault((doc["perception"], doc["predictor"]), []).append(doc)
    cols = ("ap", "min_ade", "min_fde", "epa", "tor", "cr")
    print(f"{'perception':<11}{'predictor':<11}{'n':>4}  {'AP':>6} {'minADE':>6} {'minFDE':>6} "
          f"{'EPA':>6} {'TOR':>6} {'CR':>6}")
    for (perc, pred), docs in sorted(groups.items()):
        means = []
        for c in cols:
            vals = [d[c] for d in docs if d.get(c) is not None]
            means.append(float(np.mean(vals)) if vals else None)
        ap, ade, fde, e, tor, cr = means
        print(f"{perc:<11}{pred:<11}{len(docs):>4}  {_fmt(ap, 100)} {_fmt(ade)} {_fmt(fde)} "
              f"{_fmt(e, 100)} {_fmt(tor, 100)} {_fmt(cr)}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": cmd_run, "sweep": cmd_sweep, "report": cmd_report}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
