"""End-to-end run: sense, delay, fuse, track, predict, risk map, plan, score."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import metrics
from .fusion import apply_delay, assemble_histories, detections_to_dicts, nms_fuse, sense
from .geometry import rect_iou, to_local
from .planner import PlannerConfig, PlanResult, solve_mpc
from .prediction import (
    PredictorConfig,
    TrajectoryDistribution,
    enforce_scene_consistency,
    predict_cv,
    predict_multimodal,
    trajectory_overlap_rate,
)
from .riskmap import EVAL_RANGE, EgoParams, GridSpec, RiskCoeffs, RiskMap, build_risk_map
from .scene import (
    HISTORY_FRAMES,
    PREDICTION_STEPS,
    DetectionBox,
    NoiseProfile,
    ScenarioLog,
    transform_to_frame,
)

PERCEPTION_MODES = ("v2x", "single", "gt")
PREDICTORS = ("cv", "multimodal")
SELF_IOU = 0.1


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, error: Exception):
        super().__init__(f"{stage}: {error}")
        self.stage = stage
        self.error = error


@dataclass(frozen=True)
class PipelineConfig:
    perception: str = "v2x"
    noise: NoiseProfile | None = None
    predictor: str = "multimodal"
    predictor_cfg: PredictorConfig = PredictorConfig()
    consistency: bool = True
    consistency_penalty: float = 0.2
    nms_iou: float = 0.3
    ap_iou: float = 0.5
    tau_epa: float = metrics.EPA_TAU
    alpha_epa: float = metrics.EPA_ALPHA
    coeffs: RiskCoeffs = RiskCoeffs()
    grid: GridSpec = GridSpec()
    samples: int = 64
    heading_policy: str = "current"
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    plan: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.perception not in PERCEPTION_MODES:
            raise ValueError(f"perception must be one of {PERCEPTION_MODES}")
        if self.predictor not in PREDICTORS:
            raise ValueError(f"predictor must be one of {PREDICTORS}")
        if self.samples < 1:
            raise ValueError("samples must be at least 1")


@dataclass
class Report:
    template: str
    scenario_seed: int
    perception: str
    predictor: str
    n_gt: int
    n_tp: int
    n_fp: int
    recall: float | None
    ap: float | None
    min_ade: float | None
    min_fde: float | None
    epa: float | None
    tor: float
    cr: float | None
    plan_cost: float | None = None
    plan_converged: bool | None = None
    artifacts: dict = field(default_factory=dict)
    # wall-clock seconds per stage; kept out of report.json so reports stay reproducible
    timing: dict = field(default_factory=dict, compare=False)
    distribution: TrajectoryDistribution | None = field(default=None, repr=False, compare=False)
    riskmap: RiskMap | None = field(default=None, repr=False, compare=False)
    plan: PlanResult | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        skip = {"timing", "distribution", "riskmap", "plan"}
        out = {}
        for k in self.__dataclass_fields__:
            if k not in skip:
                v = getattr(self, k)
                out[k] = v.item() if isinstance(v, np.generic) else v
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _in_range(s, l, bounds=EVAL_RANGE) -> bool:
    return bounds[0] <= s <= bounds[1] and bounds[2] <= l <= bounds[3]


class _Timer:
    def __init__(self):
        self.stages: dict[str, float] = {}

    def run(self, stage, fn, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        except Exception as exc:  # re-raised with the stage attached
            raise StageError(stage, exc) from exc
        finally:
            self.stages[stage] = self.stages.get(stage, 0.0) + time.perf_counter() - t0


def _agent_seed(config_seed: int, scenario_seed: int, agent_id: int, frame: int) -> int:
    ss = np.random.SeedSequence([config_seed & 0xFFFFFFFF, scenario_seed & 0xFFFFFFFF, agent_id, frame])
    return int(ss.generate_state(1)[0])


def perceive(scenario: ScenarioLog, config: PipelineConfig) -> tuple[list[list[DetectionBox]], list[float]]:
    """Fused detections for each history frame, in the current ego frame."""
    c = scenario.current_index
    idx = list(range(max(c - HISTORY_FRAMES + 1, 0), c + 1))
    times = [scenario.frames[i].t for i in idx]
    ego_obj = scenario.ego.object_id
    ego_pose = scenario.ego.pose_at(scenario.frames[c].objects)

    def ego_box(i):
        st = scenario.frames[i].get(ego_obj)
        s, l, h = to_local(st.s, st.l, st.heading, ego_pose)
        return (s, l, h, st.length, st.width)

    if config.perception == "gt":
        fused = []
        for i in idx:
            boxes = [transform_to_frame(DetectionBox.from_state(o, 1.0, -1, scenario.frames[i].t), ego_pose)
                     for o in scenario.frames[i].objects if o.id != ego_obj]
            fused.append([b for b in boxes if _in_range(b.s, b.l)])
        return fused, times

    agents = scenario.agents if config.perception == "v2x" else scenario.agents[:1]
    frame_of = {round(scenario.frames[i].t / scenario.dt): i for i in idx}
    streams = {}
    for agent in agents:
        profile = config.noise or agent.noise
        per_frame = []
        for i in idx:
            fr = scenario.frames[i]
            raw = sense(agent, fr.objects, profile, _agent_seed(config.seed, scenario.seed, agent.id, i),
                        timestamp=fr.t, occlusion=scenario.occlusion)
            per_frame.append([transform_to_frame(b, ego_pose) for b in raw])
        streams[agent.id] = per_frame
    delay_profile = config.noise or scenario.ego.noise
    streams = apply_delay(streams, delay_profile, times, ego_id=scenario.ego.id)
    fused = []
    for f in range(len(idx)):
        boxes = []
        for agent_id in sorted(streams):
            for b in streams[agent_id][f]:
                # drop other agents' detections of the ego itself, judged at the box's own time
                own = frame_of.get(round(b.timestamp / scenario.dt))
                if own is not None and rect_iou(b.footprint, ego_box(own)) > SELF_IOU:
                    continue
                if _in_range(b.s, b.l):
                    boxes.append(b)
        fused.append(nms_fuse(boxes, config.nms_iou))
    return fused, times


def ground_truth(scenario: ScenarioLog, horizon: int):
    """Background objects now (ego frame, inside the evaluation range) and their futures.

    Returns ``(current boxes, futures (N, K, 2), future boxes (N, T, 5), future times)``
    where the future times are relative to now and start at 0.
    """
    c = scenario.current_index
    ego_obj = scenario.ego.object_id
    pose = scenario.ego.pose_at(scenario.frames[c].objects)
    now, fut_xy, fut_boxes = [], [], []
    n_future = len(scenario.frames) - 1 - c
    for o in scenario.frames[c].objects:
        if o.id == ego_obj:
            continue
        s, l, h = to_local(o.s, o.l, o.heading, pose)
        if not _in_range(s, l):
            continue
        now.append((s, l, h, o.length, o.width))
        track = []
        for k in range(0, n_future + 1):
            st = scenario.frames[c + k].get(o.id)
            if st is None:
                track.append((np.nan,) * 5)
                continue
            ss, ll, hh = to_local(st.s, st.l, st.heading, pose)
            track.append((ss, ll, hh, st.length, st.width))
        track = np.array(track)
        fut_boxes.append(track)
        fut_xy.append(track[1:horizon + 1, :2] if n_future >= horizon else None)
    times = scenario.dt * np.arange(n_future + 1)
    boxes = np.array(fut_boxes).reshape(len(fut_boxes), n_future + 1, 5)
    return now, fut_xy, boxes, times


def run_pipeline(scenario: ScenarioLog, config: PipelineConfig = PipelineConfig(),
                 out_dir=None, write_csv: bool = False) -> Report:
    """Run every stage on one scenario and score it.

    With ``out_dir`` the report, risk map, plan, fused detections and
    distribution are written there. Failures raise :class:`StageError`.
    """
    timer = _Timer()
    K = config.predictor_cfg.horizon
    fused, times = timer.run("fusion", perceive, scenario, config)
    tracks = timer.run("tracking", assemble_histories, fused, times)

    def predict():
        if not tracks:
            return TrajectoryDistribution.empty(1, K)
        fn = predict_cv if config.predictor == "cv" else predict_multimodal
        return fn(tracks, config.predictor_cfg)

    dist = timer.run("prediction", predict)
    if config.consistency:
        dist = timer.run("consistency", enforce_scene_consistency, dist,
                         penalty=config.consistency_penalty)
    tor = timer.run("tor", trajectory_overlap_rate, dist)

    def score():
        gt_now, gt_fut, gt_boxes, gt_times = ground_truth(scenario, K)
        current = [(n, tr) for n, tr in enumerate(tracks) if tr.mask[-1]]
        dets = [(tr.last.s, tr.last.l, tr.last.heading, tr.length, tr.width) for _, tr in current]
        conf = [tr.confidence for _, tr in current]
        ap = metrics.average_precision(dets, conf, gt_now, config.ap_iou)
        match = metrics.match_detections(dets, conf, gt_now, config.ap_iou)
        fde, ade_pairs = [], {}
        for di, gi in match.pairs:
            n = current[di][0]
            if gt_fut[gi] is None:
                fde.append(None)
                continue
            a, f = metrics.displacement_errors(dist, n, gt_fut[gi])
            fde.append(f)
            ade_pairs[n] = gt_fut[gi]
        match = match.with_fde(fde)
        ade, fde_mean = metrics.min_ade_fde(dist, ade_pairs)
        return match, ap, ade, fde_mean, gt_boxes, gt_times

    match, ap, ade, fde_mean, gt_boxes, gt_times = timer.run("metrics", score)

    riskmap = plan = None
    cr = None
    if config.plan:
        ego = scenario.ego_state()
        # everything downstream of perception lives in the current ego frame
        ego_params = EgoParams(speed=ego.speed, mass=ego.mass, heading_policy=config.heading_policy)
        riskmap = timer.run("riskmap", build_risk_map, dist, ego_params, config.grid, config.coeffs,
                            config.samples, config.seed)
        x0 = np.array([0.0, ego.speed, 0.0, 0.0])
        plan = timer.run("planning", solve_mpc, x0, riskmap, config.planner)
        cr = float(metrics.plan_collides(plan.times(config.planner.dt), plan.trajectory,
                                         gt_times, gt_boxes))

    report = Report(
        template=scenario.template,
        scenario_seed=scenario.seed,
        perception=config.perception,
        predictor=config.predictor,
        n_gt=match.n_gt,
        n_tp=len(match.pairs),
        n_fp=len(match.false_positives),
        recall=match.recall,
        ap=ap,
        min_ade=ade,
        min_fde=fde_mean,
        epa=metrics.epa(match, config.tau_epa, config.alpha_epa),
        tor=tor,
        cr=cr,
        plan_cost=None if plan is None else plan.cost,
        plan_converged=None if plan is None else plan.converged,
        timing=timer.stages,
        distribution=dist,
        riskmap=riskmap,
        plan=plan,
    )
    if out_dir is not None:
        write_outputs(report, fused, out_dir, config, write_csv)
    return report


def write_outputs(report: Report, fused, out_dir, config: PipelineConfig, write_csv=False) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    artifacts = {"report": "report.json", "detections": "fused_detections.json",
                 "distribution": "distribution.json"}
    (out / "fused_detections.json").write_text(json.dumps(detections_to_dicts(fused), sort_keys=True))
    (out / "distribution.json").write_text(json.dumps(report.distribution.to_dict(), sort_keys=True))
    if report.riskmap is not None:
        report.riskmap.write_binary(out / "riskmap.crsk")
        artifacts["riskmap"] = "riskmap.crsk"
        if write_csv:
            report.riskmap.write_csv(out / "riskmap_csv")
            artifacts["riskmap_csv"] = "riskmap_csv"
    if report.plan is not None:
        report.plan.to_csv(out / "plan.csv", config.planner.dt)
        artifacts["plan"] = "plan.csv"
    report.artifacts = artifacts
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "timing.json").write_text(json.dumps(report.timing, indent=2, sort_keys=True) + "\n")


def batch_mean(reports: Sequence[Report], metric: str) -> float | None:
    vals = [getattr(r, metric) for r in reports]
    vals = [v for v in vals if v is not None]
    return float(np.mean(vals)) if vals else None


def sweep(scenarios: Sequence[ScenarioLog], base: PipelineConfig, kind: str, levels: Sequence[float],
          metric: str = "epa") -> list[tuple[float, float | None]]:
    """Batch-mean ``metric`` as positional noise (``kind="pos"``) or delay (``"delay"``) varies."""
    if kind not in ("pos", "delay", "heading", "dropout"):
        raise ValueError(f"unknown sweep kind {kind!r}")
    name = {"pos": "pos_sigma", "delay": "delay_ms", "heading": "heading_sigma",
            "dropout": "dropout_prob"}[kind]
    needs_plan = metric == "cr"
    rows = []
    for level in levels:
        noise = replace(base.noise or NoiseProfile(), **{name: float(level)})
        cfg = replace(base, noise=noise, plan=needs_plan)
        reports = [run_pipeline(sc, cfg) for sc in scenarios]
        rows.append((float(level), batch_mean(reports, metric)))
    return rows
