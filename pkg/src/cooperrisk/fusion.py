"""Per-agent sensing, V2X delay, late fusion by NMS and track assembly."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .geometry import segment_hits_box
from .scene import (
    DEFAULT_MASS,
    DT,
    Agent,
    DetectionBox,
    NoiseProfile,
    ObjectState,
    obb_iou,
)

NMS_IOU = 0.3
TRACK_GATE = 3.0
CONFIDENCE_JITTER = 0.1


def visible_ids(agent: Agent, objects: Sequence[ObjectState], occlusion: bool = False) -> set[int]:
    """Ids of objects inside the agent's radius and, optionally, line of sight."""
    pose = agent.pose_at(objects)
    if pose is None:
        return set()
    px, py = pose[0], pose[1]
    others = [o for o in objects if o.id != agent.object_id]
    seen = set()
    for obj in others:
        if math.hypot(obj.s - px, obj.l - py) > agent.radius:
            continue
        if occlusion and any(
            segment_hits_box((px, py), (obj.s, obj.l), o.footprint)
            for o in others if o.id != obj.id
        ):
            continue
        seen.add(obj.id)
    return seen


def sense(agent: Agent, objects: Sequence[ObjectState], profile: NoiseProfile, seed: int,
          timestamp: float = 0.0, occlusion: bool = False) -> list[DetectionBox]:
    """Simulate one agent's detections of a ground-truth frame (world frame).

    Random draws are made for every candidate object in id order whatever
    the profile, so runs that differ only in noise level share their
    underlying normals.
    """
    rng = np.random.default_rng(seed)
    others = sorted((o for o in objects if o.id != agent.object_id), key=lambda o: o.id)
    z = rng.standard_normal((len(others), 3))
    u = rng.random((len(others), 2))
    seen = visible_ids(agent, objects, occlusion)
    out = []
    for obj, zi, ui in zip(others, z, u):
        if obj.id not in seen or ui[0] < profile.dropout_prob:
            continue
        out.append(DetectionBox(
            id=obj.id,
            category=obj.category,
            s=obj.s + profile.pos_sigma * zi[0],
            l=obj.l + profile.pos_sigma * zi[1],
            heading=obj.heading + profile.heading_sigma * zi[2],
            speed=obj.speed,
            length=obj.length,
            width=obj.width,
            height=obj.height,
            confidence=1.0 - CONFIDENCE_JITTER * ui[1],
            source_agent=agent.id,
            timestamp=timestamp,
        ))
    return out


def delay_frames(delay_ms: float, dt: float = DT) -> int:
    """Number of whole frames a delayed agent lags behind (rounded up to the grid)."""
    return math.ceil(delay_ms / (1000.0 * dt) - 1e-9)


def apply_delay(streams: Mapping[int, Sequence[Sequence[DetectionBox]]], profile: NoiseProfile,
                times: Sequence[float], ego_id: int = 0) -> dict[int, list[list[DetectionBox]]]:
    """Replace each non-ego agent's frame ``t`` by its newest frame at or before ``t - delay``.

    Agents with no frame old enough contribute nothing at ``t``. The ego's
    own stream is never delayed.
    """
    delay = profile.delay_ms / 1000.0
    out = {}
    for agent_id, frames in streams.items():
        if agent_id == ego_id or delay == 0:
            out[agent_id] = [list(f) for f in frames]
            continue
        delayed = []
        for t in times:
            src = [j for j, tj in enumerate(times) if tj <= t - delay + 1e-9]
            delayed.append(list(frames[src[-1]]) if src else [])
        out[agent_id] = delayed
    return out


def nms_fuse(detections: Sequence[Sequence[DetectionBox]] | Sequence[DetectionBox],
             iou_threshold: float = NMS_IOU) -> list[DetectionBox]:
    """Greedy non-maximum suppression over the union of all agents' boxes."""
    flat: list[DetectionBox] = []
    for item in detections:
        if isinstance(item, DetectionBox):
            flat.append(item)
        else:
            flat.extend(item)
    order = sorted(range(len(flat)), key=lambda i: (-flat[i].confidence, i))
    keep: list[DetectionBox] = []
    for i in order:
        box = flat[i]
        if all(obb_iou(box, k) <= iou_threshold for k in keep):
            keep.append(box)
    return keep


@dataclass(frozen=True)
class TrackHistory:
    """Per-object tracked states over the history window (oldest first)."""

    track_id: int
    category: str
    states: tuple[ObjectState | None, ...]
    mask: tuple[bool, ...]
    times: tuple[float, ...]
    confidence: float
    length: float
    width: float
    height: float

    def __post_init__(self):
        if not any(self.mask):
            raise ValueError("a track needs at least one valid frame")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("track timestamps must increase")

    @property
    def last_index(self) -> int:
        return max(i for i, m in enumerate(self.mask) if m)

    @property
    def last(self) -> ObjectState:
        return self.states[self.last_index]

    def valid(self) -> list[tuple[float, ObjectState]]:
        return [(t, s) for t, s, m in zip(self.times, self.states, self.mask) if m]


def _kinematics(obs: list[tuple[int, float, DetectionBox]]) -> list[tuple[float, float]]:
    """Finite-difference (speed, accel) for each observation of one track."""
    n = len(obs)
    if n == 1:
        return [(obs[0][2].speed, 0.0)]
    speeds = []
    for k in range(n):
        a, b = (k - 1, k) if k > 0 else (0, 1)
        (_, ta, ba), (_, tb, bb) = obs[a], obs[b]
        speeds.append(math.hypot(bb.s - ba.s, bb.l - ba.l) / (tb - ta))
    accels = [0.0]
    for k in range(1, n):
        accels.append((speeds[k] - speeds[k - 1]) / (obs[k][1] - obs[k - 1][1]) if k > 1 else 0.0)
    return list(zip(speeds, accels))


def assemble_histories(frames: Sequence[Sequence[DetectionBox]], times: Sequence[float],
                       gate: float = TRACK_GATE) -> list[TrackHistory]:
    """Associate fused detections over the history window into tracks.

    Greedy nearest-neighbour matching against each track's constant-velocity
    prediction, with a ``gate`` metre acceptance radius. Unmatched detections
    open new tracks; frames without a match are marked invalid.
    """
    tracks: list[list[tuple[int, float, DetectionBox]]] = []
    for f, dets in enumerate(frames):
        t = times[f]
        preds = []
        for tr in tracks:
            _, t_last, box = tr[-1]
            if len(tr) > 1:
                _, t_prev, prev = tr[-2]
                vx = (box.s - prev.s) / (t_last - t_prev)
                vy = (box.l - prev.l) / (t_last - t_prev)
            else:
                vx = box.speed * math.cos(box.heading)
                vy = box.speed * math.sin(box.heading)
            preds.append((box.s + vx * (t - t_last), box.l + vy * (t - t_last)))
        pairs = []
        for ti, (px, py) in enumerate(preds):
            for di, d in enumerate(dets):
                dist = math.hypot(d.s - px, d.l - py)
                if dist <= gate:
                    pairs.append((dist, ti, di))
        pairs.sort()
        used_t, used_d = set(), set()
        for _, ti, di in pairs:
            if ti in used_t or di in used_d:
                continue
            used_t.add(ti)
            used_d.add(di)
            tracks[ti].append((f, t, dets[di]))
        for di, d in enumerate(dets):
            if di not in used_d:
                tracks.append([(f, t, d)])

    out = []
    for tid, obs in enumerate(tracks):
        kin = _kinematics(obs)
        states: list[ObjectState | None] = [None] * len(frames)
        for (f, _, box), (speed, accel) in zip(obs, kin):
            states[f] = ObjectState(
                id=tid, category=box.category, s=box.s, l=box.l, heading=box.heading,
                speed=speed, accel=accel, length=box.length, width=box.width,
                height=box.height, mass=DEFAULT_MASS[box.category],
            )
        last = obs[-1][2]
        out.append(TrackHistory(
            track_id=tid,
            category=last.category,
            states=tuple(states),
            mask=tuple(s is not None for s in states),
            times=tuple(times),
            confidence=last.confidence,
            length=last.length,
            width=last.width,
            height=last.height,
        ))
    return out


def detections_to_dicts(frames: Sequence[Sequence[DetectionBox]]) -> list[list[dict]]:
    """Plain-data dump of per-frame fused detections, for debugging output."""
    from dataclasses import asdict

    return [[asdict(b) for b in dets] for dets in frames]
