"""Scene data model, scenario files and seeded synthetic scenario generation."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .geometry import (
    box_corners_batch,
    obb_overlap_batch,
    pseudo_rotate,
    rect_iou,
    to_local,
    to_world,
    wrap_angle,
)

DT = 0.5
HISTORY_FRAMES = 4
PREDICTION_STEPS = 6
PLANNING_STEPS = 10
DEFAULT_RADIUS = 50.0
CATEGORIES = ("vehicle", "pedestrian", "cyclist")
DEFAULT_MASS = {"vehicle": 1500.0, "cyclist": 90.0, "pedestrian": 70.0}
DEFAULT_EXTENT = {
    "vehicle": (4.5, 1.8, 1.6),
    "cyclist": (1.8, 0.7, 1.7),
    "pedestrian": (0.6, 0.6, 1.75),
}
TRUCK_EXTENT = (10.0, 2.5, 3.5)
TEMPLATES = ("crossing", "merge", "roundabout", "straight")


@dataclass(frozen=True)
class ObjectState:
    """Ground-truth state of one traffic participant.

    ``s`` and ``l`` are Cartesian coordinates of the box centre; ``heading``
    is measured from the ``s`` axis.
    """

    id: int
    category: str
    s: float
    l: float
    heading: float
    speed: float
    accel: float = 0.0
    length: float = 4.5
    width: float = 1.8
    height: float = 1.6
    mass: float = 1500.0

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        if min(self.length, self.width, self.height, self.mass) <= 0:
            raise ValueError("extents and mass must be positive")
        if self.speed < 0:
            raise ValueError("speed must be non-negative")
        object.__setattr__(self, "heading", wrap_angle(self.heading))

    @property
    def footprint(self) -> tuple[float, float, float, float, float]:
        return (self.s, self.l, self.heading, self.length, self.width)


@dataclass(frozen=True)
class DetectionBox:
    """A perceived box, as reported by one sensing agent."""

    id: int
    category: str
    s: float
    l: float
    heading: float
    speed: float
    length: float
    width: float
    height: float
    confidence: float
    source_agent: int
    timestamp: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")
        if self.timestamp < 0:
            raise ValueError("timestamp must be non-negative")
        if min(self.length, self.width, self.height) <= 0:
            raise ValueError("extents must be positive")
        object.__setattr__(self, "heading", wrap_angle(self.heading))

    @property
    def footprint(self) -> tuple[float, float, float, float, float]:
        return (self.s, self.l, self.heading, self.length, self.width)

    @classmethod
    def from_state(cls, obj: ObjectState, confidence=1.0, source_agent=-1, timestamp=0.0):
        return cls(obj.id, obj.category, obj.s, obj.l, obj.heading, obj.speed,
                   obj.length, obj.width, obj.height, confidence, source_agent, timestamp)


def transform_to_frame(box: DetectionBox, target_pose) -> DetectionBox:
    """Express ``box`` in the frame whose origin/orientation is ``target_pose``."""
    s, l, h = to_local(box.s, box.l, box.heading, target_pose)
    return replace(box, s=s, l=l, heading=h)


def transform_from_frame(box: DetectionBox, source_pose) -> DetectionBox:
    """Inverse of :func:`transform_to_frame`."""
    s, l, h = to_world(box.s, box.l, box.heading, source_pose)
    return replace(box, s=s, l=l, heading=h)


def obb_iou(a, b) -> float:
    """Bird's-eye IoU of two boxes (anything with a ``footprint``)."""
    return rect_iou(a.footprint, b.footprint)


@dataclass(frozen=True)
class NoiseProfile:
    """Detection noise applied by :func:`cooperrisk.fusion.sense`."""

    pos_sigma: float = 0.0
    heading_sigma: float = 0.0
    dropout_prob: float = 0.0
    delay_ms: float = 0.0

    def __post_init__(self):
        if self.pos_sigma < 0 or self.heading_sigma < 0:
            raise ValueError("noise sigmas must be non-negative")
        if not 0.0 <= self.dropout_prob <= 1.0:
            raise ValueError("dropout_prob must lie in [0, 1]")
        if self.delay_ms < 0:
            raise ValueError("delay_ms must be non-negative")

    @classmethod
    def parse(cls, text: str) -> "NoiseProfile":
        """Parse ``pos=0.5,heading=0.01,dropout=0.1,delay=100``."""
        keys = {"pos": "pos_sigma", "heading": "heading_sigma",
                "dropout": "dropout_prob", "delay": "delay_ms"}
        kwargs = {}
        for part in filter(None, (p.strip() for p in text.split(","))):
            name, _, value = part.partition("=")
            if name not in keys or not value:
                raise ValueError(f"bad noise item {part!r}")
            kwargs[keys[name]] = float(value)
        return cls(**kwargs)


@dataclass(frozen=True)
class Agent:
    """A sensing agent: a CAV riding on an object, or a static roadside unit."""

    id: int
    kind: str = "cav"
    object_id: int | None = None
    pose: tuple[float, float, float] | None = None
    radius: float = DEFAULT_RADIUS
    noise: NoiseProfile = field(default_factory=NoiseProfile)

    def __post_init__(self):
        if self.object_id is None and self.pose is None:
            raise ValueError("agent needs an object_id or a static pose")
        if self.radius <= 0:
            raise ValueError("perception radius must be positive")

    def pose_at(self, objects: Sequence[ObjectState]) -> tuple[float, float, float] | None:
        if self.object_id is None:
            return tuple(self.pose)
        for obj in objects:
            if obj.id == self.object_id:
                return (obj.s, obj.l, obj.heading)
        return None


@dataclass(frozen=True)
class Frame:
    t: float
    objects: tuple[ObjectState, ...]

    def get(self, object_id: int) -> ObjectState | None:
        for obj in self.objects:
            if obj.id == object_id:
                return obj
        return None


@dataclass(frozen=True)
class ScenarioLog:
    """Ground truth for every agent plus the sensing agents that observe it.

    ``agents[0]`` is the ego CAV. Frame ``current_index`` is "now"; earlier
    frames are history and later frames are the ground-truth future.
    """

    frames: tuple[Frame, ...]
    agents: tuple[Agent, ...]
    map_extent: tuple[float, float, float, float]
    seed: int
    template: str = "custom"
    dt: float = DT
    current_index: int = HISTORY_FRAMES - 1
    occlusion: bool = False

    def __post_init__(self):
        for i, fr in enumerate(self.frames):
            if abs(fr.t - i * self.dt) > 1e-9:
                raise ValueError("frames must be equally spaced from t = 0")
        seen: dict[int, list[int]] = {}
        for i, fr in enumerate(self.frames):
            for obj in fr.objects:
                seen.setdefault(obj.id, []).append(i)
        for oid, idx in seen.items():
            if idx != list(range(idx[0], idx[-1] + 1)):
                raise ValueError(f"object {oid} is not present in contiguous frames")
        if self.frames and not 0 <= self.current_index < len(self.frames):
            raise ValueError("current_index out of range")

    @property
    def ego(self) -> Agent:
        return self.agents[0]

    @property
    def current_time(self) -> float:
        return self.current_index * self.dt

    def ego_state(self, index: int | None = None) -> ObjectState | None:
        index = self.current_index if index is None else index
        if not self.frames or self.ego.object_id is None:
            return None
        return self.frames[index].get(self.ego.object_id)

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "meta": {
                "seed": self.seed,
                "template": self.template,
                "dt": self.dt,
                "current_index": self.current_index,
                "occlusion": self.occlusion,
                "map_extent": list(self.map_extent),
            },
            "agents": [
                {
                    "id": a.id,
                    "kind": a.kind,
                    "object_id": a.object_id,
                    "pose": None if a.pose is None else list(a.pose),
                    "radius": a.radius,
                    "noise": asdict(a.noise),
                }
                for a in self.agents
            ],
            "frames": [
                {"t": fr.t, "objects": [asdict(o) for o in fr.objects]}
                for fr in self.frames
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioLog":
        meta = doc["meta"]
        agents = tuple(
            Agent(
                id=a["id"],
                kind=a.get("kind", "cav"),
                object_id=a.get("object_id"),
                pose=None if a.get("pose") is None else tuple(a["pose"]),
                radius=a.get("radius", DEFAULT_RADIUS),
                noise=NoiseProfile(**a.get("noise", {})),
            )
            for a in doc["agents"]
        )
        frames = tuple(
            Frame(fr["t"], tuple(ObjectState(**o) for o in fr["objects"]))
            for fr in doc["frames"]
        )
        return cls(
            frames=frames,
            agents=agents,
            map_extent=tuple(meta.get("map_extent", (-100.0, -100.0, 100.0, 100.0))),
            seed=meta["seed"],
            template=meta.get("template", "custom"),
            dt=meta.get("dt", DT),
            current_index=meta.get("current_index", HISTORY_FRAMES - 1),
            occlusion=meta.get("occlusion", False),
        )

    @classmethod
    def from_json(cls, text: str) -> "ScenarioLog":
        return cls.from_dict(json.loads(text))


def empty_scenario(seed: int = 0) -> ScenarioLog:
    """A scene holding only a parked ego and no other traffic."""
    n = HISTORY_FRAMES + PLANNING_STEPS
    ego = ObjectState(0, "vehicle", 0.0, 0.0, 0.0, 0.0)
    frames = tuple(Frame(i * DT, (ego,)) for i in range(n))
    return ScenarioLog(frames, (Agent(0, "cav", object_id=0),),
                       (-100.0, -100.0, 100.0, 100.0), seed, template="empty")


# -- synthetic generation ----------------------------------------------------

# A trajectory maps absolute time to (x, y, heading, speed, accel).
Trajectory = Callable[[float], tuple[float, float, float, float, float]]

LANE = 3.5
CAPACITY = {"straight": 18, "crossing": 12, "merge": 12, "roundabout": 8}
MAX_SPEED = 20.0


def constant_velocity(x0, y0, heading, speed, t0=0.0) -> Trajectory:
    c, s = math.cos(heading), math.sin(heading)

    def traj(t):
        d = speed * (t - t0)
        return (x0 + c * d, y0 + s * d, heading, speed, 0.0)

    return traj


def brake_to_stop(x0, y0, heading, speed, t0, stop_distance) -> Trajectory:
    """Constant speed until ``t0``, then uniform braking over ``stop_distance``."""
    c, s = math.cos(heading), math.sin(heading)
    decel = speed * speed / (2.0 * stop_distance) if stop_distance > 0 else math.inf
    t_stop = speed / decel if decel > 0 else math.inf

    def traj(t):
        if t <= t0:
            d, v, a = speed * (t - t0), speed, 0.0
        elif t - t0 < t_stop:
            tau = t - t0
            d, v, a = speed * tau - 0.5 * decel * tau * tau, speed - decel * tau, -decel
        else:
            d, v, a = stop_distance, 0.0, 0.0
        return (x0 + c * d, y0 + s * d, heading, max(v, 0.0), a)

    return traj


def circular(cx, cy, radius, phase0, speed) -> Trajectory:
    omega = speed / radius

    def traj(t):
        ph = phase0 + omega * t
        return (cx + radius * math.cos(ph), cy + radius * math.sin(ph),
                ph + 0.5 * math.pi, speed, 0.0)

    return traj


def lane_change(x0, y_from, y_to, x_start, ramp_len, speed) -> Trajectory:
    """Eastbound motion with a smoothstep lateral shift between lanes."""
    dy = y_to - y_from

    def lateral(x):
        u = min(max((x - x_start) / ramp_len, 0.0), 1.0)
        return y_from + dy * u * u * (3 - 2 * u), dy * 6 * u * (1 - u) / ramp_len

    def traj(t):
        x = x0 + speed * t
        y, slope = lateral(x)
        return (x, y, math.atan(slope), speed * math.hypot(1.0, slope), 0.0)

    return traj


@dataclass
class _Spec:
    category: str
    traj: Trajectory
    extent: tuple[float, float, float] | None = None


def _materialize(specs: list[_Spec], n_frames: int, dt: float) -> tuple[Frame, ...]:
    frames = []
    for i in range(n_frames):
        t = i * dt
        objs = []
        for oid, sp in enumerate(specs):
            x, y, h, v, a = sp.traj(t)
            length, width, height = sp.extent or DEFAULT_EXTENT[sp.category]
            objs.append(ObjectState(oid, sp.category, x, y, h, v, a, length, width,
                                    height, DEFAULT_MASS[sp.category]))
        frames.append(Frame(t, tuple(objs)))
    return tuple(frames)


def frames_collide(frames: Sequence[Frame]) -> bool:
    """Exhaustive pairwise footprint test over all frames."""
    for fr in frames:
        objs = fr.objects
        if len(objs) < 2:
            continue
        arr = np.array([o.footprint for o in objs])
        corners = box_corners_batch(*arr.T)
        hit = obb_overlap_batch(corners[:, None], corners[None, :])
        np.fill_diagonal(hit, False)
        if hit.any():
            return True
    return False


def _gen_crossing(rng, density, t_now, occlusion):
    """Four-arm intersection at the origin, ego eastbound in lane y = -1.75."""
    specs: list[_Spec] = []
    v_e = rng.uniform(7.0, 10.0)
    # the conflict falls inside the 3 s prediction window, far enough out to stop at 3 m/s^2
    ttc = rng.uniform(2.5, 2.8)
    northbound = rng.random() < 0.5
    x_c = LANE / 2 if northbound else -LANE / 2
    # ego centre reaches the conflict column x_c at t_now + ttc
    x_e_now = x_c - v_e * ttc
    stop_x = -LANE - 2.25 - 0.8
    stop_dist = max(stop_x - x_e_now, 1.0)
    specs.append(_Spec("vehicle", brake_to_stop(x_e_now, -LANE / 2, 0.0, v_e, t_now, stop_dist)))
    # conflict vehicle reaches the ego lane at the same time, up to jitter
    v_c = rng.uniform(6.0, 10.0)
    t_hit = t_now + ttc + rng.uniform(-0.3, 0.2)
    h_c = 0.5 * math.pi if northbound else -0.5 * math.pi
    y_lane = -LANE / 2
    y0 = y_lane - math.sin(h_c) * v_c * t_hit
    specs.append(_Spec("vehicle", constant_velocity(x_c, y0, h_c, v_c)))

    extras = []
    # oncoming traffic
    extras.append(lambda: _Spec("vehicle", constant_velocity(
        rng.uniform(15.0, 60.0), LANE / 2, math.pi, rng.uniform(6.0, 12.0))))
    # a leader ahead of the ego, at least as fast
    def leader():
        v = v_e + rng.uniform(1.0, 3.0)
        return _Spec("vehicle", constant_velocity(x_e_now + rng.uniform(35.0, 60.0) - v * t_now, -LANE / 2, 0.0, v))
    extras.append(leader)
    # cross traffic that cleared the ego lane early or arrives late
    def late_or_early():
        nb = rng.random() < 0.5
        h = 0.5 * math.pi if nb else -0.5 * math.pi
        x = LANE / 2 if nb else -LANE / 2
        v = rng.uniform(6.0, 10.0)
        when = t_now + (rng.uniform(-3.0, -1.0) if rng.random() < 0.5 else ttc + rng.uniform(3.5, 6.0))
        return _Spec("vehicle", constant_velocity(x, y_lane - math.sin(h) * v * when, h, v))
    for _ in range(3):
        extras.append(late_or_early)
    # a cyclist on the far sidewalk moving west
    extras.append(lambda: _Spec("cyclist", constant_velocity(
        rng.uniform(-30.0, 30.0), 2 * LANE + 1.0, math.pi, rng.uniform(3.0, 5.0))))
    extras.append(lambda: _Spec("pedestrian", constant_velocity(
        rng.uniform(8.0, 30.0), -2 * LANE - 1.5, 0.0, rng.uniform(1.0, 1.6))))
    while len(extras) < CAPACITY["crossing"]:
        extras.append(late_or_early)
    for make in extras[: density - 1]:
        specs.append(make())

    if occlusion:
        # parked truck on the right shoulder ahead of the ego
        x_t = x_e_now + rng.uniform(8.0, 12.0)
        specs.append(_Spec("vehicle", constant_velocity(x_t, -LANE - 1.6, 0.0, 0.0), TRUCK_EXTENT))
    return specs


def _gen_straight(rng, density, t_now, occlusion):
    lanes = [-LANE, 0.0, LANE]
    speeds = [rng.uniform(8.0, 14.0) for _ in lanes]
    v_e = speeds[1]
    specs = [_Spec("vehicle", constant_velocity(0.0 - v_e * t_now, 0.0, 0.0, v_e))]
    slots = []
    for li, y in enumerate(lanes):
        for k in range(1, 7):
            slots.append((li, y, k))
    order = rng.permutation(len(slots))
    for idx in order[:density]:
        li, y, k = slots[idx]
        side = 1 if k % 2 else -1
        gap = rng.uniform(16.0, 20.0) * ((k + 1) // 2)
        if li == 1:
            gap += 5.0
        x_now = side * gap
        v = speeds[li]
        specs.append(_Spec("vehicle", constant_velocity(x_now - v * t_now, y, 0.0, v)))
    return specs


def _gen_merge(rng, density, t_now, occlusion):
    v_main = rng.uniform(10.0, 14.0)
    specs = [_Spec("vehicle", constant_velocity(-v_main * t_now, 0.0, 0.0, v_main))]
    headway = rng.uniform(22.0, 26.0)
    for k in range(density):
        if k % 2 == 0:
            # main-lane traffic, same speed as the ego
            slot = k // 2 + 1
            sign = 1 if slot % 2 else -1
            x_now = sign * headway * ((slot + 1) // 2) + 0.0
            specs.append(_Spec("vehicle", constant_velocity(x_now - v_main * t_now, LANE, 0.0, v_main)))
        else:
            # on-ramp vehicle joining the outer lane
            x_now = -rng.uniform(10.0, 40.0) - 30.0 * (k // 2)
            x0 = x_now - v_main * t_now
            specs.append(_Spec("vehicle", lane_change(x0, -LANE - 4.0, -LANE, x_now + 10.0, 40.0, v_main)))
    return specs


def _gen_roundabout(rng, density, t_now, occlusion):
    radius = 20.0
    v_ring = rng.uniform(5.0, 8.0)
    v_e = rng.uniform(6.0, 9.0)
    x_e_now = -radius - 6.0 - v_e * rng.uniform(1.0, 2.0)
    stop_dist = max(-radius - 5.5 - x_e_now, 1.0)
    specs = [_Spec("vehicle", brake_to_stop(x_e_now, -LANE / 2, 0.0, v_e, t_now, stop_dist))]
    phases = rng.permutation(CAPACITY["roundabout"])[:density]
    offset = rng.uniform(0.0, 2 * math.pi)
    for p in phases:
        phase = offset + 2 * math.pi * p / CAPACITY["roundabout"]
        specs.append(_Spec("vehicle", circular(0.0, 0.0, radius, phase - v_ring / radius * t_now, v_ring)))
    return specs


_GENERATORS = {
    "crossing": _gen_crossing,
    "straight": _gen_straight,
    "merge": _gen_merge,
    "roundabout": _gen_roundabout,
}


def _default_agents(template: str, n_objects: int, occlusion: bool) -> tuple[Agent, ...]:
    rsu_pose = {
        "crossing": (7.0, -7.0, 0.0),
        "straight": (20.0, -8.0, 0.0),
        "merge": (10.0, -12.0, 0.0),
        "roundabout": (0.0, 0.0, 0.0),
    }[template]
    agents = [Agent(0, "cav", object_id=0), Agent(1, "rsu", pose=rsu_pose)]
    if template == "crossing" and n_objects > 2 and not occlusion:
        agents.append(Agent(2, "cav", object_id=2))
    return tuple(agents)


def generate_scenario(template: str, density: int, seed: int, *,
                      occlusion: bool = False, n_frames: int | None = None,
                      max_attempts: int = 200) -> ScenarioLog:
    """Generate a deterministic synthetic scene.

    Args:
        template: one of ``crossing``, ``merge``, ``roundabout``, ``straight``.
        density: number of background participants (the ego is extra).
        seed: RNG seed; identical arguments give identical logs.
        occlusion: park a truck that blocks part of the ego's view and
            enable line-of-sight checks during sensing (crossing only).
        n_frames: total frames; defaults to history plus planning horizon.

    Raises:
        ValueError: unknown template, ``density < 1`` or above the template's
            lane capacity, or no collision-free draw within ``max_attempts``.
    """
    if template not in _GENERATORS:
        raise ValueError(f"unknown template {template!r}")
    if density < 1:
        raise ValueError("density must be at least 1")
    if density > CAPACITY[template]:
        raise ValueError(f"density {density} exceeds the {template} capacity of {CAPACITY[template]}")
    if occlusion and template != "crossing":
        raise ValueError("occlusion scenes are only defined for the crossing template")
    n_frames = n_frames or HISTORY_FRAMES + PLANNING_STEPS
    t_now = (HISTORY_FRAMES - 1) * DT
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        specs = _GENERATORS[template](rng, density, t_now, occlusion)
        frames = _materialize(specs, n_frames, DT)
        if frames_collide(frames):
            continue
        if any(o.speed > MAX_SPEED for fr in frames for o in fr.objects):
            continue
        agents = _default_agents(template, len(specs), occlusion)
        log = ScenarioLog(frames, agents, (-100.0, -100.0, 100.0, 100.0), seed,
                          template=template, occlusion=occlusion)
        if occlusion and not _has_occluded_target(log):
            continue
        return log
    raise ValueError(f"no collision-free {template} scene after {max_attempts} draws")


def _has_occluded_target(log: ScenarioLog) -> bool:
    from .fusion import visible_ids

    fr = log.frames[log.current_index]
    ego_sees = visible_ids(log.agents[0], fr.objects, occlusion=True)
    rsu_sees = visible_ids(log.agents[1], fr.objects, occlusion=True)
    hidden = {o.id for o in fr.objects if o.id != log.ego.object_id} - ego_sees
    return bool(hidden & rsu_sees)


def rotate_scenario(log: ScenarioLog, angle: float) -> ScenarioLog:
    """Rotate every pose (objects and static agents) about the world origin."""
    pose = (0.0, 0.0, -angle)

    def rot(o: ObjectState) -> ObjectState:
        s, l, h = to_local(o.s, o.l, o.heading, pose)
        return replace(o, s=s, l=l, heading=h)

    frames = tuple(Frame(fr.t, tuple(rot(o) for o in fr.objects)) for fr in log.frames)
    agents = tuple(
        a if a.pose is None else replace(a, pose=to_local(*a.pose, pose))
        for a in log.agents
    )
    return replace(log, frames=frames, agents=agents)
