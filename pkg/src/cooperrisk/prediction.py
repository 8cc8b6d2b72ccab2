"""Multi-modal, multi-agent Gaussian-mixture trajectory distributions.

Predictors turn track histories into a :class:`TrajectoryDistribution`:
per mode, object and future step a bivariate Gaussian over position, plus
per-object mode weights. Any predictor that fills this container can be
plugged into the risk map and planner.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np

from .fusion import TrackHistory
from .geometry import box_corners_batch, obb_overlap_batch, wrap_angle
from .scene import DT, PREDICTION_STEPS


class Intention(NamedTuple):
    name: str
    accel: float
    yaw_rate: float


INTENTIONS = (
    Intention("keep", 0.0, 0.0),
    Intention("accelerate", 1.5, 0.0),
    Intention("decelerate", -2.0, 0.0),
    Intention("turn-left", 0.0, 0.25),
    Intention("turn-right", 0.0, -0.25),
)


@dataclass(frozen=True)
class PredictorConfig:
    mode_count: int = 5
    base_sigma: float = 0.5
    sigma_growth: float = 0.25
    intentions: tuple[Intention, ...] = INTENTIONS
    temperature: float = 0.1
    horizon: int = PREDICTION_STEPS
    dt: float = DT
    allow_duplicates: bool = False

    def __post_init__(self):
        if self.mode_count < 1:
            raise ValueError("mode_count must be at least 1")
        if self.base_sigma <= 0 or self.sigma_growth < 0:
            raise ValueError("need base_sigma > 0 and sigma_growth >= 0")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")

    def sigma(self) -> np.ndarray:
        """Per-step standard deviation, steps 1..horizon."""
        return self.base_sigma + self.sigma_growth * np.arange(1, self.horizon + 1)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TrajectoryDistribution:
    """Gaussian-mixture future of ``N`` objects over ``K`` steps with ``M`` modes.

    Shapes: ``means``/``stds`` ``(M, N, K, 2)``, ``corr``/``headings``/
    ``speeds`` ``(M, N, K)``, ``weights`` ``(M, N)``. ``current`` holds the
    present ``(s, l, heading, speed)`` of each object, ``extents`` its
    ``(length, width)`` and ``masses`` its mass. ``modes`` names the
    intention behind each ``(m, n)`` entry.
    """

    means: np.ndarray
    stds: np.ndarray
    corr: np.ndarray
    weights: np.ndarray
    headings: np.ndarray
    speeds: np.ndarray
    current: np.ndarray
    extents: np.ndarray
    masses: np.ndarray
    track_ids: tuple[int, ...] = ()
    modes: tuple[tuple[str, ...], ...] = ()
    dt: float = DT

    def __post_init__(self):
        for name in ("means", "stds", "corr", "weights", "headings", "speeds",
                     "current", "extents", "masses"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        M, N, K = self.corr.shape
        if self.means.shape != (M, N, K, 2) or self.stds.shape != (M, N, K, 2):
            raise ValueError("means/stds must have shape (M, N, K, 2)")
        if self.weights.shape != (M, N) or self.headings.shape != (M, N, K):
            raise ValueError("inconsistent weight/heading shapes")
        if self.current.shape != (N, 4) or self.extents.shape != (N, 2) or self.masses.shape != (N,):
            raise ValueError("inconsistent per-object arrays")
        if N and (self.stds <= 0).any():
            raise ValueError("standard deviations must be positive")
        if N and (np.abs(self.corr) >= 1).any():
            raise ValueError("correlations must lie in (-1, 1)")
        if N and np.abs(self.weights.sum(axis=0) - 1.0).max() > 1e-9:
            raise ValueError("mode weights of each object must sum to 1")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.corr.shape

    @classmethod
    def empty(cls, mode_count: int = 1, horizon: int = PREDICTION_STEPS) -> "TrajectoryDistribution":
        M, K = mode_count, horizon
        return cls(np.zeros((M, 0, K, 2)), np.ones((M, 0, K, 2)), np.zeros((M, 0, K)),
                   np.zeros((M, 0)), np.zeros((M, 0, K)), np.zeros((M, 0, K)),
                   np.zeros((0, 4)), np.zeros((0, 2)), np.zeros(0))

    def with_weights(self, weights) -> "TrajectoryDistribution":
        return replace(self, weights=weights)

    def to_dict(self) -> dict:
        return {
            "track_ids": list(self.track_ids),
            "modes": [list(m) for m in self.modes],
            "dt": self.dt,
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "corr": self.corr.tolist(),
            "weights": self.weights.tolist(),
            "headings": self.headings.tolist(),
            "speeds": self.speeds.tolist(),
        }


def rollout(x, y, heading, speed, accel, yaw_rate, steps, dt=DT):
    """Unicycle rollout; returns ``(xy (steps, 2), heading, speed)``.

    Each step updates speed and heading first and then moves along the new
    heading, so zero accel and yaw rate reproduce constant velocity.
    """
    xy = np.empty((steps, 2))
    hs = np.empty(steps)
    vs = np.empty(steps)
    for k in range(steps):
        speed = max(speed + accel * dt, 0.0)
        heading = heading + yaw_rate * dt
        x = x + dt * speed * math.cos(heading)
        y = y + dt * speed * math.sin(heading)
        xy[k] = (x, y)
        hs[k] = heading
        vs[k] = speed
    return xy, wrap_angle(hs), vs


def _lag(h: TrackHistory, dt: float) -> int:
    return int(round((h.times[-1] - h.times[h.last_index]) / dt))


def _assemble(histories, chosen, weights, cfg: PredictorConfig) -> TrajectoryDistribution:
    M, N, K = len(chosen[0]), len(histories), cfg.horizon
    means = np.zeros((M, N, K, 2))
    heads = np.zeros((M, N, K))
    speeds = np.zeros((M, N, K))
    current = np.zeros((N, 4))
    for n, h in enumerate(histories):
        st = h.last
        current[n] = (st.s, st.l, st.heading, st.speed)
        lag = _lag(h, cfg.dt)
        for m, it in enumerate(chosen[n]):
            xy, hh, vv = rollout(st.s, st.l, st.heading, st.speed, it.accel, it.yaw_rate,
                                 lag + K, cfg.dt)
            means[m, n] = xy[lag:]
            heads[m, n] = hh[lag:]
            speeds[m, n] = vv[lag:]
    sig = np.broadcast_to(cfg.sigma()[None, None, :, None], (M, N, K, 2))
    return TrajectoryDistribution(
        means=means,
        stds=sig,
        corr=np.zeros((M, N, K)),
        weights=np.asarray(weights, dtype=float).reshape(M, N),
        headings=heads,
        speeds=speeds,
        current=current,
        extents=np.array([(h.length, h.width) for h in histories]).reshape(N, 2),
        masses=np.array([h.last.mass for h in histories]),
        track_ids=tuple(h.track_id for h in histories),
        modes=tuple(tuple(chosen[n][m].name for n in range(N)) for m in range(M)),
        dt=cfg.dt,
    )


def predict_cv(histories: Sequence[TrackHistory], cfg: PredictorConfig = PredictorConfig()
               ) -> TrajectoryDistribution:
    """Single-mode constant-velocity extrapolation of the last valid state."""
    if not histories:
        raise ValueError("no histories to predict from")
    keep = INTENTIONS[0]
    chosen = [[keep] for _ in histories]
    return _assemble(histories, chosen, np.ones((1, len(histories))), replace(cfg, mode_count=1))


def retrodiction_errors(history: TrackHistory, intentions: Sequence[Intention]) -> np.ndarray:
    """Squared error of each intention in explaining the last two displacements.

    The track is run backwards from its newest valid state under each
    intention; with fewer than three valid frames every error is zero.
    """
    obs = history.valid()
    errs = np.zeros(len(intentions))
    if len(obs) < 3:
        return errs
    (t2, p2), (t1, p1), (t0, p0) = obs[-3:]
    d_last = np.array([p0.s - p1.s, p0.l - p1.l])
    d_prev = np.array([p1.s - p2.s, p1.l - p2.l])
    dt1, dt2 = t0 - t1, t1 - t2
    last_hat = dt1 * p0.speed * np.array([math.cos(p0.heading), math.sin(p0.heading)])
    for i, it in enumerate(intentions):
        v = max(p0.speed - it.accel * dt1, 0.0)
        h = p0.heading - it.yaw_rate * dt1
        prev_hat = dt2 * v * np.array([math.cos(h), math.sin(h)])
        errs[i] = np.sum((last_hat - d_last) ** 2) + np.sum((prev_hat - d_prev) ** 2)
    return errs


def _intention_set(cfg: PredictorConfig) -> tuple[Intention, ...]:
    base = tuple(cfg.intentions)
    if cfg.mode_count <= len(base):
        return base
    if not cfg.allow_duplicates:
        raise ValueError(f"mode_count {cfg.mode_count} exceeds the {len(base)} intentions")
    extra = []
    for j in range(cfg.mode_count - len(base)):
        it = base[j % len(base)]
        jitter = 0.05 * (j // len(base) + 1) * (1 if j % 2 == 0 else -1)
        extra.append(Intention(f"{it.name}~{j}", it.accel, it.yaw_rate + jitter))
    return base + tuple(extra)


def predict_multimodal(histories: Sequence[TrackHistory], cfg: PredictorConfig = PredictorConfig()
                       ) -> TrajectoryDistribution:
    """One mode per intention hypothesis, weighted by how well it explains the history.

    The ``mode_count`` intentions with the smallest retrodiction error are
    kept (in canonical order) and their weights are a softmax of
    ``-error / temperature``.
    """
    if not histories:
        raise ValueError("no histories to predict from")
    intents = _intention_set(cfg)
    M = cfg.mode_count
    chosen, weights = [], np.zeros((M, len(histories)))
    for n, h in enumerate(histories):
        err = retrodiction_errors(h, intents)
        best = sorted(np.argsort(err, kind="stable")[:M])
        logits = -err[best] / cfg.temperature
        w = np.exp(logits - logits.max())
        weights[:, n] = w / w.sum()
        chosen.append([intents[i] for i in best])
    return _assemble(histories, chosen, weights, cfg)


def mode_collisions(dist: TrajectoryDistribution, extents=None) -> np.ndarray:
    """Boolean ``(N, M, N, M)``: do mean-trajectory footprints meet at a common step?"""
    M, N, K = dist.shape
    ext = dist.extents if extents is None else np.asarray(extents, dtype=float)
    corners = box_corners_batch(dist.means[..., 0], dist.means[..., 1], dist.headings,
                                ext[None, :, None, 0], ext[None, :, None, 1])  # (M,N,K,4,2)
    c = corners.transpose(1, 0, 2, 3, 4)  # (N,M,K,4,2)
    hit = obb_overlap_batch(c[:, :, None, None], c[None, None])  # (N,M,N,M,K)
    out = hit.any(-1)
    idx = np.arange(N)
    out[idx, :, idx, :] = False
    return out


def enforce_scene_consistency(dist: TrajectoryDistribution, extents=None, penalty: float = 0.2,
                              passes: int = 1) -> TrajectoryDistribution:
    """Down-weight mode pairs whose mean trajectories collide.

    Objects are visited in order. For object ``i`` each mode weight is
    multiplied by, for every other object ``j``, the ``j``-weighted average
    of ``penalty`` (colliding partner mode) or 1 (clear), then renormalized.
    Means and spreads are untouched.
    """
    M, N, K = dist.shape
    if N < 2:
        return dist
    coll = mode_collisions(dist, extents)
    factor = np.where(coll, penalty, 1.0)  # (N,M,N,M)
    w = dist.weights.T.copy()  # (N, M)
    for _ in range(passes):
        for i in range(N):
            scale = np.ones(M)
            for j in range(N):
                if j != i:
                    scale *= factor[i, :, j, :] @ w[j]
            wi = w[i] * scale
            w[i] = wi / wi.sum()
    return dist.with_weights(w.T)


def trajectory_overlap_rate(dist: TrajectoryDistribution, extents=None) -> float:
    """Average probability that an object's predicted trajectory overlaps another's.

    For each pair the overlap probability is the weight-averaged collision
    indicator over mode pairs; an object's rate combines its pairs as
    independent events.
    """
    M, N, K = dist.shape
    if N < 2:
        return 0.0
    coll = mode_collisions(dist, extents).astype(float)
    w = dist.weights.T  # (N, M)
    p = np.einsum("im,imjn,jn->ij", w, coll, w)
    np.fill_diagonal(p, 0.0)
    per_obj = 1.0 - np.prod(1.0 - np.clip(p, 0.0, 1.0), axis=1)
    return float(per_obj.mean())
