"""Severity/exposure risk field and spatiotemporal risk maps.

The pairwise risk between the ego and a participant is

    V = (c0 dv^2 + c1) / sqrt(c2 (ds / exp(c3 dv))^2 + c4 dl^2)

with ``dv`` the mass-weighted relative speed and ``(ds, dl)`` the offsets
between heading-rotated positions. A risk map stacks, for every future
step, the mixture expectation of ``V`` over candidate ego positions.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import pseudo_rotate
from .prediction import TrajectoryDistribution
from .scene import DT, ObjectState

MAGIC = b"CRSK"
FORMAT_VERSION = 1
EVAL_RANGE = (-70.4, 70.4, -40.0, 40.0)


@dataclass(frozen=True)
class RiskCoeffs:
    """Field coefficients.

    ``anchor`` selects the origin of the frame in which positions are
    heading-rotated: ``"ego"`` centres that frame on the ego hypothesis
    (so the field depends only on relative position), ``"world"`` uses the
    coordinates as given.
    """

    c0: float = 1.0
    c1: float = 1.0
    c2: float = 1.0
    c3: float = 0.2
    c4: float = 1.0
    epsilon: float = 0.5
    anchor: str = "ego"

    def __post_init__(self):
        if min(self.c0, self.c1, self.c2, self.c3, self.c4) <= 0:
            raise ValueError("risk coefficients must be positive")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.anchor not in ("ego", "world"):
            raise ValueError("anchor must be 'ego' or 'world'")


@dataclass(frozen=True)
class EgoHypothesis:
    s: float
    l: float
    heading: float
    speed: float
    mass: float = 1500.0

    def __post_init__(self):
        if self.speed < 0 or self.mass <= 0:
            raise ValueError("ego speed must be >= 0 and mass > 0")


@dataclass(frozen=True)
class GaussianComponent:
    """One ``(mode, object, step)`` entry of a trajectory distribution."""

    mean: tuple[float, float]
    std: tuple[float, float]
    corr: float = 0.0
    heading: float = 0.0
    speed: float = 0.0
    mass: float = 1500.0


def severity_delta_v(m_a, v_a, m_b, v_b, alpha):
    """Mass-weighted relative speed; radicand clamped at zero."""
    rad = v_a * v_a + v_b * v_b - 2.0 * v_a * v_b * np.cos(alpha)
    return m_a / (m_a + m_b) * np.sqrt(np.maximum(rad, 0.0))


def exposure_offsets(ego: EgoHypothesis, other: ObjectState, anchor: str = "world"):
    """``(ds, dl)`` between the heading-rotated ego and participant positions."""
    if anchor == "ego":
        ds, dl = pseudo_rotate((ego.s - other.s, ego.l - other.l), other.heading)
        return ds, dl
    s_e, l_e = pseudo_rotate((ego.s, ego.l), ego.heading)
    s_o, l_o = pseudo_rotate((other.s, other.l), other.heading)
    return s_e - s_o, l_e - l_o


def field_from_offsets(dv, ds, dl, coeffs: RiskCoeffs):
    """Risk value from severity and exposure, with the denominator floored."""
    den = np.sqrt(coeffs.c2 * (ds * np.exp(-coeffs.c3 * dv)) ** 2 + coeffs.c4 * dl * dl)
    return (coeffs.c0 * dv * dv + coeffs.c1) / np.maximum(den, coeffs.epsilon)


def risk_value(ego: EgoHypothesis, other: ObjectState, coeffs: RiskCoeffs = RiskCoeffs()) -> float:
    alpha = ego.heading - other.heading
    dv = severity_delta_v(ego.mass, ego.speed, other.mass, other.speed, alpha)
    ds, dl = exposure_offsets(ego, other, coeffs.anchor)
    return float(field_from_offsets(dv, ds, dl, coeffs))


def _component_samples(comp: GaussianComponent, z: np.ndarray) -> np.ndarray:
    """Map standard normals ``z`` (S, 2) onto the component's Gaussian.

    ``z`` is read in the participant's body frame and pushed through the
    symmetric square root of the covariance, so rotating a scene rotates
    its samples with it.
    """
    sx, sy = comp.std
    cov = np.array([[sx * sx, comp.corr * sx * sy], [comp.corr * sx * sy, sy * sy]])
    vals, vecs = np.linalg.eigh(cov)
    root = (vecs * np.sqrt(np.maximum(vals, 0.0))) @ vecs.T
    c, s = math.cos(comp.heading), math.sin(comp.heading)
    body = z @ np.array([[c, s], [-s, c]])
    return np.asarray(comp.mean, dtype=float) + body @ root.T


def _expected_field(px, py, ego_heading, samples, heading0, dv, coeffs: RiskCoeffs,
                    chunk: int = 4096) -> np.ndarray:
    """Mean of the risk field over ``samples`` at query points ``(px, py)``.

    ``ego_heading`` and ``dv`` may be scalars or per-point arrays.
    """
    px = np.asarray(px, dtype=float).ravel()
    py = np.asarray(py, dtype=float).ravel()
    dv = np.broadcast_to(np.asarray(dv, dtype=float), px.shape)
    c0, s0 = math.cos(heading0), math.sin(heading0)
    a = c0 * samples[:, 0] + s0 * samples[:, 1]
    b = -s0 * samples[:, 0] + c0 * samples[:, 1]
    if coeffs.anchor == "ego":
        A = c0 * px + s0 * py
        B = -s0 * px + c0 * py
    else:
        ch, sh = np.cos(ego_heading), np.sin(ego_heading)
        A = ch * px + sh * py
        B = -sh * px + ch * py
    k_s = math.sqrt(coeffs.c2) * np.exp(-coeffs.c3 * dv)
    k_l = math.sqrt(coeffs.c4)
    num = coeffs.c0 * dv * dv + coeffs.c1
    out = np.empty(px.shape)
    for lo in range(0, px.size, chunk):
        sl = slice(lo, lo + chunk)
        u = (A[sl, None] - a[None, :]) * k_s[sl, None]
        w = (B[sl, None] - b[None, :]) * k_l
        den = np.sqrt(u * u + w * w)
        np.maximum(den, coeffs.epsilon, out=den)
        out[sl] = num[sl] * np.mean(1.0 / den, axis=1)
    return out


def standard_normals(seed, *key, size: int) -> np.ndarray:
    """Reproducible ``(size, 2)`` normals keyed by ``(seed, *key)``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *[int(k) for k in key]])
    return np.random.default_rng(ss).standard_normal((size, 2))


def hierarchical_risk(ego: EgoHypothesis, component: GaussianComponent,
                      coeffs: RiskCoeffs = RiskCoeffs(), samples: int = 64, seed: int = 0) -> float:
    """Monte-Carlo expectation of the risk field over the participant's Gaussian."""
    if samples < 1:
        raise ValueError("need at least one sample")
    z = standard_normals(seed, size=samples)
    pts = _component_samples(component, z)
    dv = severity_delta_v(ego.mass, ego.speed, component.mass, component.speed,
                          ego.heading - component.heading)
    val = _expected_field([ego.s], [ego.l], ego.heading, pts, component.heading, dv, coeffs)
    return float(val[0])


@dataclass(frozen=True)
class GridSpec:
    """Cell-centre raster: ``x = x0 + i * res``, ``y = y0 + j * res``."""

    origin: tuple[float, float] = (EVAL_RANGE[0], EVAL_RANGE[2])
    resolution: float = 0.5
    width: int = 282
    height: int = 161

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("grid resolution must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("grid must have at least one cell")

    @classmethod
    def from_bounds(cls, xmin, xmax, ymin, ymax, resolution=0.5) -> "GridSpec":
        if resolution <= 0:
            raise ValueError("grid resolution must be positive")
        w = int(math.floor((xmax - xmin) / resolution + 1e-9)) + 1
        h = int(math.floor((ymax - ymin) / resolution + 1e-9)) + 1
        return cls((float(xmin), float(ymin)), float(resolution), w, h)

    @property
    def xs(self) -> np.ndarray:
        return self.origin[0] + self.resolution * np.arange(self.width)

    @property
    def ys(self) -> np.ndarray:
        return self.origin[1] + self.resolution * np.arange(self.height)


@dataclass(frozen=True)
class EgoParams:
    """Ego kinematics used for every hypothesised ego position."""

    speed: float
    mass: float = 1500.0
    heading: float = 0.0
    position: tuple[float, float] = (0.0, 0.0)
    heading_policy: str = "current"

    def __post_init__(self):
        if self.heading_policy not in ("current", "toward-cell"):
            raise ValueError("heading_policy must be 'current' or 'toward-cell'")

    def headings(self, px, py):
        if self.heading_policy == "current":
            return self.heading
        dx, dy = px - self.position[0], py - self.position[1]
        toward = np.arctan2(dy, dx)
        return np.where(np.hypot(dx, dy) < 1e-9, self.heading, toward)


@dataclass(frozen=True)
class RiskMap:
    """Per-step risk rasters, ``layers[t, row(y), col(x)]``."""

    grid: GridSpec
    layers: np.ndarray
    coeffs: RiskCoeffs = field(default_factory=RiskCoeffs)
    layer_dt: float = DT

    def __post_init__(self):
        arr = np.array(self.layers, dtype=float)
        if arr.ndim != 3 or arr.shape[1:] != (self.grid.height, self.grid.width):
            raise ValueError("layers must have shape (T, height, width)")
        if not np.isfinite(arr).all() or (arr < 0).any():
            raise ValueError("risk values must be finite and non-negative")
        arr.setflags(write=False)
        object.__setattr__(self, "layers", arr)

    @property
    def layer_count(self) -> int:
        return self.layers.shape[0]

    def layer_index(self, t: float, persist: bool = True) -> int | None:
        k = int(math.floor(t / self.layer_dt + 0.5))
        if k >= self.layer_count:
            return self.layer_count - 1 if persist else None
        return max(k, 0)

    def sample(self, x: float, y: float, layer: int | None):
        """Bilinear value and spatial gradient; ``None`` when off the grid.

        Returns ``(value, dv/dx, dv/dy)``. A ``None`` layer reads as zero.
        """
        if layer is None:
            return 0.0, 0.0, 0.0
        g = self.grid
        fx = (x - g.origin[0]) / g.resolution
        fy = (y - g.origin[1]) / g.resolution
        if not (0.0 <= fx <= g.width - 1 and 0.0 <= fy <= g.height - 1):
            return None
        i = min(int(fx), g.width - 2) if g.width > 1 else 0
        j = min(int(fy), g.height - 2) if g.height > 1 else 0
        tx, ty = fx - i, fy - j
        L = self.layers[layer]
        i1, j1 = min(i + 1, g.width - 1), min(j + 1, g.height - 1)
        v00, v10 = L[j, i], L[j, i1]
        v01, v11 = L[j1, i], L[j1, i1]
        val = (v00 * (1 - tx) * (1 - ty) + v10 * tx * (1 - ty)
               + v01 * (1 - tx) * ty + v11 * tx * ty)
        dx = ((v10 - v00) * (1 - ty) + (v11 - v01) * ty) / g.resolution
        dy = ((v01 - v00) * (1 - tx) + (v11 - v10) * tx) / g.resolution
        return float(val), float(dx), float(dy)

    def sample_many(self, x, y, layers):
        """Vectorized :meth:`sample` for arrays of points and layer indices.

        ``layers`` entries of ``-1`` read as zero. Returns ``(value, dx, dy,
        inside)``; off-grid points have zero value and gradient and
        ``inside`` False.
        """
        g = self.grid
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        layers = np.asarray(layers, dtype=int)
        fx = (x - g.origin[0]) / g.resolution
        fy = (y - g.origin[1]) / g.resolution
        inside = (fx >= 0) & (fx <= g.width - 1) & (fy >= 0) & (fy <= g.height - 1)
        val, dx, dy = np.zeros(x.shape), np.zeros(x.shape), np.zeros(x.shape)
        ok = inside & (layers >= 0)
        if ok.any():
            fxo, fyo, lay = fx[ok], fy[ok], layers[ok]
            i = np.minimum(fxo.astype(int), max(g.width - 2, 0))
            j = np.minimum(fyo.astype(int), max(g.height - 2, 0))
            tx, ty = fxo - i, fyo - j
            i1, j1 = np.minimum(i + 1, g.width - 1), np.minimum(j + 1, g.height - 1)
            L = self.layers
            v00, v10 = L[lay, j, i], L[lay, j, i1]
            v01, v11 = L[lay, j1, i], L[lay, j1, i1]
            val[ok] = (v00 * (1 - tx) * (1 - ty) + v10 * tx * (1 - ty)
                       + v01 * (1 - tx) * ty + v11 * tx * ty)
            dx[ok] = ((v10 - v00) * (1 - ty) + (v11 - v01) * ty) / g.resolution
            dy[ok] = ((v01 - v00) * (1 - tx) + (v11 - v10) * tx) / g.resolution
        return val, dx, dy, inside

    # -- export ------------------------------------------------------------

    def to_bytes(self) -> bytes:
        g = self.grid
        head = MAGIC + struct.pack("<HIIfffH", FORMAT_VERSION, g.width, g.height,
                                   g.resolution, g.origin[0], g.origin[1], self.layer_count)
        return head + self.layers.astype("<f4").tobytes(order="C")

    def write_binary(self, path) -> Path:
        path = Path(path)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def from_bytes(cls, data: bytes) -> "RiskMap":
        if data[:4] != MAGIC:
            raise ValueError("not a risk-map binary")
        size = struct.calcsize("<HIIfffH")
        version, w, h, res, ox, oy, n = struct.unpack("<HIIfffH", data[4:4 + size])
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported risk-map version {version}")
        layers = np.frombuffer(data[4 + size:], dtype="<f4").reshape(n, h, w)
        return cls(GridSpec((float(ox), float(oy)), float(res), w, h), layers.astype(float))

    def write_csv(self, directory) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for t, layer in enumerate(self.layers):
            p = directory / f"riskmap_t{t}.csv"
            np.savetxt(p, layer, delimiter=",", fmt="%.6g")
            paths.append(p)
        return paths


def build_risk_map(dist: TrajectoryDistribution, ego: EgoParams, grid: GridSpec = GridSpec(),
                   coeffs: RiskCoeffs = RiskCoeffs(), samples: int = 64, seed: int = 0,
                   reduce: str = "sum") -> RiskMap:
    """Rasterize the weighted mixture risk for steps ``0..K``.

    Layer 0 evaluates the plain field at each participant's current state.
    Layer ``t`` sums ``w[m, n] * E[V]`` over modes and participants, the
    expectation taken over the ``(m, n, t)`` Gaussian with the mode's speed
    and heading. Standard normals are keyed by ``(seed, t, n, m)`` and shared
    by every cell, so cells are evaluated independently of one another.
    ``reduce="max"`` keeps the largest weighted term instead of the sum.
    """
    if reduce not in ("sum", "max"):
        raise ValueError("reduce must be 'sum' or 'max'")
    M, N, K = dist.shape
    X, Y = np.meshgrid(grid.xs, grid.ys)
    px, py = X.ravel(), Y.ravel()
    heading_e = ego.headings(px, py)
    layers = np.zeros((K + 1, px.size))

    def accumulate(t, term):
        if reduce == "sum":
            layers[t] += term
        else:
            np.maximum(layers[t], term, out=layers[t])

    for n in range(N):
        s0, l0, h0, v0 = dist.current[n]
        dv = severity_delta_v(ego.mass, ego.speed, dist.masses[n], v0, heading_e - h0)
        accumulate(0, _expected_field(px, py, heading_e, np.array([[s0, l0]]), h0, dv, coeffs))
        for m in range(M):
            w = dist.weights[m, n]
            if w == 0.0:
                continue
            for k in range(K):
                comp = GaussianComponent(
                    mean=tuple(dist.means[m, n, k]), std=tuple(dist.stds[m, n, k]),
                    corr=float(dist.corr[m, n, k]), heading=float(dist.headings[m, n, k]),
                    speed=float(dist.speeds[m, n, k]), mass=float(dist.masses[n]))
                pts = _component_samples(comp, standard_normals(seed, k + 1, n, m, size=samples))
                dv = severity_delta_v(ego.mass, ego.speed, comp.mass, comp.speed,
                                      heading_e - comp.heading)
                accumulate(k + 1, w * _expected_field(px, py, heading_e, pts, comp.heading, dv, coeffs))
    return RiskMap(grid, layers.reshape(K + 1, grid.height, grid.width), coeffs, dist.dt)
