"""Risk-map model-predictive planner.

State ``X = (s, v, l, phi)``, control ``U = (a, delta)``. The linearized
bicycle model is

    s' = s + dt v,  v' = v + dt a,  l' = l + dt v phi,  phi' = phi + dt (v / L) delta

and the cost is ``sum_{k<K} V(X_k) + (X_k - X_k^d)^T Q (X_k - X_k^d)`` with
``V`` read from a :class:`~cooperrisk.riskmap.RiskMap`. Controls are
improved by projected gradient steps, re-rolling the state after each.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .riskmap import RiskMap

log = logging.getLogger(__name__)

GRADIENT_MODES = ("analytic-standard", "as-written", "finite-difference")


def _default_q() -> np.ndarray:
    # light longitudinal tracking so that yielding costs less than the risk it avoids
    return np.diag([0.0005, 0.01, 1.0, 2.0])


@dataclass(frozen=True)
class PlannerConfig:
    horizon: int = 10
    dt: float = 0.5
    wheelbase: float = 2.8
    Q: np.ndarray = field(default_factory=_default_q)
    desired_speed: float | None = None
    iterations: int = 150
    step: float = 0.05
    a_max: float = 3.0
    delta_max: float = 0.5
    gradient_mode: str = "analytic-standard"
    backtracking: bool = True
    max_halvings: int = 30
    boundary_penalty: float = 0.0
    # steps past the last risk layer see zero risk unless this is set
    persist_layers: bool = False
    fd_step: float = 1e-5
    # constant accelerations used as starting guesses when no U0 is given
    warm_starts: tuple[float, ...] = (0.0, -1.5, -3.0)

    def __post_init__(self):
        if self.horizon < 1 or self.dt <= 0 or self.wheelbase <= 0:
            raise ValueError("need horizon >= 1, dt > 0 and wheelbase > 0")
        if self.step <= 0 or self.iterations < 1:
            raise ValueError("need step > 0 and iterations >= 1")
        if not self.warm_starts:
            raise ValueError("need at least one warm start")
        if self.gradient_mode not in GRADIENT_MODES:
            raise ValueError(f"gradient_mode must be one of {GRADIENT_MODES}")
        q = np.asarray(self.Q, dtype=float)
        if q.shape != (4, 4) or np.linalg.eigvalsh(0.5 * (q + q.T)).min() < -1e-12:
            raise ValueError("Q must be a 4x4 positive semi-definite matrix")
        object.__setattr__(self, "Q", q)


@dataclass(frozen=True)
class PlanResult:
    trajectory: np.ndarray  # (K + 1, 4)
    controls: np.ndarray  # (K, 2)
    cost_history: tuple[float, ...]
    converged: bool

    @property
    def cost(self) -> float:
        return self.cost_history[-1]

    def times(self, dt: float) -> np.ndarray:
        return dt * np.arange(len(self.trajectory))

    def to_csv(self, path, dt: float) -> None:
        u = np.vstack([self.controls, np.full((1, 2), np.nan)])
        rows = np.column_stack([self.times(dt), self.trajectory, u])
        np.savetxt(path, rows, delimiter=",", header="t,s,v,l,phi,a,delta",
                   comments="", fmt="%.6f")


def system_matrices(X, cfg: PlannerConfig):
    """``A_k`` and ``B_k`` linearized at the speed of ``X``."""
    v = X[1]
    A = np.eye(4)
    A[0, 1] = cfg.dt
    A[2, 3] = cfg.dt * v
    B = np.zeros((4, 2))
    B[1, 0] = cfg.dt
    B[3, 1] = cfg.dt * v / cfg.wheelbase
    return A, B


def dynamics_step(X, U, cfg: PlannerConfig) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    A, B = system_matrices(X, cfg)
    return A @ X + B @ np.asarray(U, dtype=float)


def rollout(X0, U, cfg: PlannerConfig) -> np.ndarray:
    """Roll ``U`` forward from ``X0``; each step uses :func:`dynamics_step`'s update."""
    U = np.asarray(U, dtype=float)
    out = np.empty((len(U) + 1, 4))
    s, v, l, phi = (float(x) for x in X0)
    out[0] = (s, v, l, phi)
    dt, L = cfg.dt, cfg.wheelbase
    for k in range(len(U)):
        a, delta = U[k]
        s, v, l, phi = s + dt * v, v + dt * a, l + dt * v * phi, phi + dt * v / L * delta
        out[k + 1] = (s, v, l, phi)
    return out


def desired_state(k: int, cfg: PlannerConfig, s0: float, v_star: float | None = None) -> np.ndarray:
    v = cfg.desired_speed if v_star is None else v_star
    return np.array([s0 + k * cfg.dt * v, v, 0.0, 0.0])


def _desired(cfg: PlannerConfig, s0: float, v_star: float) -> np.ndarray:
    k = np.arange(cfg.horizon)
    Xd = np.zeros((cfg.horizon, 4))
    Xd[:, 0] = s0 + k * cfg.dt * v_star
    Xd[:, 1] = v_star
    return Xd


def _v_star(cfg: PlannerConfig, X0) -> float:
    return float(X0[1]) if cfg.desired_speed is None else cfg.desired_speed


def _risk_terms(X, riskmap: RiskMap | None, cfg: PlannerConfig):
    """Per-step risk value and its ``(ds, dl)`` gradient for states ``X[:K]``."""
    K = cfg.horizon
    if riskmap is None:
        return np.zeros(K), np.zeros((K, 2))
    layers = [riskmap.layer_index(k * cfg.dt, cfg.persist_layers) for k in range(K)]
    layers = np.array([-1 if i is None else i for i in layers])
    vals, ds, dl, inside = riskmap.sample_many(X[:K, 0], X[:K, 2], layers)
    vals[~inside & (layers >= 0)] = cfg.boundary_penalty
    return vals, np.column_stack([ds, dl])


def plan_cost(trajectory, riskmap: RiskMap | None, cfg: PlannerConfig, v_star: float | None = None) -> float:
    """Risk plus tracking cost of a state trajectory over steps ``0..K-1``."""
    X = np.asarray(trajectory, dtype=float)
    v_star = _v_star(cfg, X[0]) if v_star is None else v_star
    K = cfg.horizon
    risk, _ = _risk_terms(X, riskmap, cfg)
    E = X[:K] - _desired(cfg, X[0, 0], v_star)
    return float(risk.sum() + np.einsum("ki,ij,kj->", E, cfg.Q, E))


def cost_and_gradient(U, X0, riskmap: RiskMap | None, cfg: PlannerConfig, v_star: float | None = None):
    """Cost and exact ``dJ/dU`` by reverse accumulation through the rollout."""
    U = np.asarray(U, dtype=float)
    X0 = np.asarray(X0, dtype=float)
    v_star = _v_star(cfg, X0) if v_star is None else v_star
    K = cfg.horizon
    X = rollout(X0, U, cfg)
    risk, rgrad = _risk_terms(X, riskmap, cfg)
    E = X[:K] - _desired(cfg, X0[0], v_star)
    J = float(risk.sum() + np.einsum("ki,ij,kj->", E, cfg.Q, E))
    Qs = cfg.Q + cfg.Q.T
    dt, L = cfg.dt, cfg.wheelbase
    lam = np.zeros(4)  # dJ/dX_{k+1}; X_K carries no cost
    g = np.zeros((K, 2))
    for k in range(K - 1, -1, -1):
        s, v, l, phi = X[k]
        a, delta = U[k]
        g[k, 0] = dt * lam[1]
        g[k, 1] = dt * v / L * lam[3]
        dl = Qs @ E[k]
        dl[0] += rgrad[k, 0]
        dl[2] += rgrad[k, 1]
        # transpose of d f / d X at step k
        lam = np.array([
            lam[0],
            dt * lam[0] + lam[1] + dt * phi * lam[2] + dt * delta / L * lam[3],
            lam[2],
            dt * v * lam[2] + lam[3],
        ]) + dl
    return J, g


def as_written_gradient(U, X0, riskmap: RiskMap | None, cfg: PlannerConfig, v_star=None):
    """Per-step update direction with Jacobian terms scaled by the cost terms.

    ``B_k^T dV/dX V(X_k) + B_k^T Q e_k (e_k^T Q e_k)``, all at step ``k``.
    """
    X0 = np.asarray(X0, dtype=float)
    v_star = _v_star(cfg, X0) if v_star is None else v_star
    X = rollout(X0, U, cfg)
    K = cfg.horizon
    risk, rgrad = _risk_terms(X, riskmap, cfg)
    g = np.zeros((K, 2))
    for k in range(K):
        _, B = system_matrices(X[k], cfg)
        e = X[k] - desired_state(k, cfg, X0[0], v_star)
        dV = np.array([rgrad[k, 0], 0.0, rgrad[k, 1], 0.0])
        Qe = cfg.Q @ e
        g[k] = B.T @ dV * risk[k] + B.T @ Qe * float(e @ Qe)
    return g


def finite_difference_gradient(U, X0, riskmap, cfg: PlannerConfig, v_star=None, h=None):
    U = np.asarray(U, dtype=float)
    h = cfg.fd_step if h is None else h
    g = np.zeros_like(U)

    def J(u):
        return plan_cost(rollout(X0, u, cfg), riskmap, cfg, v_star)

    for idx in np.ndindex(U.shape):
        up, dn = U.copy(), U.copy()
        up[idx] += h
        dn[idx] -= h
        g[idx] = (J(up) - J(dn)) / (2 * h)
    return g


def _project(U, cfg: PlannerConfig, X0=None) -> np.ndarray:
    """Clip controls to their bounds; with ``X0`` also keep the rolled-out speed non-negative."""
    out = np.empty_like(U)
    out[:, 0] = np.clip(U[:, 0], -cfg.a_max, cfg.a_max)
    out[:, 1] = np.clip(U[:, 1], -cfg.delta_max, cfg.delta_max)
    if X0 is not None:
        v = float(X0[1])
        for k in range(len(out)):
            if v + cfg.dt * out[k, 0] < 0.0:
                out[k, 0] = -v / cfg.dt
            v = max(v + cfg.dt * out[k, 0], 0.0)
    return out


def _descend(X0, U, riskmap, cfg: PlannerConfig, v_star: float):
    J = plan_cost(rollout(X0, U, cfg), riskmap, cfg, v_star)
    history = [J]
    eta = cfg.step
    for it in range(cfg.iterations):
        if cfg.gradient_mode == "analytic-standard":
            _, g = cost_and_gradient(U, X0, riskmap, cfg, v_star)
        elif cfg.gradient_mode == "as-written":
            g = as_written_gradient(U, X0, riskmap, cfg, v_star)
        else:
            g = finite_difference_gradient(U, X0, riskmap, cfg, v_star)
        # try twice the last accepted step, never more than the configured one
        eta = min(cfg.step, 2.0 * eta) if cfg.backtracking else cfg.step
        moved = False
        for _ in range(cfg.max_halvings + 1 if cfg.backtracking else 1):
            U_new = _project(U - eta * g, cfg, X0)
            J_new = plan_cost(rollout(X0, U_new, cfg), riskmap, cfg, v_star)
            if not cfg.backtracking or J_new <= J:
                moved = not np.array_equal(U_new, U)
                U, J = U_new, J_new
                break
            eta *= 0.5
        history.append(J)
        if not moved:
            # the next iteration would see the same gradient and fail the same way
            history.extend([J] * (cfg.iterations - it - 1))
            break
    return U, history


def solve_mpc(X0, riskmap: RiskMap | None, cfg: PlannerConfig = PlannerConfig(), U0=None) -> PlanResult:
    """Projected gradient descent on the control sequence.

    Each iteration takes ``U <- proj(U - eta g)`` and re-rolls the state.
    With ``backtracking`` the step is halved until the cost does not rise;
    if no halving helps, the controls are left as they are. Without ``U0``
    the descent is started from each constant acceleration in
    ``cfg.warm_starts`` and the cheapest result is kept, since the risk
    term makes the cost non-convex.
    """
    X0 = np.asarray(X0, dtype=float)
    v_star = _v_star(cfg, X0)
    K = cfg.horizon
    if U0 is not None:
        starts = [_project(np.asarray(U0, dtype=float), cfg, X0)]
    else:
        starts = [_project(np.column_stack([np.full(K, a), np.zeros(K)]), cfg, X0) for a in cfg.warm_starts]
    best = None
    for U_init in starts:
        U, history = _descend(X0, U_init, riskmap, cfg, v_star)
        if best is None or history[-1] < best[1][-1]:
            best = (U, history)
    U, history = best
    window = max(cfg.iterations // 4, 1)
    _, g = cost_and_gradient(U, X0, riskmap, cfg, v_star)
    stationary = np.linalg.norm(U - _project(U - g, cfg, X0)) < 1e-6
    converged = bool(history[-1] < history[-1 - window] or stationary)
    if not converged:
        log.warning("MPC cost did not decrease over the last %d iterations", window)
    return PlanResult(rollout(X0, U, cfg), U, tuple(history), converged)
