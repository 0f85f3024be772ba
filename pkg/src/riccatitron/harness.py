"""Simulation harness: disturbance generators, baselines, best-in-hindsight
comparators, regret curves, and the exp-concave movement-cost experiment.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import controller as ctrl
from .dap import DapPolicy, DapSet, default_dap_set, project_dap, q_feature_matrix, vectorize
from .exceptions import ConfigError
from .lqr import (
    LinearSystem,
    RiccatiInfinite,
    certify_strong_stability,
    derive_infinite_horizon,
    opnorm,
    problem_scales,
    solve_dare,
    spectral_radius,
)
from .oco import Box, OnlineNewtonStep, Unconstrained, ons_default_params
from .riccati import DisturbanceSequence
from .trajectory import Trajectory, rollout

__all__ = [
    "ZeroGen",
    "ConstantGen",
    "SinusoidGen",
    "ClippedGaussianGen",
    "RademacherGen",
    "AlternatingBiasGen",
    "make_generator",
    "simulate",
    "FeedbackPolicy",
    "feedback_policy",
    "best_feedback_in_hindsight",
    "best_dap_in_hindsight",
    "RegretRow",
    "ExperimentResult",
    "regret_experiment",
    "CounterexampleReport",
    "counterexample_experiment",
    "worker_count",
]


# ---------------------------------------------------------------------------
# Disturbance generators. Every generator emits vectors in the unit ball.


@dataclass(frozen=True)
class ZeroGen:
    dx: int

    def sequence(self, T: int) -> np.ndarray:
        return np.zeros((T, self.dx))


@dataclass(frozen=True)
class ConstantGen:
    v: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float).reshape(-1)
        if np.linalg.norm(v) > 1.0 + 1e-12:
            raise ValueError("constant disturbance must lie in the unit ball")
        object.__setattr__(self, "v", v)

    def sequence(self, T: int) -> np.ndarray:
        return np.tile(self.v, (T, 1))


@dataclass(frozen=True)
class SinusoidGen:
    direction: np.ndarray
    frequency: float
    phase: float = 0.0

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float).reshape(-1)
        if np.linalg.norm(d) > 1.0 + 1e-12:
            raise ValueError("sinusoid direction must lie in the unit ball")
        object.__setattr__(self, "direction", d)

    def sequence(self, T: int) -> np.ndarray:
        t = np.arange(1, T + 1)
        amp = np.sin(2.0 * np.pi * self.frequency * t + self.phase)
        return np.outer(amp, self.direction)


@dataclass(frozen=True)
class ClippedGaussianGen:
    dx: int
    seed: int
    scale: float = 0.5

    def sequence(self, T: int) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        w = rng.normal(0.0, self.scale, size=(T, self.dx))
        norms = np.linalg.norm(w, axis=1, keepdims=True)
        # Scale anything outside the unit ball back onto the sphere.
        factors = np.where(norms > 1.0, norms, 1.0)
        return w / factors


@dataclass(frozen=True)
class RademacherGen:
    dx: int
    seed: int

    def sequence(self, T: int) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        signs = rng.integers(0, 2, size=(T, self.dx)) * 2 - 1
        return signs / np.sqrt(self.dx)


@dataclass(frozen=True)
class AlternatingBiasGen:
    """w_t proportional to ((-1)^t + mu/2) e_1, scaled into the unit ball."""

    dx: int
    mu: float

    def sequence(self, T: int) -> np.ndarray:
        t = np.arange(1, T + 1)
        raw = (-1.0) ** t + self.mu / 2.0
        out = np.zeros((T, self.dx))
        out[:, 0] = raw / (1.0 + abs(self.mu) / 2.0)
        return out


_GEN_KINDS = {
    "zero",
    "constant",
    "sinusoid",
    "clipped_gaussian",
    "rademacher",
    "alternating_bias",
}


def make_generator(spec: dict, dx: int):
    """Build a generator from a config mapping with a ``kind`` key."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind not in _GEN_KINDS:
        raise ConfigError(f"unknown disturbance kind {kind!r}")
    try:
        if kind == "zero":
            _reject_extra(spec)
            return ZeroGen(dx=dx)
        if kind == "constant":
            v = spec.pop("v")
            _reject_extra(spec)
            return ConstantGen(v=np.asarray(v, dtype=float))
        if kind == "sinusoid":
            gen = SinusoidGen(
                direction=np.asarray(spec.pop("direction"), dtype=float),
                frequency=float(spec.pop("frequency")),
                phase=float(spec.pop("phase", 0.0)),
            )
            _reject_extra(spec)
            return gen
        if kind == "clipped_gaussian":
            gen = ClippedGaussianGen(
                dx=dx, seed=int(spec.pop("seed", 0)), scale=float(spec.pop("scale", 0.5))
            )
            _reject_extra(spec)
            return gen
        if kind == "rademacher":
            gen = RademacherGen(dx=dx, seed=int(spec.pop("seed", 0)))
            _reject_extra(spec)
            return gen
        gen = AlternatingBiasGen(dx=dx, mu=float(spec.pop("mu")))
        _reject_extra(spec)
        return gen
    except KeyError as exc:
        raise ConfigError(f"disturbance spec missing key {exc}") from exc


def _reject_extra(spec: dict) -> None:
    if spec:
        raise ConfigError(f"unknown disturbance keys: {sorted(spec)}")


# ---------------------------------------------------------------------------
# Policies and simulation.


class FeedbackPolicy:
    """Stateless linear state feedback u = -K x."""

    def __init__(self, K: np.ndarray):
        self.K = np.atleast_2d(np.asarray(K, dtype=float))

    def act(self, x: np.ndarray) -> np.ndarray:
        return -self.K @ np.asarray(x, dtype=float)

    def observe(self, w: np.ndarray) -> None:
        pass


def feedback_policy(K: np.ndarray) -> FeedbackPolicy:
    return FeedbackPolicy(K)


def simulate(system: LinearSystem, policy, gen, T: int) -> Trajectory:
    """Materialize T disturbances from the generator and roll the policy."""
    return rollout(system, policy, DisturbanceSequence(gen.sequence(T)))


# ---------------------------------------------------------------------------
# Best-in-hindsight comparators.


def best_feedback_in_hindsight(
    system: LinearSystem,
    w: DisturbanceSequence,
    kappa0: float,
    gamma0: float,
    grid_points: int = 15,
):
    """Grid search for the best strongly stable state-feedback gain.

    Each gain entry ranges over a uniform grid in [-kappa0, kappa0];
    candidates must have operator norm at most kappa0 and a
    constructive (kappa0, gamma0) stability certificate. One local
    coordinate-descent pass refines the grid optimum.
    """
    du, dx = system.du, system.dx
    n_entries = du * dx
    if n_entries > 4:
        raise ValueError("grid search supports at most 4 gain entries")
    axis = np.linspace(-kappa0, kappa0, grid_points)

    def feasible(K: np.ndarray) -> bool:
        if opnorm(K) > kappa0 + 1e-12:
            return False
        if spectral_radius(system.A - system.B @ K) >= 1.0:
            return False
        cert = certify_strong_stability(system, K)
        return cert.kappa <= kappa0 + 1e-9 and cert.gamma <= gamma0 + 1e-9

    def cost(K: np.ndarray) -> float:
        return rollout(system, FeedbackPolicy(K), w).total_cost

    best_K, best_J = None, math.inf
    grids = np.meshgrid(*([axis] * n_entries), indexing="ij")
    flat = np.stack([g.reshape(-1) for g in grids], axis=1)
    for entries in flat:
        K = entries.reshape(du, dx)
        if not feasible(K):
            continue
        J = cost(K)
        if J < best_J:
            best_K, best_J = K, J
    if best_K is None:
        raise ValueError(
            f"no feasible gain on a {grid_points}^{n_entries} grid with "
            f"kappa0={kappa0}, gamma0={gamma0}"
        )
    # One coordinate-descent refinement pass around the grid optimum.
    spacing = axis[1] - axis[0] if grid_points > 1 else kappa0
    for idx in range(n_entries):
        candidates = best_K.reshape(-1)[idx] + np.linspace(-spacing, spacing, grid_points)
        for c in candidates:
            K = best_K.copy().reshape(-1)
            K[idx] = c
            K = K.reshape(du, dx)
            if not feasible(K):
                continue
            J = cost(K)
            if J < best_J:
                best_K, best_J = K, J
    return best_K, best_J


def _dap_cost_quadratic(
    system: LinearSystem, ricc_inf: RiccatiInfinite, w: DisturbanceSequence, m: int
):
    """Exact quadratic J(v) = c + 2 g.v + v' H v for the affine map from
    vectorized lag matrices to closed-loop trajectories."""
    T, dx, du = w.T, system.dx, system.du
    d = m * du * dx
    K_inf, Acl, B = ricc_inf.K_inf, ricc_inf.Acl_inf, system.B
    # Column 0 carries the disturbance-driven offset; columns 1..d the
    # responses to unit lag-matrix entries.
    X = np.zeros((T, dx, d + 1))
    U = np.zeros((T, du, d + 1))
    x_cur = np.zeros((dx, d + 1))
    for t in range(1, T + 1):
        feats = q_feature_matrix(w.history(t, m), m, du)
        q_all = np.zeros((du, d + 1))
        q_all[:, 1:] = feats
        X[t - 1] = x_cur
        U[t - 1] = -K_inf @ x_cur - q_all
        x_next = Acl @ x_cur - B @ q_all
        x_next[:, 0] += w.w(t)
        x_cur = x_next
    H = np.einsum("tia,ij,tjb->ab", X, system.Rx, X) + np.einsum(
        "tia,ij,tjb->ab", U, system.Ru, U
    )
    H = 0.5 * (H + H.T)
    return H[0, 0], H[1:, 0], H[1:, 1:]


def _power_iteration_max_eig(H: np.ndarray, iters: int = 200, tol: float = 1e-12) -> float:
    d = H.shape[0]
    v = np.full(d, 1.0 / math.sqrt(d))
    lam = 0.0
    for _ in range(iters):
        v_next = H @ v
        nrm = np.linalg.norm(v_next)
        if nrm == 0.0:
            return 0.0
        v_next /= nrm
        lam_next = float(v_next @ H @ v_next)
        if abs(lam_next - lam) <= tol * max(1.0, abs(lam_next)):
            return lam_next
        v, lam = v_next, lam_next
    return lam


def best_dap_in_hindsight(
    system: LinearSystem,
    ricc_inf: RiccatiInfinite,
    w: DisturbanceSequence,
    dap_set: DapSet,
    T: Optional[int] = None,
    max_iter: int = 2000,
    tol: float = 1e-9,
):
    """Offline optimum over the disturbance-action set.

    The closed-loop cost is an exact quadratic in the vectorized lag
    matrices; projected gradient descent with step 1/L (L from power
    iteration) minimizes it under the per-lag norm caps. Starts at the
    zero policy, so the returned cost never exceeds the pure feedback
    baseline.
    """
    if T is not None and T != w.T:
        w = DisturbanceSequence(w.values[:T])
    du, dx, m = system.du, system.dx, dap_set.m
    c0, g, H = _dap_cost_quadratic(system, ricc_inf, w, m)
    lam_max = max(_power_iteration_max_eig(H), 1e-12)

    def cost(v):
        return float(c0 + 2.0 * g @ v + v @ H @ v)

    def project(v):
        return vectorize(project_dap(v.reshape(m, du, dx), dap_set))

    v = np.zeros(m * du * dx)
    best_v, best_J = v.copy(), cost(v)
    prev = best_J
    for _ in range(max_iter):
        v = project(v - (H @ v + g) / lam_max)
        J = cost(v)
        if J < best_J:
            best_v, best_J = v.copy(), J
        if prev - J <= tol * max(1.0, abs(prev)):
            break
        prev = J
    return DapPolicy(best_v.reshape(m, du, dx)), best_J


# ---------------------------------------------------------------------------
# Regret experiments.


@dataclass(frozen=True)
class RegretRow:
    t: int
    cost_algorithm: float
    cost_comparator: float
    regret: float
    comparator_kind: str


@dataclass
class ExperimentResult:
    rows: list[RegretRow]
    comparator_kind: str
    comparator_optimum: float
    config_snapshot: dict
    wall_time_s: float


def worker_count(n_cells: int) -> int:
    """Worker threads for independent cells, capped by RICCATITRON_THREADS."""
    cap = os.environ.get("RICCATITRON_THREADS", "")
    try:
        cap_val = int(cap) if cap else (os.cpu_count() or 1)
    except ValueError:
        cap_val = 1
    return max(1, min(cap_val, n_cells))


def _build_policy(system, ricc_inf, controller_spec: dict, T: int):
    """Instantiate the controller named by the spec for one horizon."""
    spec = dict(controller_spec)
    kind = spec.pop("kind", "riccatitron")
    if kind == "k_inf":
        _reject_extra_controller(spec)
        return FeedbackPolicy(ricc_inf.K_inf), None
    if kind == "fixed_k":
        K = np.asarray(spec.pop("K"), dtype=float)
        _reject_extra_controller(spec)
        return FeedbackPolicy(K), None
    if kind != "riccatitron":
        raise ConfigError(f"unknown controller kind {kind!r}")
    scales = problem_scales(system, ricc_inf.P_inf)
    kappa0 = float(spec.pop("kappa0", ricc_inf.kappa_inf))
    gamma0 = float(spec.pop("gamma0", ricc_inf.gamma_inf))
    learner_kind = spec.pop("learner_kind", "vaw")
    overrides = {
        key: float(spec.pop(key))
        for key in ("grad_bound", "diameter", "exp_concavity")
        if key in spec
    }
    _reject_extra_controller(spec)
    config = ctrl.default_config(
        system, scales, ricc_inf, kappa0, gamma0, T, learner_kind=learner_kind, **overrides
    )
    return ctrl.Riccatitron(system, config), config


def _reject_extra_controller(spec: dict) -> None:
    if spec:
        raise ConfigError(f"unknown controller keys: {sorted(spec)}")


def _comparator_cost(system, ricc_inf, w, comparator_spec: dict, T: int) -> float:
    spec = dict(comparator_spec)
    kind = spec.pop("kind", "best_dap")
    if kind == "none":
        _reject_extra_controller(spec)
        return 0.0
    if kind == "k_inf":
        _reject_extra_controller(spec)
        return rollout(system, FeedbackPolicy(ricc_inf.K_inf), w).total_cost
    scales = problem_scales(system, ricc_inf.P_inf)
    kappa0 = float(spec.pop("kappa0", ricc_inf.kappa_inf))
    gamma0 = float(spec.pop("gamma0", ricc_inf.gamma_inf))
    if kind == "best_dap":
        dap_set = default_dap_set(scales, ricc_inf, kappa0, gamma0, T)
        _reject_extra_controller(spec)
        _, J = best_dap_in_hindsight(system, ricc_inf, w, dap_set)
        return J
    if kind == "best_k":
        grid_points = int(spec.pop("grid_points", 15))
        _reject_extra_controller(spec)
        _, J = best_feedback_in_hindsight(system, w, kappa0, gamma0, grid_points)
        return J
    raise ConfigError(f"unknown comparator kind {kind!r}")


def regret_experiment(
    system: LinearSystem,
    controller_spec: dict,
    gen,
    T_list: list[int],
    comparator_spec: dict,
    comparator_mode: str = "prefix",
) -> ExperimentResult:
    """Run the configured controller against a comparator at each horizon.

    Each horizon is an independent cell (fresh controller sized for
    that T, same generator); cells may run on worker threads and are
    merged deterministically. ``prefix`` mode recomputes the comparator
    optimum per horizon; ``fixed`` evaluates prefix costs of the final
    horizon's optimum; ``both`` emits the two sets of rows.
    """
    if comparator_mode not in ("prefix", "fixed", "both"):
        raise ConfigError(f"unknown comparator mode {comparator_mode!r}")
    t_start = time.perf_counter()
    P_inf = solve_dare(system)
    ricc_inf = derive_infinite_horizon(system, P_inf)
    T_list = sorted(int(t) for t in T_list)
    comparator_kind = dict(comparator_spec).get("kind", "best_dap")

    def run_cell(T: int):
        w = DisturbanceSequence(gen.sequence(T))
        policy, _ = _build_policy(system, ricc_inf, controller_spec, T)
        traj = rollout(system, policy, w)
        prefix_opt = (
            _comparator_cost(system, ricc_inf, w, comparator_spec, T)
            if comparator_mode in ("prefix", "both")
            else None
        )
        return traj, prefix_opt

    workers = worker_count(len(T_list))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(run_cell, T_list))
    else:
        cells = [run_cell(T) for T in T_list]

    rows: list[RegretRow] = []
    comparator_optimum = 0.0
    if comparator_mode in ("prefix", "both"):
        for T, (traj, prefix_opt) in zip(T_list, cells):
            rows.append(
                RegretRow(
                    t=T,
                    cost_algorithm=traj.total_cost,
                    cost_comparator=prefix_opt,
                    regret=traj.total_cost - prefix_opt,
                    comparator_kind=f"{comparator_kind}_prefix",
                )
            )
        comparator_optimum = cells[-1][1]
    if comparator_mode in ("fixed", "both"):
        T_max = T_list[-1]
        w_full = DisturbanceSequence(gen.sequence(T_max))
        fixed_cost_curve = _fixed_comparator_curve(
            system, ricc_inf, w_full, comparator_spec, T_list
        )
        for T, (traj, _), comp_cost in zip(T_list, cells, fixed_cost_curve):
            rows.append(
                RegretRow(
                    t=T,
                    cost_algorithm=traj.total_cost,
                    cost_comparator=comp_cost,
                    regret=traj.total_cost - comp_cost,
                    comparator_kind=f"{comparator_kind}_fixed",
                )
            )
        comparator_optimum = fixed_cost_curve[-1]
    rows.sort(key=lambda r: (r.comparator_kind, r.t))
    return ExperimentResult(
        rows=rows,
        comparator_kind=comparator_kind,
        comparator_optimum=comparator_optimum,
        config_snapshot={
            "controller": dict(controller_spec),
            "comparator": dict(comparator_spec),
            "comparator_mode": comparator_mode,
            "T_list": list(T_list),
        },
        wall_time_s=time.perf_counter() - t_start,
    )


def _fixed_comparator_curve(system, ricc_inf, w_full, comparator_spec, T_list):
    """Prefix costs of the single full-horizon comparator optimum."""
    spec = dict(comparator_spec)
    kind = spec.get("kind", "best_dap")
    T_max = T_list[-1]
    if kind == "none":
        return [0.0 for _ in T_list]
    scales = problem_scales(system, ricc_inf.P_inf)
    kappa0 = float(spec.get("kappa0", ricc_inf.kappa_inf))
    gamma0 = float(spec.get("gamma0", ricc_inf.gamma_inf))
    if kind == "k_inf":
        traj = rollout(system, FeedbackPolicy(ricc_inf.K_inf), w_full)
        return [traj.prefix_cost(T) for T in T_list]
    if kind == "best_k":
        K, _ = best_feedback_in_hindsight(
            system, w_full, kappa0, gamma0, int(spec.get("grid_points", 15))
        )
        traj = rollout(system, FeedbackPolicy(K), w_full)
        return [traj.prefix_cost(T) for T in T_list]
    dap_set = default_dap_set(scales, ricc_inf, kappa0, gamma0, T_max)
    M, _ = best_dap_in_hindsight(system, ricc_inf, w_full, dap_set)
    policy = _DapRolloutPolicy(M, ricc_inf)
    traj = rollout(system, policy, w_full)
    return [traj.prefix_cost(T) for T in T_list]


class _DapRolloutPolicy:
    """Fixed disturbance-action policy under the act/observe contract."""

    def __init__(self, M: DapPolicy, ricc_inf: RiccatiInfinite):
        self.M = M
        self.K_inf = ricc_inf.K_inf
        self._w: list[np.ndarray] = []

    def act(self, x):
        dx = self.M.dx
        hist = np.zeros((self.M.m, dx))
        for i in range(1, self.M.m + 1):
            if len(self._w) - i >= 0:
                hist[i - 1] = self._w[len(self._w) - i]
        return -self.K_inf @ np.asarray(x, dtype=float) - q_of_M(self.M, hist)

    def observe(self, w):
        self._w.append(np.asarray(w, dtype=float))


# ---------------------------------------------------------------------------
# Movement-cost experiment for exp-concave stationary losses.


@dataclass(frozen=True)
class CounterexampleReport:
    T: int
    mu: float
    epsilon: float
    eta: float
    lambda_regret: float
    movement_cost: float
    stationarization_gap: float
    unary_min_value: float


def counterexample_experiment(T: int, ons_epsilon: Optional[float] = None) -> CounterexampleReport:
    """Movement cost of online Newton iterates on slowly curved unary losses.

    The alternating disturbance w_t = (-1)^t + mu/2 with mu = 1/sqrt(T)
    makes every unary stationary loss equal to (1 - mu z)^2. The
    learner runs unprojected (its own analysis ignores the projection
    step), while the stationary comparator is the best point of
    [-1/5, 1/5]. Reports the comparator regret on the unary losses,
    the iterate movement, and the gap between the memory losses and
    their unary stationarizations.
    """
    if T < 16:
        raise ValueError("T must be at least 16")
    mu = 1.0 / math.sqrt(T)
    lo, hi = -0.2, 0.2
    diameter = hi - lo
    alpha = 0.25
    grad_bound = 2.0 * mu * (1.0 + abs(lo) * mu)
    eta, epsilon = ons_default_params(grad_bound, diameter, alpha)
    if ons_epsilon is not None:
        epsilon = float(ons_epsilon)

    learner = OnlineNewtonStep(epsilon, eta, Unconstrained(1))
    z_hist = np.zeros(T)
    for t in range(T):
        z = float(learner.z[0])
        z_hist[t] = z
        grad = np.array([-2.0 * mu * (1.0 - mu * z)])
        learner.step(grad)

    unary = (1.0 - mu * z_hist) ** 2
    # Best stationary point of the interval for the unary losses.
    z_star = min(max(1.0 / mu, lo), hi)
    unary_min = (1.0 - mu * z_star) ** 2
    lambda_regret = float(unary.sum() - T * unary_min)
    movement = float(np.abs(np.diff(z_hist)).sum())

    t_idx = np.arange(1, T + 1)
    w = (-1.0) ** t_idx + mu / 2.0
    gap = 0.0
    for t in range(1, T):
        memory_loss = (1.0 - (w[t] * z_hist[t] + w[t - 1] * z_hist[t - 1])) ** 2
        gap += abs(memory_loss - unary[t])
    return CounterexampleReport(
        T=T,
        mu=mu,
        epsilon=epsilon,
        eta=eta,
        lambda_regret=lambda_regret,
        movement_cost=movement,
        stationarization_gap=float(gap),
        unary_min_value=float(unary_min),
    )
