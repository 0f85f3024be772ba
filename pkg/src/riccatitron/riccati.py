"""Finite-horizon Riccati recursion and the noncausal optimal controller.

The optimal policy under full knowledge of the disturbances is
u_t = -K_t x - q*_t(w_{t:T}), where K_t comes from the backward Riccati
recursion and q*_t is a bias vector built from future disturbances.
This module computes q*_t exactly, in truncated and infinite-horizon
approximations, the associated value/Q/advantage functions, and the
moving-target generalizations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dap import q_of_M
from .exceptions import NumericalError
from .lqr import LinearSystem, RiccatiInfinite

__all__ = [
    "RiccatiFinite",
    "DisturbanceSequence",
    "TrackingTargets",
    "riccati_recursion",
    "qstar",
    "qstar_all",
    "qstar_truncated",
    "qstar_infty",
    "optimal_action",
    "value_star",
    "qfun_star",
    "advantage_star",
    "advantage_closed_form",
    "approx_advantage",
    "qstar_tracking",
    "qstar_infty_tracking",
    "approx_advantage_tracking",
]


@dataclass(frozen=True)
class RiccatiFinite:
    """Backward Riccati sequences over a horizon T.

    Arrays are 1-based to match the time convention: P[t] is valid for
    t in 1..T+1 with P[T+1] = 0, while Sigma[t], K[t], Acl[t] are valid
    for t in 1..T. Index 0 is unused padding.
    """

    T: int
    P: np.ndarray
    Sigma: np.ndarray
    K: np.ndarray
    Acl: np.ndarray


class DisturbanceSequence:
    """Disturbances w_1..w_T inside the unit ball, zero outside 1..T."""

    def __init__(self, values: np.ndarray):
        values = np.atleast_2d(np.asarray(values, dtype=float))
        norms = np.linalg.norm(values, axis=1)
        if norms.size and norms.max() > 1.0 + 1e-9:
            raise ValueError(f"disturbance norm {norms.max():.6f} exceeds 1")
        values.setflags(write=False)
        self.values = values

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def dx(self) -> int:
        return self.values.shape[1]

    def w(self, t: int) -> np.ndarray:
        """w_t with the convention w_s = 0 for s <= 0 and s > T."""
        if 1 <= t <= self.T:
            return self.values[t - 1]
        return np.zeros(self.dx)

    def window(self, t0: int, t1: int) -> np.ndarray:
        """Rows (w_{t0}, ..., w_{t1}), zero-padded outside 1..T."""
        return np.stack([self.w(t) for t in range(t0, t1 + 1)])

    def history(self, t: int, m: int) -> np.ndarray:
        """Rows (w_{t-1}, ..., w_{t-m}), most recent first."""
        return np.stack([self.w(t - i) for i in range(1, m + 1)])


class TrackingTargets:
    """State and input targets a_1..a_T, b_1..b_T with a_T = b_T = 0."""

    def __init__(self, a_values: np.ndarray, b_values: np.ndarray):
        a = np.atleast_2d(np.asarray(a_values, dtype=float))
        b = np.atleast_2d(np.asarray(b_values, dtype=float))
        if a.shape[0] != b.shape[0]:
            raise ValueError("target sequences must share a horizon")
        if a.shape[0] and (np.any(a[-1] != 0.0) or np.any(b[-1] != 0.0)):
            raise ValueError("terminal targets a_T and b_T must be zero")
        a.setflags(write=False)
        b.setflags(write=False)
        self.a_values = a
        self.b_values = b

    @property
    def T(self) -> int:
        return self.a_values.shape[0]

    def a(self, t: int) -> np.ndarray:
        if 1 <= t <= self.T:
            return self.a_values[t - 1]
        return np.zeros(self.a_values.shape[1])

    def b(self, t: int) -> np.ndarray:
        if 1 <= t <= self.T:
            return self.b_values[t - 1]
        return np.zeros(self.b_values.shape[1])


def riccati_recursion(system: LinearSystem, T: int) -> RiccatiFinite:
    """Run the backward Riccati recursion from P_{T+1} = 0."""
    if T < 1:
        raise ValueError("horizon T must be at least 1")
    dx, du = system.dx, system.du
    A, B = system.A, system.B
    P = np.zeros((T + 2, dx, dx))
    Sigma = np.zeros((T + 1, du, du))
    K = np.zeros((T + 1, du, dx))
    Acl = np.zeros((T + 1, dx, dx))
    for t in range(T, 0, -1):
        S = system.Ru + B.T @ P[t + 1] @ B
        S = 0.5 * (S + S.T)
        try:
            np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            raise NumericalError(f"singular input-cost curvature at step {t}")
        Sigma[t] = S
        K[t] = np.linalg.solve(S, B.T @ P[t + 1] @ A)
        Pt = system.Rx + A.T @ P[t + 1] @ A - A.T @ P[t + 1] @ B @ K[t]
        P[t] = 0.5 * (Pt + Pt.T)
        Acl[t] = A - B @ K[t]
    for arr in (P, Sigma, K, Acl):
        arr.setflags(write=False)
    return RiccatiFinite(T=T, P=P, Sigma=Sigma, K=K, Acl=Acl)


def _qstar_partial(
    ricc: RiccatiFinite, system: LinearSystem, w: DisturbanceSequence, t: int, hi: int
) -> np.ndarray:
    """Bias sum over i = t..hi with left-to-right closed-loop products."""
    dx = system.dx
    acc = np.zeros(dx)
    prod = np.eye(dx)
    for i in range(t, hi + 1):
        if i > t:
            prod = prod @ ricc.Acl[i].T
        acc = acc + prod @ (ricc.P[i + 1] @ w.w(i))
    return np.linalg.solve(ricc.Sigma[t], system.B.T @ acc)


def _check_t(ricc: RiccatiFinite, t: int) -> None:
    if not 1 <= t <= ricc.T:
        raise ValueError(f"t must lie in 1..{ricc.T}, got {t}")


def qstar(ricc: RiccatiFinite, system: LinearSystem, w: DisturbanceSequence, t: int) -> np.ndarray:
    """Bias vector of the noncausal optimal controller at time t."""
    _check_t(ricc, t)
    return _qstar_partial(ricc, system, w, t, ricc.T - 1)


def qstar_truncated(
    ricc: RiccatiFinite, system: LinearSystem, w: DisturbanceSequence, t: int, h: int
) -> np.ndarray:
    """Optimal bias truncated to lookahead h: the sum stops at min(t+h, T-1)."""
    _check_t(ricc, t)
    if h < 0:
        raise ValueError("lookahead h must be nonnegative")
    return _qstar_partial(ricc, system, w, t, min(t + h, ricc.T - 1))


def qstar_all(ricc: RiccatiFinite, system: LinearSystem, w: DisturbanceSequence) -> np.ndarray:
    """All bias vectors q*_1..q*_T in one backward sweep.

    Returns a 1-based array of shape (T+1, du) with index 0 unused;
    agrees with per-t ``qstar`` up to floating point.
    """
    T, du, dx = ricc.T, system.du, system.dx
    out = np.zeros((T + 1, du))
    s = np.zeros(dx)
    for t in range(T - 1, 0, -1):
        s = ricc.P[t + 1] @ w.w(t) + ricc.Acl[t + 1].T @ s
        out[t] = np.linalg.solve(ricc.Sigma[t], system.B.T @ s)
    return out


def qstar_infty(ricc_inf: RiccatiInfinite, w_window: np.ndarray) -> np.ndarray:
    """Infinite-horizon bias over a window (w_1, ..., w_{h+1}) of lookahead
    disturbances: sum_i Sigma_inf^{-1} B^T (Acl_inf^T)^{i-1} P_inf w_i."""
    window = np.atleast_2d(np.asarray(w_window, dtype=float))
    if window.shape[0] < 1:
        raise ValueError("window must contain at least one disturbance")
    acc = ricc_inf.P_inf @ window[-1]
    for i in range(window.shape[0] - 2, -1, -1):
        acc = ricc_inf.P_inf @ window[i] + ricc_inf.Acl_inf.T @ acc
    return np.linalg.solve(ricc_inf.Sigma_inf, ricc_inf.system.B.T @ acc)


def optimal_action(
    ricc: RiccatiFinite, system: LinearSystem, w: DisturbanceSequence, x: np.ndarray, t: int
) -> np.ndarray:
    """Noncausal optimal control -K_t x - q*_t(w)."""
    return -ricc.K[t] @ np.asarray(x, dtype=float) - qstar(ricc, system, w, t)


def value_star(
    system: LinearSystem, ricc: RiccatiFinite, w: DisturbanceSequence, x: np.ndarray, t: int
) -> float:
    """Optimal cost-to-go from state x at time t.

    Computed by rolling the closed-form optimal policy forward and
    summing stage costs, which is exact for quadratics.
    """
    _check_t(ricc, t)
    bias = qstar_all(ricc, system, w)
    return _value_star_rollout(system, ricc, w, bias, np.asarray(x, dtype=float), t)


def _value_star_rollout(system, ricc, w, bias, x, t) -> float:
    total = 0.0
    for s in range(t, ricc.T + 1):
        u = -ricc.K[s] @ x - bias[s]
        total += system.cost(x, u)
        if s < ricc.T:
            x = system.A @ x + system.B @ u + w.w(s)
    return total


def qfun_star(
    system: LinearSystem,
    ricc: RiccatiFinite,
    w: DisturbanceSequence,
    x: np.ndarray,
    u: np.ndarray,
    t: int,
) -> float:
    """Optimal Q-function: stage cost plus optimal cost-to-go of the successor."""
    _check_t(ricc, t)
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    stage = system.cost(x, u)
    if t == ricc.T:
        return stage
    x_next = system.A @ x + system.B @ u + w.w(t)
    return stage + value_star(system, ricc, w, x_next, t + 1)


def advantage_star(
    system: LinearSystem,
    ricc: RiccatiFinite,
    w: DisturbanceSequence,
    x: np.ndarray,
    u: np.ndarray,
    t: int,
) -> float:
    """Excess total cost of playing u at (x, t) instead of the optimal action."""
    _check_t(ricc, t)
    bias = qstar_all(ricc, system, w)
    x = np.asarray(x, dtype=float)
    u_opt = -ricc.K[t] @ x - bias[t]
    stage_gap = system.cost(x, np.asarray(u, dtype=float)) - system.cost(x, u_opt)
    if t == ricc.T:
        return stage_gap
    x_u = system.A @ x + system.B @ np.asarray(u, dtype=float) + w.w(t)
    x_opt = system.A @ x + system.B @ u_opt + w.w(t)
    return stage_gap + _value_star_rollout(
        system, ricc, w, bias, x_u, t + 1
    ) - _value_star_rollout(system, ricc, w, bias, x_opt, t + 1)


def advantage_closed_form(q_t: np.ndarray, qstar_t: np.ndarray, Sigma_t: np.ndarray) -> float:
    """Advantage of a bias-shifted policy: ||q_t - q*_t||^2 in the Sigma_t norm."""
    d = np.asarray(q_t, dtype=float) - np.asarray(qstar_t, dtype=float)
    return float(d @ np.atleast_2d(Sigma_t) @ d)


def approx_advantage(
    M, w_past: np.ndarray, w_future_window: np.ndarray, ricc_inf: RiccatiInfinite
) -> float:
    """State-free lookahead surrogate for the advantage of a DAP policy."""
    q_m = q_of_M(M, w_past)
    q_inf = qstar_infty(ricc_inf, w_future_window)
    return advantage_closed_form(q_m, q_inf, ricc_inf.Sigma_inf)


def qstar_tracking(
    ricc: RiccatiFinite,
    system: LinearSystem,
    w: DisturbanceSequence,
    targets: TrackingTargets,
    t: int,
) -> np.ndarray:
    """Optimal bias under moving state/input targets.

    Adds to the disturbance-driven sum a -Ru b_t term and a tail built
    from K_i^T Ru b_i - Rx a_i.
    """
    _check_t(ricc, t)
    dx = system.dx
    B = system.B
    acc_w = np.zeros(dx)
    prod = np.eye(dx)
    for i in range(t, ricc.T):
        if i > t:
            prod = prod @ ricc.Acl[i].T
        acc_w = acc_w + prod @ (ricc.P[i + 1] @ w.w(i))
    acc_targets = np.zeros(dx)
    prod = np.eye(dx)
    for i in range(t + 1, ricc.T):
        acc_targets = acc_targets + prod @ (
            ricc.K[i].T @ system.Ru @ targets.b(i) - system.Rx @ targets.a(i)
        )
        prod = prod @ ricc.Acl[i].T
    rhs = -system.Ru @ targets.b(t) + B.T @ acc_w + B.T @ acc_targets
    return np.linalg.solve(ricc.Sigma[t], rhs)


def qstar_infty_tracking(
    ricc_inf: RiccatiInfinite,
    w_window: np.ndarray,
    a_window: np.ndarray,
    b_window: np.ndarray,
) -> np.ndarray:
    """Infinite-horizon tracking bias over aligned lookahead windows."""
    w_win = np.atleast_2d(np.asarray(w_window, dtype=float))
    a_win = np.atleast_2d(np.asarray(a_window, dtype=float))
    b_win = np.atleast_2d(np.asarray(b_window, dtype=float))
    if not (w_win.shape[0] == a_win.shape[0] == b_win.shape[0]):
        raise ValueError("windows must share a length")
    system = ricc_inf.system
    B = system.B
    acc_w = ricc_inf.P_inf @ w_win[-1]
    for i in range(w_win.shape[0] - 2, -1, -1):
        acc_w = ricc_inf.P_inf @ w_win[i] + ricc_inf.Acl_inf.T @ acc_w
    # Target tail sum_{i>=2} (Acl^T)^{i-2} (K^T Ru b_i - Rx a_i), window-relative.
    acc_targets = np.zeros(system.dx)
    for i in range(w_win.shape[0] - 1, 0, -1):
        step = ricc_inf.K_inf.T @ system.Ru @ b_win[i] - system.Rx @ a_win[i]
        acc_targets = step + ricc_inf.Acl_inf.T @ acc_targets
    rhs = -system.Ru @ b_win[0] + B.T @ acc_w + B.T @ acc_targets
    return np.linalg.solve(ricc_inf.Sigma_inf, rhs)


def approx_advantage_tracking(
    M,
    w_past: np.ndarray,
    wbar_window,
    ricc_inf: RiccatiInfinite,
) -> float:
    """Tracking variant of the state-free advantage surrogate.

    ``wbar_window`` is a triple of aligned arrays (w_window, a_window,
    b_window) covering the h+1 lookahead steps.
    """
    w_win, a_win, b_win = wbar_window
    q_m = q_of_M(M, w_past)
    q_inf = qstar_infty_tracking(ricc_inf, w_win, a_win, b_win)
    return advantage_closed_form(q_m, q_inf, ricc_inf.Sigma_inf)
