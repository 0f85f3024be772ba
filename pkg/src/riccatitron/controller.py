"""The assembled controller: disturbance-action policies selected by
delayed exp-concave online learners over state-free advantage surrogates.

Each round the controller plays u = -K_inf x - q^M(recent w), then once
the lookahead window for round t-h is complete it feeds that round's
quadratic surrogate loss to the learner copy responsible for the next
round.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dap import DapPolicy, DapSet, default_dap_set, devectorize, q_feature_matrix, q_of_M
from .exceptions import ProtocolError
from .lqr import LinearSystem, ProblemScales, RiccatiInfinite, opnorm
from .oco import (
    DapProduct,
    DelayedLearner,
    OnlineNewtonStep,
    QuadraticLoss,
    VawLearner,
    delayed_wrapper,
    ons_default_params,
)
from .riccati import DisturbanceSequence
from .trajectory import Trajectory, rollout

__all__ = ["RiccatitronConfig", "Riccatitron", "default_config", "run_episode"]


@dataclass
class RiccatitronConfig:
    """Controller parameters: lookahead h, the policy constraint set, the
    base learner flavor and its step/regularization constants."""

    h: int
    dap_set: DapSet
    learner_kind: str
    eta_ons: float
    epsilon_ons: float
    epsilon_vaw: float
    ricc_inf: RiccatiInfinite

    def __post_init__(self):
        if self.h < 0:
            raise ValueError("lookahead h must be nonnegative")
        if self.learner_kind not in ("ons", "vaw"):
            raise ValueError(f"unknown learner kind {self.learner_kind!r}")
        if min(self.eta_ons, self.epsilon_ons, self.epsilon_vaw) <= 0:
            raise ValueError("learner parameters must be positive")
        if not self.dap_set.gamma < 1:
            raise ValueError("dap_set.gamma must be below 1")


def default_config(
    system: LinearSystem,
    scales: ProblemScales,
    ricc_inf: RiccatiInfinite,
    kappa0: float,
    gamma0: float,
    T: int,
    learner_kind: str = "vaw",
    grad_bound: Optional[float] = None,
    diameter: Optional[float] = None,
    exp_concavity: Optional[float] = None,
) -> RiccatitronConfig:
    """Horizon-T defaults for every controller parameter.

    The lookahead satisfies h = ceil(2 (1-gamma_inf)^{-1} log(kappa_inf^2
    beta*^2 psi* Gamma*^2 T^2)); the constraint set comes from
    ``default_dap_set``; learner constants follow the worst-case bounds
    on the surrogate losses and may be overridden with empirically
    tighter values.
    """
    if kappa0 < ricc_inf.kappa_inf or gamma0 < ricc_inf.gamma_inf:
        raise ValueError("(kappa0, gamma0) must dominate (kappa_inf, gamma_inf)")
    if not 0.0 <= gamma0 < 1.0:
        raise ValueError("gamma0 must lie in [0, 1)")
    g_inf = ricc_inf.gamma_inf
    log_arg = (
        ricc_inf.kappa_inf**2
        * scales.beta_star**2
        * scales.psi_star
        * scales.gamma_star_cap**2
        * T**2
    )
    h = max(0, math.ceil(2.0 / (1.0 - g_inf) * math.log(log_arg)))
    dap_set = default_dap_set(scales, ricc_inf, kappa0, gamma0, T)

    # Worst-case bounds on the surrogate losses over the constraint set.
    sigma_op = opnorm(ricc_inf.Sigma_inf)
    d_policy_bias = dap_set.R / (1.0 - dap_set.gamma)
    d_target_bias = (
        scales.beta_star * scales.psi_star * scales.gamma_star_cap
        * ricc_inf.kappa_inf / (1.0 - g_inf)
    )
    d_q = max(d_policy_bias, d_target_bias)
    if diameter is None:
        diameter = (
            4.0 * scales.beta_star * scales.psi_star**2 * scales.gamma_star_cap
            * kappa0**2 / (1.0 - gamma0) * math.sqrt(min(system.dx, system.du))
        )
    if grad_bound is None:
        grad_bound = 4.0 * math.sqrt(dap_set.m) * sigma_op * d_q
    if exp_concavity is None:
        exp_concavity = 1.0 / (4.0 * d_q**2 * scales.psi_star**2 * scales.gamma_star_cap)
    eta_ons, epsilon_ons = ons_default_params(grad_bound, diameter, exp_concavity)
    epsilon_vaw = sigma_op * d_q**2 / diameter**2
    return RiccatitronConfig(
        h=h,
        dap_set=dap_set,
        learner_kind=learner_kind,
        eta_ons=eta_ons,
        epsilon_ons=epsilon_ons,
        epsilon_vaw=epsilon_vaw,
        ricc_inf=ricc_inf,
    )


class Riccatitron:
    """Online controller implementing the act/observe policy contract.

    Single-owner mutable state; run one instance per episode.
    """

    def __init__(self, system: LinearSystem, config: RiccatitronConfig):
        self.system = system
        self.config = config
        self.ricc_inf = config.ricc_inf
        m = config.dap_set.m
        self._shape = (m, system.du, system.dx)
        constraint = DapProduct(config.dap_set, system.du, system.dx)
        if config.learner_kind == "ons":
            factory = lambda: OnlineNewtonStep(config.epsilon_ons, config.eta_ons, constraint)
        else:
            factory = lambda: VawLearner(
                config.epsilon_vaw, constraint, self.ricc_inf.Sigma_inf
            )
        self.learner: DelayedLearner = delayed_wrapper(factory, config.h)
        self._taps = self._lookahead_taps()
        self._w: list[np.ndarray] = []
        self._t = 0
        self._phase = "act"
        self.policies: list[DapPolicy] = []
        self.losses: list[tuple[int, QuadraticLoss]] = []

    def _lookahead_taps(self) -> np.ndarray:
        """Filter taps C_k = Sigma_inf^{-1} B^T (Acl_inf^T)^k P_inf, k = 0..h."""
        ri = self.ricc_inf
        base = np.linalg.solve(ri.Sigma_inf, self.system.B.T)
        taps = np.empty((self.config.h + 1, self.system.du, self.system.dx))
        current = base
        for k in range(self.config.h + 1):
            taps[k] = current @ ri.P_inf
            current = current @ ri.Acl_inf.T
        return taps

    def _w_at(self, s: int) -> np.ndarray:
        if 1 <= s <= len(self._w):
            return self._w[s - 1]
        return np.zeros(self.system.dx)

    def _history(self, t: int) -> np.ndarray:
        m = self.config.dap_set.m
        return np.stack([self._w_at(t - i) for i in range(1, m + 1)])

    def _lookahead_bias(self, j: int) -> np.ndarray:
        window = np.stack([self._w_at(s) for s in range(j, j + self.config.h + 1)])
        return np.einsum("kud,kd->u", self._taps, window)

    def _build_loss(self, j: int) -> QuadraticLoss:
        m = self.config.dap_set.m
        feats = q_feature_matrix(self._history(j), m, self.system.du)
        return QuadraticLoss(A=feats, b=self._lookahead_bias(j), Sigma=self.ricc_inf.Sigma_inf)

    def act(self, x: np.ndarray) -> np.ndarray:
        """Control for the current round; requires all prior disturbances
        to have been observed."""
        if self._phase != "act":
            raise ProtocolError(f"act called twice for round {self._t + 1}")
        t = self._t + 1
        hist = self._history(t)
        if self.config.learner_kind == "vaw":
            m = self.config.dap_set.m
            feats = q_feature_matrix(hist, m, self.system.du)
            z = self.learner.predict(feats)
        else:
            z = self.learner.predict()
        policy = devectorize(z, self._shape)
        self.policies.append(policy)
        self._phase = "observe"
        return -self.ricc_inf.K_inf @ np.asarray(x, dtype=float) - q_of_M(policy, hist)

    def observe(self, w_t: np.ndarray) -> None:
        """Record w_t; once round t-h is fully visible, feed its surrogate
        loss to the learner copy serving the next round."""
        if self._phase != "observe":
            raise ProtocolError(f"observe called before act at round {self._t + 1}")
        w_t = np.asarray(w_t, dtype=float)
        if np.linalg.norm(w_t) > 1.0 + 1e-9:
            raise ValueError("disturbance norm exceeds 1")
        self._t += 1
        self._w.append(w_t)
        t = self._t
        if t >= self.config.h + 1:
            j = t - self.config.h
            loss = self._build_loss(j)
            self.losses.append((j, loss))
            self.learner.update(loss)
        self._phase = "act"


def run_episode(
    system: LinearSystem,
    config: RiccatitronConfig,
    disturbances: DisturbanceSequence,
    T: Optional[int] = None,
) -> tuple[Trajectory, list[DapPolicy]]:
    """Closed-loop rollout of the controller from x_1 = 0.

    Returns the trajectory together with the policy iterates played at
    each round. Deterministic given its inputs.
    """
    if T is None:
        T = disturbances.T
    if T != disturbances.T:
        disturbances = DisturbanceSequence(disturbances.values[:T])
    controller = Riccatitron(system, config)
    traj = rollout(system, controller, disturbances)
    return traj, controller.policies
