"""Closed-loop rollouts and their recorded trajectories."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lqr import LinearSystem
from .riccati import DisturbanceSequence

__all__ = ["Trajectory", "rollout"]


@dataclass(frozen=True)
class Trajectory:
    """One realized rollout.

    ``x`` has T+1 rows (row i holds x_{i+1}, starting from x_1 = 0),
    ``u`` and ``step_costs`` have T rows each.
    """

    x: np.ndarray
    u: np.ndarray
    w: DisturbanceSequence
    step_costs: np.ndarray
    total_cost: float

    @property
    def T(self) -> int:
        return self.u.shape[0]

    def prefix_cost(self, t: int) -> float:
        """Cumulative cost of the first t rounds."""
        return float(self.step_costs[:t].sum())


def rollout(system: LinearSystem, policy, w: DisturbanceSequence) -> Trajectory:
    """Roll a policy forward from x_1 = 0 under a fixed disturbance sequence.

    The policy sees w_t only after acting at round t, via
    ``policy.observe``.
    """
    T = w.T
    xs = np.zeros((T + 1, system.dx))
    us = np.zeros((T, system.du))
    costs = np.zeros(T)
    x = np.zeros(system.dx)
    for t in range(1, T + 1):
        u = np.asarray(policy.act(x), dtype=float)
        costs[t - 1] = system.cost(x, u)
        us[t - 1] = u
        wt = w.w(t)
        x = system.A @ x + system.B @ u + wt
        xs[t] = x
        policy.observe(wt)
    return Trajectory(x=xs, u=us, w=w, step_costs=costs, total_cost=float(costs.sum()))
