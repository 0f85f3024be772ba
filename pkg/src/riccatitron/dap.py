"""Disturbance-action policies.

A policy is parameterized by matrices M = (M^[1], ..., M^[m]) and plays
u = -K_inf x - sum_i M^[i] w_{t-i}. The control cost is convex in M,
which is what lets online convex optimization drive the controller.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lqr import ProblemScales, RiccatiInfinite, opnorm

__all__ = [
    "DapPolicy",
    "DapSet",
    "q_of_M",
    "dap_action",
    "project_dap",
    "default_dap_set",
    "vectorize",
    "devectorize",
    "q_feature_matrix",
]


@dataclass(frozen=True)
class DapPolicy:
    """Stack of m lag matrices, each du x dx."""

    M: np.ndarray

    def __post_init__(self):
        M = np.array(self.M, dtype=float)
        if M.ndim != 3:
            raise ValueError(f"M must have shape (m, du, dx), got {M.shape}")
        M.setflags(write=False)
        object.__setattr__(self, "M", M)

    @property
    def m(self) -> int:
        return self.M.shape[0]

    @property
    def du(self) -> int:
        return self.M.shape[1]

    @property
    def dx(self) -> int:
        return self.M.shape[2]


@dataclass(frozen=True)
class DapSet:
    """Constraint set with per-lag norm caps R * gamma^(i-1).

    The cap applies to the operator norm of each lag block by default;
    ``norm="fro"`` switches to a Frobenius-ball relaxation.
    """

    m: int
    R: float
    gamma: float
    norm: str = "op"

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be a positive integer")
        if self.R <= 0:
            raise ValueError("R must be positive")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.norm not in ("op", "fro"):
            raise ValueError(f"unknown norm variant {self.norm!r}")

    def thresholds(self) -> np.ndarray:
        return self.R * self.gamma ** np.arange(self.m)

    def block_norms(self, policy: DapPolicy) -> np.ndarray:
        ord_ = 2 if self.norm == "op" else "fro"
        return np.array([np.linalg.norm(block, ord_) for block in policy.M])

    def contains(self, policy: DapPolicy, tol: float = 1e-9) -> bool:
        if policy.m != self.m:
            return False
        return bool(np.all(self.block_norms(policy) <= self.thresholds() + tol))


def _as_blocks(M) -> np.ndarray:
    return M.M if isinstance(M, DapPolicy) else np.asarray(M, dtype=float)


def q_of_M(M, w_history: np.ndarray) -> np.ndarray:
    """Bias vector sum_i M^[i] w_{t-i}.

    ``w_history`` holds the most recent disturbance first, i.e. rows
    (w_{t-1}, ..., w_{t-k}); histories shorter than m are zero-padded.
    """
    blocks = _as_blocks(M)
    m, du, dx = blocks.shape
    hist = np.atleast_2d(np.asarray(w_history, dtype=float))
    if hist.size == 0:
        return np.zeros(du)
    k = min(m, hist.shape[0])
    return np.einsum("iab,ib->a", blocks[:k], hist[:k])


def dap_action(M, x: np.ndarray, w_history: np.ndarray, K_inf: np.ndarray) -> np.ndarray:
    """Control u = -K_inf x - q^M(history)."""
    return -np.atleast_2d(K_inf) @ np.asarray(x, dtype=float) - q_of_M(M, w_history)


def _clip_op_norm(block: np.ndarray, cap: float) -> np.ndarray:
    if opnorm(block) <= cap:
        return block
    if block.size == 1:
        return np.clip(block, -cap, cap)
    u, s, vt = np.linalg.svd(block, full_matrices=False)
    return (u * np.minimum(s, cap)) @ vt


def project_dap(M, dap_set: DapSet) -> DapPolicy:
    """Nearest (Frobenius) policy satisfying the per-lag norm caps.

    For the operator-norm variant this clips singular values at the
    cap; for the Frobenius variant it rescales the whole block.
    """
    blocks = _as_blocks(M)
    if blocks.shape[0] != dap_set.m:
        raise ValueError(f"policy has {blocks.shape[0]} lags, set expects {dap_set.m}")
    caps = dap_set.thresholds()
    out = np.empty_like(blocks)
    for i, (block, cap) in enumerate(zip(blocks, caps)):
        if dap_set.norm == "op":
            out[i] = _clip_op_norm(block, cap)
        else:
            nrm = np.linalg.norm(block)
            out[i] = block if nrm <= cap else block * (cap / nrm)
    return DapPolicy(out)


def default_dap_set(
    scales: ProblemScales,
    ricc_inf: RiccatiInfinite,
    kappa0: float,
    gamma0: float,
    T: int,
    norm: str = "op",
) -> DapSet:
    """Constraint set large enough to compete with every (kappa0, gamma0)
    strongly stable feedback law over horizon T.

    The lag count grows like (1-gamma0)^{-1} log((1-gamma0)^{-1} T) and
    the radius is 2 * beta* * psi*^2 * Gamma* * kappa0^2; the lag count
    is rounded up to an integer.
    """
    if gamma0 >= 1.0:
        raise ValueError("gamma0 must be below 1")
    if kappa0 < ricc_inf.kappa_inf or gamma0 < ricc_inf.gamma_inf:
        raise ValueError(
            "benchmark class must dominate the optimal closed loop: "
            f"need kappa0 >= {ricc_inf.kappa_inf:.4f} and gamma0 >= {ricc_inf.gamma_inf:.4f}"
        )
    horizon_factor = 1.0 / (1.0 - gamma0)
    m = max(1, math.ceil(horizon_factor * math.log(horizon_factor * T)))
    R = 2.0 * scales.beta_star * scales.psi_star**2 * scales.gamma_star_cap * kappa0**2
    return DapSet(m=m, R=R, gamma=gamma0, norm=norm)


def vectorize(M) -> np.ndarray:
    """Flatten lag blocks to a single vector (lags outer, rows inner)."""
    return _as_blocks(M).reshape(-1).copy()


def devectorize(v: np.ndarray, shape) -> DapPolicy:
    m, du, dx = shape
    v = np.asarray(v, dtype=float)
    if v.size != m * du * dx:
        raise ValueError(f"vector of length {v.size} does not match shape {shape}")
    return DapPolicy(v.reshape(m, du, dx))


def q_feature_matrix(w_history: np.ndarray, m: int, du: int) -> np.ndarray:
    """Matrix F with F @ vectorize(M) == q_of_M(M, w_history).

    Shape du x (m * du * dx); block i equals kron(I_du, w_{t-i}^T).
    """
    hist = np.atleast_2d(np.asarray(w_history, dtype=float))
    dx = hist.shape[1]
    eye = np.eye(du)
    blocks = []
    for i in range(m):
        row = hist[i] if i < hist.shape[0] else np.zeros(dx)
        blocks.append(np.kron(eye, row))
    return np.hstack(blocks)
