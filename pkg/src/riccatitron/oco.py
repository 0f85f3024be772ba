"""Exp-concave online learning: quadratic losses, online Newton step,
vector-valued ridge-style regression, and the delayed-feedback reduction.

Learners expose ``predict() -> z`` and ``update(loss)``; everything
downstream (the controller and the harness) depends only on that
contract.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from .dap import DapSet, devectorize, project_dap, vectorize
from .exceptions import ProtocolError

__all__ = [
    "QuadraticLoss",
    "ConstraintSet",
    "Unconstrained",
    "Box",
    "Ball",
    "DapProduct",
    "ProjectionResult",
    "ons_project",
    "ons_default_params",
    "OnlineNewtonStep",
    "VawLearner",
    "vaw_default_epsilon",
    "DelayedLearner",
    "delayed_wrapper",
    "exp_concavity_constant",
]


@dataclass(frozen=True)
class QuadraticLoss:
    """Loss f(z) = ||A z - b||^2 weighted by a positive definite Sigma."""

    A: np.ndarray
    b: np.ndarray
    Sigma: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        Sigma = np.atleast_2d(np.asarray(self.Sigma, dtype=float))
        if A.shape[0] != b.size or Sigma.shape != (b.size, b.size):
            raise ValueError("inconsistent loss dimensions")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "Sigma", Sigma)

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    def value(self, z: np.ndarray) -> float:
        r = self.A @ np.asarray(z, dtype=float) - self.b
        return float(r @ self.Sigma @ r)

    def grad(self, z: np.ndarray) -> np.ndarray:
        r = self.A @ np.asarray(z, dtype=float) - self.b
        return 2.0 * self.A.T @ (self.Sigma @ r)

    def hessian(self) -> np.ndarray:
        return 2.0 * self.A.T @ self.Sigma @ self.A


class ConstraintSet:
    """Closed convex set supporting Euclidean projection and membership."""

    dim: int

    def project(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def contains(self, z: np.ndarray, tol: float = 1e-9) -> bool:
        return bool(np.linalg.norm(self.project(z) - z) <= tol)


class Unconstrained(ConstraintSet):
    def __init__(self, dim: int):
        self.dim = dim

    def project(self, z):
        return np.asarray(z, dtype=float)

    def contains(self, z, tol=1e-9):
        return True


class Box(ConstraintSet):
    def __init__(self, lo, hi, dim: Optional[int] = None):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if lo.ndim == 0 and hi.ndim == 0:
            if dim is None:
                raise ValueError("dim required for scalar bounds")
            lo = np.full(dim, float(lo))
            hi = np.full(dim, float(hi))
        if np.any(lo > hi):
            raise ValueError("empty box")
        self.lo, self.hi = lo, hi
        self.dim = lo.size

    def project(self, z):
        return np.clip(np.asarray(z, dtype=float), self.lo, self.hi)


class Ball(ConstraintSet):
    def __init__(self, radius: float, dim: int):
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.radius = float(radius)
        self.dim = dim

    def project(self, z):
        z = np.asarray(z, dtype=float)
        nrm = np.linalg.norm(z)
        return z if nrm <= self.radius else z * (self.radius / nrm)


class DapProduct(ConstraintSet):
    """Vectorized disturbance-action constraint set."""

    def __init__(self, dap_set: DapSet, du: int, dx: int):
        self.dap_set = dap_set
        self.du, self.dx = du, dx
        self.dim = dap_set.m * du * dx

    def _shape(self):
        return (self.dap_set.m, self.du, self.dx)

    def project(self, z):
        policy = devectorize(np.asarray(z, dtype=float), self._shape())
        return vectorize(project_dap(policy, self.dap_set))

    def contains(self, z, tol=1e-9):
        return self.dap_set.contains(devectorize(z, self._shape()), tol=tol)


class ProjectionResult(NamedTuple):
    point: np.ndarray
    converged: bool


def ons_project(
    z_tilde: np.ndarray,
    E: np.ndarray,
    constraint: ConstraintSet,
    tol: float = 1e-10,
    max_iter: int = 10_000,
) -> ProjectionResult:
    """Generalized projection argmin_{z in C} ||z - z_tilde||^2_E.

    Exact for unconstrained sets and in one dimension (a scalar weight
    cancels); otherwise solved by projected gradient steps of size
    1/lambda_max(E).
    """
    z_tilde = np.asarray(z_tilde, dtype=float)
    if isinstance(constraint, Unconstrained):
        return ProjectionResult(z_tilde, True)
    if z_tilde.size == 1:
        return ProjectionResult(constraint.project(z_tilde), True)
    E = np.atleast_2d(E)
    lam_max = float(np.linalg.eigvalsh(0.5 * (E + E.T)).max())
    if lam_max <= 0:
        raise ValueError("E must be positive definite")
    z = constraint.project(z_tilde)
    for _ in range(max_iter):
        z_next = constraint.project(z - (E @ (z - z_tilde)) / lam_max)
        if np.linalg.norm(z_next - z) <= tol:
            return ProjectionResult(z_next, True)
        z = z_next
    return ProjectionResult(z, False)


def ons_default_params(G: float, D: float, alpha: float) -> tuple[float, float]:
    """Learning rate and regularizer achieving the logarithmic regret
    guarantee: eta = 2 max(4GD, 1/alpha), epsilon = eta^2 / D."""
    if G <= 0 or D <= 0 or alpha <= 0:
        raise ValueError("G, D, alpha must be positive")
    eta = 2.0 * max(4.0 * G * D, 1.0 / alpha)
    return eta, eta**2 / D


class OnlineNewtonStep:
    """Second-order online learner for exp-concave losses.

    Maintains a curvature accumulator E = eps*I + sum of gradient outer
    products; each update takes a Newton-like step and re-projects in
    the E-weighted metric.
    """

    def __init__(self, epsilon: float, eta: float, constraint: ConstraintSet):
        if epsilon <= 0 or eta <= 0:
            raise ValueError("epsilon and eta must be positive")
        self.epsilon = float(epsilon)
        self.eta = float(eta)
        self.constraint = constraint
        self.E = epsilon * np.eye(constraint.dim)
        self.z = constraint.project(np.zeros(constraint.dim))

    def predict(self, features: Optional[np.ndarray] = None) -> np.ndarray:
        return self.z.copy()

    def step(self, gradient: np.ndarray) -> None:
        g = np.asarray(gradient, dtype=float)
        self.E = self.E + np.outer(g, g)
        z_tilde = self.z - self.eta * np.linalg.solve(self.E, g)
        self.z = ons_project(z_tilde, self.E, self.constraint).point

    def update(self, loss: QuadraticLoss) -> None:
        self.step(loss.grad(self.z))


def vaw_default_epsilon(S: float, Y: float, B: float) -> float:
    """Regularizer S*Y^2/B^2 matching the logarithmic regret guarantee."""
    if S <= 0 or Y <= 0 or B <= 0:
        raise ValueError("S, Y, B must be positive")
    return S * Y**2 / B**2


class VawLearner:
    """Vector-valued forecaster for losses ||A_k z - b_k||^2_Sigma.

    Follows the features-then-label protocol: the current round's
    feature matrix enters the curvature accumulator before predicting,
    and the label arrives afterwards. ``predict``/``update`` adapt the
    same state to the generic learner contract, accepting the feature
    matrix early (at prediction time) and the label later inside the
    full loss.
    """

    def __init__(self, epsilon: float, constraint: ConstraintSet, Sigma: np.ndarray):
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        self.epsilon = float(epsilon)
        self.constraint = constraint
        self.Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
        self.E = epsilon * np.eye(constraint.dim)
        self.s = np.zeros(constraint.dim)
        self._pending_A: Optional[np.ndarray] = None

    def _minimizer(self) -> np.ndarray:
        z_free = np.linalg.solve(self.E, self.s)
        if self.constraint.contains(z_free):
            return z_free
        return ons_project(z_free, self.E, self.constraint).point

    def receive_features(self, A_k: np.ndarray) -> np.ndarray:
        if self._pending_A is not None:
            raise ProtocolError("features received twice without an intervening label")
        A_k = np.atleast_2d(np.asarray(A_k, dtype=float))
        self.E = self.E + A_k.T @ self.Sigma @ A_k
        self._pending_A = A_k
        return self._minimizer()

    def receive_label(self, b_k: np.ndarray) -> None:
        if self._pending_A is None:
            raise ProtocolError("label received before features")
        self.s = self.s + self._pending_A.T @ (self.Sigma @ np.asarray(b_k, dtype=float))
        self._pending_A = None

    def predict(self, features: Optional[np.ndarray] = None) -> np.ndarray:
        if features is not None:
            return self.receive_features(features)
        return self._minimizer()

    def update(self, loss: QuadraticLoss) -> None:
        if self._pending_A is not None:
            if not np.array_equal(loss.A, self._pending_A):
                raise ProtocolError("loss features disagree with the pending feature matrix")
            self.receive_label(loss.b)
        else:
            self.E = self.E + loss.A.T @ self.Sigma @ loss.A
            self.s = self.s + loss.A.T @ (self.Sigma @ loss.b)


class DelayedLearner:
    """Delay-h reduction running h+1 interleaved copies of a base learner.

    Round t is served by copy (t-1) mod (h+1) + 1; the k-th update
    carries the loss of round k and lands on the copy that produced
    that round's prediction, so each copy sees its own rounds in order.
    """

    def __init__(self, base_factory: Callable[[], object], h: int):
        if h < 0:
            raise ValueError("delay h must be nonnegative")
        self.h = h
        self.instances = [base_factory() for _ in range(h + 1)]
        self.rounds_predicted = 0
        self.rounds_updated = 0
        self.predict_log: list[tuple[int, int]] = []
        self.update_log: list[tuple[int, int]] = []

    def _instance_for(self, round_index: int) -> int:
        return (round_index - 1) % (self.h + 1)

    def predict(self, features: Optional[np.ndarray] = None) -> np.ndarray:
        self.rounds_predicted += 1
        idx = self._instance_for(self.rounds_predicted)
        self.predict_log.append((self.rounds_predicted, idx + 1))
        return self.instances[idx].predict(features)

    def update(self, loss: QuadraticLoss) -> None:
        if self.rounds_updated >= self.rounds_predicted:
            raise ProtocolError("loss fed for a round that has not been played")
        self.rounds_updated += 1
        idx = self._instance_for(self.rounds_updated)
        self.update_log.append((self.rounds_updated, idx + 1))
        self.instances[idx].update(loss)


def delayed_wrapper(base_factory: Callable[[], object], h: int) -> DelayedLearner:
    """Wrap a base-learner factory for feedback delayed by h rounds."""
    return DelayedLearner(base_factory, h)


def exp_concavity_constant(loss: QuadraticLoss, range_bound: float) -> float:
    """Exp-concavity constant 1/(2R) valid wherever the loss stays below R."""
    del loss
    if range_bound <= 0:
        raise ValueError("range bound must be positive")
    return 1.0 / (2.0 * range_bound)
