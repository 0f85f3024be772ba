"""Core discrete-time LQR machinery.

Solves the discrete algebraic Riccati equation by backward value
iteration, derives the infinite-horizon feedback controller and its
quantitative stability parameters, and certifies strong stability of
arbitrary feedback gains via a discrete Lyapunov witness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import NumericalError

__all__ = [
    "LinearSystem",
    "RiccatiInfinite",
    "ProblemScales",
    "StabilityCertificate",
    "solve_dare",
    "dare_step",
    "dare_residual",
    "derive_infinite_horizon",
    "problem_scales",
    "certify_strong_stability",
    "opnorm",
    "spectral_radius",
]


def opnorm(mat: np.ndarray) -> float:
    """Operator (spectral) norm."""
    return float(np.linalg.norm(np.atleast_2d(mat), 2))


def spectral_radius(mat: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.atleast_2d(mat)))))


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


def _check_symmetric_pd(mat: np.ndarray, name: str) -> None:
    if not np.allclose(mat, mat.T, atol=1e-10 * max(1.0, opnorm(mat))):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(mat).min() <= 0:
        raise ValueError(f"{name} must be positive definite")


@dataclass(frozen=True)
class LinearSystem:
    """Linear dynamics x' = A x + B u + w with quadratic stage cost.

    The stage cost is ell(x, u) = x^T Rx x + u^T Ru u; both cost
    matrices must be symmetric positive definite.
    """

    A: np.ndarray
    B: np.ndarray
    Rx: np.ndarray
    Ru: np.ndarray

    def __post_init__(self):
        A = _freeze(np.atleast_2d(self.A))
        B = _freeze(np.atleast_2d(self.B))
        Rx = _freeze(np.atleast_2d(self.Rx))
        Ru = _freeze(np.atleast_2d(self.Ru))
        dx = A.shape[0]
        if A.shape != (dx, dx):
            raise ValueError(f"A must be square, got {A.shape}")
        if B.shape[0] != dx:
            raise ValueError(f"B must have {dx} rows, got {B.shape}")
        du = B.shape[1]
        if Rx.shape != (dx, dx):
            raise ValueError(f"Rx must be {dx}x{dx}, got {Rx.shape}")
        if Ru.shape != (du, du):
            raise ValueError(f"Ru must be {du}x{du}, got {Ru.shape}")
        _check_symmetric_pd(Rx, "Rx")
        _check_symmetric_pd(Ru, "Ru")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "Rx", Rx)
        object.__setattr__(self, "Ru", Ru)

    @property
    def dx(self) -> int:
        return self.A.shape[0]

    @property
    def du(self) -> int:
        return self.B.shape[1]

    def cost(self, x: np.ndarray, u: np.ndarray) -> float:
        """Stage cost ell(x, u)."""
        return float(x @ self.Rx @ x + u @ self.Ru @ u)


@dataclass(frozen=True)
class RiccatiInfinite:
    """Infinite-horizon quantities derived from the DARE solution.

    kappa_inf and gamma_inf certify strong stability of the closed
    loop Acl_inf = A - B K_inf: ||Acl_inf^i|| <= kappa_inf * gamma_inf^i.
    """

    system: LinearSystem
    P_inf: np.ndarray
    K_inf: np.ndarray
    Sigma_inf: np.ndarray
    Acl_inf: np.ndarray
    kappa_inf: float
    gamma_inf: float


@dataclass(frozen=True)
class ProblemScales:
    """Intrinsic scale parameters of an LQR instance.

    psi_star bounds the operator norms of the system and cost
    matrices, beta_star the inverse curvature of the costs, and
    gamma_star_cap the size of the DARE solution. All are >= 1.
    """

    psi_star: float
    beta_star: float
    gamma_star_cap: float


@dataclass(frozen=True)
class StabilityCertificate:
    """Witness (H, L) with A - BK = H L H^{-1}, ||H||*||H^{-1}|| <= kappa,
    ||L|| <= gamma < 1."""

    kappa: float
    gamma: float
    witness_H: np.ndarray
    witness_L: np.ndarray


def dare_step(system: LinearSystem, P: np.ndarray) -> np.ndarray:
    """One backward value-iteration sweep of the Riccati map.

    Returns the symmetrized update Rx + A^T P A - A^T P B
    (Ru + B^T P B)^{-1} B^T P A.
    """
    A, B = system.A, system.B
    Sigma = system.Ru + B.T @ P @ B
    Sigma = 0.5 * (Sigma + Sigma.T)
    try:
        np.linalg.cholesky(Sigma)
    except np.linalg.LinAlgError:
        raise NumericalError("input-cost curvature Ru + B^T P B lost positive definiteness")
    K = np.linalg.solve(Sigma, B.T @ P @ A)
    P_next = system.Rx + A.T @ P @ A - A.T @ P @ B @ K
    return 0.5 * (P_next + P_next.T)


def solve_dare(system: LinearSystem, tol: float = 1e-10, max_iter: int = 100_000) -> np.ndarray:
    """Solve the discrete algebraic Riccati equation by value iteration.

    Iterates the backward Riccati map from P = 0 until successive
    iterates differ by at most ``tol`` in operator norm. Convergence
    certifies stabilizability of (A, B); divergence or exhaustion of
    ``max_iter`` raises NumericalError.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    P = np.zeros((system.dx, system.dx))
    for _ in range(max_iter):
        P_next = dare_step(system, P)
        if not np.all(np.isfinite(P_next)):
            raise NumericalError("Riccati iteration diverged; system may not be stabilizable")
        if opnorm(P_next - P) <= tol:
            return P_next
        P = P_next
    raise NumericalError(
        f"Riccati iteration did not converge within {max_iter} sweeps; "
        "system may not be stabilizable"
    )


def dare_residual(system: LinearSystem, P: np.ndarray) -> float:
    """Operator-norm residual of P against the Riccati fixed-point map."""
    return opnorm(P - dare_step(system, P))


def _sym_eig_sqrt(P: np.ndarray):
    """Square root and inverse square root of a symmetric PD matrix."""
    vals, vecs = np.linalg.eigh(0.5 * (P + P.T))
    vals = np.clip(vals, 0.0, None)
    if vals.min() <= 0:
        raise NumericalError("matrix square root requires a positive definite input")
    root = (vecs * np.sqrt(vals)) @ vecs.T
    inv_root = (vecs / np.sqrt(vals)) @ vecs.T
    return root, inv_root


def derive_infinite_horizon(system: LinearSystem, P_inf: np.ndarray) -> RiccatiInfinite:
    """Derive the optimal state-feedback controller and its stability
    parameters from a converged DARE solution.

    Raises NumericalError when the implied decay factor gamma_inf is
    not below one, which signals an inconsistent P_inf.
    """
    A, B = system.A, system.B
    P_inf = 0.5 * (np.atleast_2d(P_inf) + np.atleast_2d(P_inf).T)
    Sigma = system.Ru + B.T @ P_inf @ B
    Sigma = 0.5 * (Sigma + Sigma.T)
    K = np.linalg.solve(Sigma, B.T @ P_inf @ A)
    Acl = A - B @ K
    root, inv_root = _sym_eig_sqrt(P_inf)
    kappa = opnorm(root) * opnorm(inv_root)
    gamma_sq = opnorm(np.eye(system.dx) - inv_root @ system.Rx @ inv_root)
    gamma = float(np.sqrt(gamma_sq))
    if gamma >= 1.0:
        raise NumericalError(
            f"decay factor gamma_inf = {gamma:.6f} >= 1; P_inf is inconsistent with Rx"
        )
    return RiccatiInfinite(
        system=system,
        P_inf=_freeze(P_inf),
        K_inf=_freeze(K),
        Sigma_inf=_freeze(Sigma),
        Acl_inf=_freeze(Acl),
        kappa_inf=float(kappa),
        gamma_inf=gamma,
    )


def problem_scales(system: LinearSystem, P_inf: np.ndarray) -> ProblemScales:
    """Compute the three intrinsic scale parameters of the instance."""
    psi = max(1.0, opnorm(system.A), opnorm(system.B), opnorm(system.Rx), opnorm(system.Ru))
    beta = max(
        1.0,
        1.0 / np.linalg.eigvalsh(system.Ru).min(),
        1.0 / np.linalg.eigvalsh(system.Rx).min(),
    )
    cap = max(1.0, opnorm(np.atleast_2d(P_inf)))
    return ProblemScales(psi_star=float(psi), beta_star=float(beta), gamma_star_cap=float(cap))


def certify_strong_stability(
    system: LinearSystem,
    K: np.ndarray,
    tol: float = 1e-14,
    max_terms: int = 100_000,
) -> StabilityCertificate:
    """Certify strong stability of the closed loop A - BK.

    Solves the discrete Lyapunov equation Acl^T Q Acl - Q + I = 0 by
    truncated series summation, then takes H = Q^{-1/2} and
    L = Q^{1/2} Acl Q^{-1/2}. The returned (kappa, gamma) satisfy
    ||Acl^i|| <= kappa * gamma^i for all i >= 0.
    """
    K = np.atleast_2d(K)
    Acl = system.A - system.B @ K
    rho = spectral_radius(Acl)
    if rho >= 1.0:
        raise ValueError(f"K is not stabilizing: spectral radius {rho:.6f} >= 1")
    dx = system.dx
    Q = np.eye(dx)
    term = np.eye(dx)
    for _ in range(max_terms):
        term = Acl.T @ term @ Acl
        Q = Q + term
        if opnorm(term) <= tol * max(1.0, opnorm(Q)):
            break
    else:
        raise NumericalError("Lyapunov series did not converge; closed loop too close to unit circle")
    Q = 0.5 * (Q + Q.T)
    q_root, q_inv_root = _sym_eig_sqrt(Q)
    H = q_inv_root
    L = q_root @ Acl @ q_inv_root
    kappa = opnorm(H) * opnorm(q_root)
    gamma = opnorm(L)
    return StabilityCertificate(
        kappa=float(kappa), gamma=float(gamma), witness_H=_freeze(H), witness_L=_freeze(L)
    )
