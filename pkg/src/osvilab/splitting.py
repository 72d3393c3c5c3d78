"""Matrix-splitting solvers for A z = b with A = M - N.

The iteration z_k = M^{-1}(N z_{k-1} + b) has error e_k = (M^{-1}N)^k e_0.
Value iteration for policy evaluation is the choice M = I, N = gamma P^pi.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .mdp import Policy, TabularMdp, Trajectory, induce_kernel

SPLIT_ATOL = 1e-10
MAX_COND = 1e12
POWER_ITERS = 200
POWER_SEED = 0


@dataclass(frozen=True)
class SplittingScheme:
    name: str
    M: np.ndarray
    N: np.ndarray
    b: np.ndarray
    A: np.ndarray | None = None

    def __post_init__(self):
        M = np.array(self.M, dtype=float)
        N = np.array(self.N, dtype=float)
        b = np.array(self.b, dtype=float)
        n = b.shape[0]
        if M.shape != (n, n) or N.shape != (n, n):
            raise ValueError("M, N must be square and match b")
        if self.A is not None:
            A = np.array(self.A, dtype=float)
            if np.max(np.abs(M - N - A)) > SPLIT_ATOL:
                raise ValueError("M - N does not reproduce A")
            object.__setattr__(self, "A", A)
        else:
            object.__setattr__(self, "A", M - N)
        cond = np.linalg.cond(M)
        if not np.isfinite(cond) or cond > MAX_COND:
            raise np.linalg.LinAlgError(f"M is singular or ill-conditioned (cond {cond:.3g})")
        for arr in (M, N, b, self.A):
            arr.setflags(write=False)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "b", b)


def pe_system(mdp: TabularMdp, policy: Policy):
    """(A, b) = (I - gamma P^pi, r^pi)."""
    kern = induce_kernel(mdp, policy)
    return np.eye(mdp.n_states) - mdp.discount * kern.matrix, kern.reward_vec


def richardson_scheme(A, b) -> SplittingScheme:
    """M = I. On a PE system this is value iteration."""
    A = np.asarray(A, dtype=float)
    eye = np.eye(A.shape[0])
    return SplittingScheme("richardson", eye, eye - A, b, A)


def vi_scheme(mdp: TabularMdp, policy: Policy) -> SplittingScheme:
    """M = I, N = gamma P^pi, written directly rather than as I - A so the
    iterates match value iteration bit for bit."""
    kern = induce_kernel(mdp, policy)
    A = np.eye(mdp.n_states) - mdp.discount * kern.matrix
    return SplittingScheme("vi", np.eye(mdp.n_states), mdp.discount * kern.matrix, kern.reward_vec, A)


def jacobi_scheme(A, b) -> SplittingScheme:
    A = np.asarray(A, dtype=float)
    M = np.diag(np.diag(A))
    return SplittingScheme("jacobi", M, M - A, b, A)


def gauss_seidel_scheme(A, b) -> SplittingScheme:
    """Forward Gauss-Seidel: M = D - L (lower triangle of A incl. diagonal)."""
    A = np.asarray(A, dtype=float)
    M = np.tril(A)
    return SplittingScheme("gauss-seidel", M, M - A, b, A)


SCHEMES = {"richardson": richardson_scheme, "jacobi": jacobi_scheme, "gauss-seidel": gauss_seidel_scheme}


def spectral_radius_estimate(G: np.ndarray, iters: int = POWER_ITERS, seed: int = POWER_SEED) -> float:
    """Power-iteration estimate of rho(G). Reported only, never decided on."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(G.shape[0])
    z /= np.linalg.norm(z)
    est = 0.0
    for _ in range(iters):
        w = G @ z
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        est = nrm
        z = w / nrm
    return float(est)


def splitting_solve(scheme: SplittingScheme, z0=None, iters: int = 1000, tol: float = 0.0) -> Trajectory:
    """Run the splitting iteration; errors are sup distances to the direct solution."""
    n = scheme.b.shape[0]
    z = np.zeros(n) if z0 is None else np.array(z0, dtype=float)
    z_ref = np.linalg.solve(scheme.A, scheme.b)
    identity = np.array_equal(scheme.M, np.eye(n))
    triangular = np.array_equal(scheme.M, np.tril(scheme.M))
    if not identity:
        lu = None if triangular else scipy.linalg.lu_factor(scheme.M)

    def apply_minv(y):
        if identity:
            return y
        if triangular:
            return scipy.linalg.solve_triangular(scheme.M, y, lower=True)
        return scipy.linalg.lu_solve(lu, y)

    G = np.column_stack([apply_minv(col) for col in scheme.N.T])
    traj = Trajectory(values=[z], errors=[np.max(np.abs(z - z_ref))], queries=[0])
    for k in range(1, iters + 1):
        z_new = apply_minv(scheme.N @ z + scheme.b)
        step = np.max(np.abs(z_new - z))
        z = z_new
        traj.values.append(z)
        traj.errors.append(np.max(np.abs(z - z_ref)))
        traj.queries.append(k)
        if step < tol:
            traj.converged = True
            break
    rho = spectral_radius_estimate(G)
    traj.metrics["gain_norm_inf"] = float(np.max(np.abs(G).sum(axis=1)))
    traj.metrics["spectral_radius_estimate"] = rho
    traj.metrics["nonconvergent"] = bool(rho >= 1.0)
    traj.diverged = bool(rho >= 1.0)
    return traj
