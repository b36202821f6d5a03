"""Coarse-scale Darcy solve in the multiscale velocity space.

The fine operators are projected onto the basis columns (velocity) and
the kept eigenvectors (pressure), a zero-mean row closes the square
saddle system, and the dense symmetric factorization solves it. The
solution is expanded back to fine-grid fluxes and pressures.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import SolveError
from .fem import check_zero_mean, divergence_matrix, mass_matrix


@dataclass(frozen=True)
class CoarseSystem:
    """Dense projected blocks plus the data needed to expand solutions."""

    basis: object
    aux: object
    A_c: np.ndarray
    B_c: np.ndarray
    rhs_q: np.ndarray
    mean_w: np.ndarray
    f: np.ndarray


@dataclass(frozen=True)
class MsSolution:
    """Multiscale solution expanded on the fine grid."""

    coarse: object
    flavor: str
    layers: int
    coeff_v: np.ndarray
    coeff_p: np.ndarray
    gamma: float
    v: np.ndarray
    p: np.ndarray
    schur_sigma: float


@dataclass(frozen=True)
class MassReport:
    """Per-element conservation residuals |integral(div v - f)| and the
    relative residual of div v against the image of the projection."""

    element_residuals: np.ndarray
    max_residual: float
    div_compat: float


def assemble_coarse_system(basis_set, perm, f):
    """Project the fine problem onto the multiscale spaces."""
    aux = basis_set.aux
    grid = perm.grid
    f = np.asarray(f, dtype=np.float64)
    h2 = grid.h ** 2
    check_zero_mean(f, h2)
    Psi = basis_set.matrix
    A_c = (Psi.T @ (mass_matrix(grid, perm) @ Psi)).toarray()
    B_full = divergence_matrix(grid)
    R = aux.matrix
    B_c = (R.T @ (B_full @ Psi)).toarray()
    rhs_q = h2 * (R.T @ f)
    mean_w = np.asarray(R.T @ np.full(grid.n_cells, h2))
    return CoarseSystem(basis_set, aux, A_c, B_c, rhs_q, mean_w, f)


def _deflation_direction(system):
    """Coefficient vector whose basis combination has zero velocity when
    every basis function is global: the weighted coefficients of the
    constant pressure."""
    return system.aux.coefficients(np.ones(system.aux.coarse.fine.n_cells))


def schur_health(system):
    """Smallest eigenvalue of the pressure Schur complement restricted to
    zero-mean coefficient vectors; positive iff the coarse pair is stable."""
    A_c, B_c, w = system.A_c, system.B_c, system.mean_w
    A_sym = 0.5 * (A_c + A_c.T)
    if system.basis.saturated:
        # shift out the exact null direction; the Schur complement is
        # unchanged because B_c annihilates it too
        u0 = _deflation_direction(system)
        scale = np.trace(A_sym) / max(A_sym.shape[0], 1)
        A_sym = A_sym + scale * np.outer(u0, u0) / (u0 @ u0)
    try:
        cho = scipy.linalg.cho_factor(A_sym)
    except np.linalg.LinAlgError as exc:
        raise SolveError(f"projected velocity block is not positive definite: {exc}")
    schur = B_c @ scipy.linalg.cho_solve(cho, B_c.T)
    n = w.size
    if n == 1:
        return np.inf
    # Householder frame whose first column is w/|w|; the rest spans the
    # zero-mean coefficient subspace
    v = w / np.linalg.norm(w)
    e = np.zeros(n)
    e[0] = 1.0
    u = v - e if v[0] > 0 else v + e
    H = np.eye(n) - 2.0 * np.outer(u, u) / (u @ u)
    Z = H[:, 1:]
    evals = np.linalg.eigvalsh(Z.T @ (0.5 * (schur + schur.T)) @ Z)
    return float(evals[0])


def solve_multiscale(system, rtol=1e-10):
    """Solve the coarse saddle system and expand to the fine grid."""
    sigma = schur_health(system)
    if not sigma > 1e-10:
        raise SolveError(
            f"coarse system is singular: restricted Schur eigenvalue {sigma:.3e}")
    A_c, B_c, w = system.A_c, system.B_c, system.mean_w
    n = A_c.shape[0]
    deflate = system.basis.saturated
    size = 2 * n + 1 + (1 if deflate else 0)
    K = np.zeros((size, size))
    K[:n, :n] = A_c
    K[:n, n:2 * n] = -B_c.T
    K[n:2 * n, :n] = -B_c
    K[n:2 * n, 2 * n] = -w
    K[2 * n, n:2 * n] = -w
    if deflate:
        u0 = _deflation_direction(system)
        K[:n, -1] = u0
        K[-1, :n] = u0
    rhs = np.zeros(size)
    rhs[n:2 * n] = -system.rhs_q
    try:
        x = scipy.linalg.solve(K, rhs, assume_a="sym")
    except np.linalg.LinAlgError as exc:
        raise SolveError(f"coarse factorization failed: {exc}")
    res = np.linalg.norm(K @ x - rhs)
    scale = np.linalg.norm(rhs)
    if res > rtol * max(scale, 1e-300):
        raise SolveError(f"coarse solve residual {res:.3e} above {rtol:.1e} * {scale:.3e}",
                         residual=res)
    U, P, gamma = x[:n], x[n:2 * n], float(x[2 * n])
    basis = system.basis
    v = np.asarray(basis.matrix @ U)
    p = np.asarray(system.aux.matrix @ P)
    return MsSolution(basis.coarse, basis.flavor, basis.layers,
                      U, P, gamma, v, p, sigma)


def div_compat_residual(v_edges, aux):
    """Relative weighted-norm residual of projecting div v / kappa_tilde
    onto the auxiliary space. Near zero iff div v lies in the image of
    the weighted projection, as every basis divergence should."""
    grid = aux.coarse.fine
    h2 = grid.h ** 2
    div_cells = (divergence_matrix(grid) @ v_edges) / h2
    g = div_cells / aux.weight.values
    r = g - aux.project(g)
    s = aux.s_diag
    num = float(np.sqrt(np.sum(s * r * r)))
    den = float(np.sqrt(np.sum(s * g * g)))
    return num / max(den, 1e-300)


def mass_residuals(solution, f, aux=None):
    """Conservation check of a fine-grid velocity field against the source.

    With `aux` given the report also carries the projection-compatibility
    residual of the velocity divergence.
    """
    coarse = solution.coarse
    grid = coarse.fine
    h2 = grid.h ** 2
    flux_int = divergence_matrix(grid) @ solution.v
    diff = flux_int - h2 * np.asarray(f, dtype=np.float64)
    per_element = np.zeros(coarse.n_elements)
    np.add.at(per_element, coarse.element_of_cell(np.arange(grid.n_cells)), diff)
    per_element = np.abs(per_element)
    compat = div_compat_residual(solution.v, aux) if aux is not None else float("nan")
    return MassReport(per_element, float(per_element.max()), compat)
