"""Surface eigenvalue problems: characteristic exponent and eigenfunctions.

The characteristic exponent gamma is the unique non-zero root of the
principal eigenvalue lambda(gamma) of

    L_y + gamma * D_y + diag(alpha*gamma*(gamma-1) + beta*gamma),

discretized with periodic second-order central differences on the circle.
phi is the positive principal eigenvector, psi the adjoint eigenfunction
with respect to the invariant measure pi of L_y, both normalized to unit
pi-average.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from .model import Model2DNormalForm

GAMMA_EXCLUSION = 1e-3   # exclusion band around the trivial root gamma = 0
MAX_BRACKET = 64.0
DENSE_LIMIT = 256


class SolverError(RuntimeError):
    """Eigen- or root-solve failure with diagnostic context."""


@dataclass(frozen=True)
class GammaSolution:
    """Solved exponent with eigenfunctions on the surface grid."""

    gamma: float
    phi: np.ndarray
    psi: np.ndarray
    pi: np.ndarray
    residuals: Tuple[float, float]
    grid_size: int
    avg_alpha: float
    avg_beta: float


def _ly_matrix(model: Model2DNormalForm) -> np.ndarray:
    """Periodic central-difference discretization of L_y."""
    n = model.n_y
    h = 1.0 / n
    d = np.asarray(model.ly_diffusion, dtype=float)
    v = np.asarray(model.ly_drift, dtype=float)
    A = np.zeros((n, n))
    i = np.arange(n)
    up = (i + 1) % n
    dn = (i - 1) % n
    A[i, i] += -2.0 * d / h ** 2
    A[i, up] += d / h ** 2 + v / (2 * h)
    A[i, dn] += d / h ** 2 - v / (2 * h)
    return A


def _dy_matrix(model: Model2DNormalForm) -> np.ndarray:
    """First-order surface operator D_y (central differences)."""
    n = model.n_y
    h = 1.0 / n
    c = model.dy_values()
    A = np.zeros((n, n))
    i = np.arange(n)
    A[i, (i + 1) % n] += c / (2 * h)
    A[i, (i - 1) % n] -= c / (2 * h)
    return A


def operator_matrix(model: Model2DNormalForm, gamma: float) -> np.ndarray:
    """Discretized L_y + gamma*D_y + diag(alpha*gamma*(gamma-1) + beta*gamma)."""
    alpha = model.alpha_values()
    beta = model.beta_values()
    A = _ly_matrix(model) + gamma * _dy_matrix(model)
    A[np.diag_indices_from(A)] += alpha * gamma * (gamma - 1.0) + beta * gamma
    return A


def surface_invariant_measure(model: Model2DNormalForm, tol: float = 1e-9) -> np.ndarray:
    """Invariant probability weights of L_y on the grid.

    Solves the discrete adjoint stationarity system; the discretization must
    have a one-dimensional null space.
    """
    if model.n_y > DENSE_LIMIT:
        raise SolverError(f"grid size {model.n_y} exceeds the dense-solver limit")
    A = _ly_matrix(model)
    w, V = np.linalg.eig(A.T)
    scale = np.max(np.abs(A))
    near_null = np.abs(w) < tol * scale
    if near_null.sum() != 1:
        raise SolverError(
            f"L_y discretization at grid size {model.n_y} has null-space "
            f"dimension {int(near_null.sum())}, expected 1")
    pi = np.real(V[:, np.argmax(near_null)])
    pi = pi / pi.sum()
    if np.any(pi <= 0):
        raise SolverError("invariant measure is not positive on the grid")
    return pi


def _principal_pair(A: np.ndarray) -> Tuple[float, np.ndarray]:
    """Eigenvalue of maximal real part with its (sign-constant) eigenvector."""
    w, V = np.linalg.eig(A)
    k = int(np.argmax(np.real(w)))
    lam = float(np.real(w[k]))
    vec = np.real(V[:, k])
    if np.sum(vec) < 0:
        vec = -vec
    if np.any(vec <= 0):
        raise SolverError("principal eigenvector is not sign-constant; the "
                          "discretization lost Perron-Frobenius structure")
    return lam, vec


def principal_eigenvalue(model: Model2DNormalForm, gamma: float,
                         check_adjoint: bool = False, tol: float = 1e-8) -> float:
    A = operator_matrix(model, gamma)
    lam, _ = _principal_pair(A)
    if check_adjoint:
        lam_adj = float(np.max(np.real(np.linalg.eigvals(A.T))))
        if abs(lam - lam_adj) > 10 * tol * max(1.0, abs(lam)):
            raise SolverError(
                f"forward/adjoint principal eigenvalues disagree: {lam} vs {lam_adj}")
    return lam


def gamma_constant(alpha: float, beta: float) -> float:
    """Closed-form exponent for constant coefficients: 1 - beta/alpha."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if alpha == beta:
        raise ValueError("gamma = 0 excluded")
    return 1.0 - beta / alpha


def solve_gamma(model: Model2DNormalForm,
                search_bounds: Optional[Tuple[float, float]] = None,
                tol: float = 1e-10) -> GammaSolution:
    """Solve for the unique non-zero root of lambda(gamma).

    The root's sign follows sign(avg_alpha - avg_beta): repelling surfaces
    (avg_alpha < avg_beta) have gamma < 0.  The bracket excludes a band
    around the trivial root at 0 and is auto-expanded outward.
    """
    pi = surface_invariant_measure(model)
    alpha = model.alpha_values()
    beta = model.beta_values()
    avg_alpha = float(alpha @ pi)
    avg_beta = float(beta @ pi)
    if abs(avg_alpha - avg_beta) < 1e-8 * max(avg_alpha, abs(avg_beta)):
        raise SolverError("gamma = 0 case excluded: averaged alpha equals "
                          "averaged beta")
    repelling = avg_alpha < avg_beta

    def lam(g: float) -> float:
        return principal_eigenvalue(model, g)

    if search_bounds is not None:
        lo, hi = search_bounds
    else:
        guess = 1.0 - avg_beta / avg_alpha
        if repelling:
            lo, hi = 2.0 * guess, -GAMMA_EXCLUSION
        else:
            lo, hi = GAMMA_EXCLUSION, 2.0 * guess
    # expand the outer bracket edge until the sign changes
    f_inner = lam(hi if repelling else lo)
    outer = lo if repelling else hi
    while True:
        f_outer = lam(outer)
        if f_inner * f_outer <= 0:
            break
        outer *= 2.0
        if abs(outer) > MAX_BRACKET:
            raise SolverError(
                "no sign change of lambda(gamma) inside the bracket; widen "
                "search_bounds")
    if repelling:
        lo = outer
    else:
        hi = outer
    gamma = float(brentq(lam, lo, hi, xtol=tol))

    A = operator_matrix(model, gamma)
    _, phi = _principal_pair(A)
    phi = phi / (phi @ pi)
    _, w = _principal_pair(A.T)
    psi = w / pi
    psi = psi / (psi @ pi)
    res_fwd = float(np.max(np.abs(A @ phi)))
    # adjoint with respect to the pi-weighted inner product
    res_adj = float(np.max(np.abs((A.T @ (psi * pi)) / pi)))
    return GammaSolution(gamma, phi, psi, pi, (res_fwd, res_adj),
                         model.n_y, avg_alpha, avg_beta)
