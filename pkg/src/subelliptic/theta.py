"""Exponential coordinates E(u, eta) and their inverse Theta_eta.

For a free system the coordinate chart flows the frozen bracket basis
directly:  E(u, eta) = (time-1 flow of sum_I u_I X_[I])(eta), integrated
with fixed-step RK4.  The inverse Theta_eta(xi) is a damped Newton solve
with a finite-difference variational Jacobian, batched over many pairs.

The chart differs from the canonical one by an eta-dependent smooth change
of variables; every downstream use is through two-sided equivalences, which
tolerate this.  Basis coordinates are identified with group points through
the multiindex attached to each group coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConvergenceError, DomainError
from .fields import HormanderSystem, MultiIndex, bracket_field, \
    enumerate_brackets, hormander_rank, in_box
from .group import HomogeneousGroup, hom_norm


@dataclass(frozen=True)
class ThetaMap:
    """Frozen chart data: system, basis at the center point, and solver
    parameters.  Immutable; solves are independent and batch-friendly."""

    sys: HormanderSystem
    group: HomogeneousGroup
    center: np.ndarray
    basis: tuple                 # p MultiIndex, canonical order
    bracket_specs: tuple         # matching VectorFieldSpec
    ode_step: float = 1.0 / 64.0
    newton_tol: float = 1e-10
    newton_max_iter: int = 30
    jac_fd_step: float = 1e-6
    # permutation: group coordinate j is basis coordinate perm[j]
    perm: tuple = ()

    @property
    def nsteps(self) -> int:
        return max(1, int(round(1.0 / self.ode_step)))

    def u_weights(self) -> np.ndarray:
        return np.array([mi.weight for mi in self.basis], dtype=float)


def make_theta(sys: HormanderSystem, group: HomogeneousGroup,
               center=None, **kwargs) -> ThetaMap:
    """Freeze the determinant-greedy bracket basis at ``center`` and build
    the chart.  For the free built-ins the basis is the full enumeration."""
    center = (np.zeros(sys.dim) if center is None
              else np.asarray(center, dtype=float))
    rank, basis = hormander_rank(sys, center)
    if rank < sys.dim:
        raise ValueError(f"system is rank-deficient ({rank} < {sys.dim}) "
                         "at the requested center")
    basis = tuple(sorted(basis))
    specs = tuple(bracket_field(sys, mi.entries) for mi in basis)
    entry_pos = {mi.entries: j for j, mi in enumerate(basis)}
    try:
        perm = tuple(entry_pos[e] for e in group.coordinate_multiindices)
    except KeyError as exc:
        raise ValueError(
            "frozen basis does not match the group coordinate layout: "
            f"missing bracket {exc}") from None
    return ThetaMap(sys=sys, group=group, center=center, basis=basis,
                    bracket_specs=specs, perm=perm, **kwargs)


def u_to_group(t: ThetaMap, u) -> np.ndarray:
    """Reorder basis coordinates into the group's coordinate layout."""
    u = np.asarray(u, dtype=float)
    return u[..., list(t.perm)]


def theta_norm(t: ThetaMap, u) -> np.ndarray:
    """Homogeneous norm of a basis-coordinate vector."""
    return hom_norm(t.group, u_to_group(t, u))


def _combined_coeff(t: ThetaMap, u, x):
    """Coefficients of sum_I u_I X_[I] at x; u and x broadcast on (..., p)."""
    stacked = np.stack([B.coeff(x) for B in t.bracket_specs], axis=-2)
    return np.einsum("...i,...ij->...j", u, stacked)


def exp_E(t: ThetaMap, u, eta, check_domain: bool = True) -> np.ndarray:
    """Terminal point of the time-1 flow of sum u_I X_[I] from eta."""
    u = np.asarray(u, dtype=float)
    x = np.array(np.broadcast_arrays(np.asarray(eta, dtype=float),
                                     u)[0], copy=True)
    h = 1.0 / t.nsteps
    for _ in range(t.nsteps):
        k1 = _combined_coeff(t, u, x)
        k2 = _combined_coeff(t, u, x + 0.5 * h * k1)
        k3 = _combined_coeff(t, u, x + 0.5 * h * k2)
        k4 = _combined_coeff(t, u, x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if check_domain and not np.all(in_box(x, t.sys.domain_box)):
            raise DomainError("flow left the domain box")
    return x


def basis_matrix(t: ThetaMap, eta) -> np.ndarray:
    """Columns (X_[I])_eta of the frozen basis, shape (..., p, p)."""
    cols = [B.coeff(np.asarray(eta, dtype=float)) for B in t.bracket_specs]
    return np.stack(cols, axis=-1)


def theta(t: ThetaMap, eta, xi, strict: bool = True,
          check_domain: bool = False, chord: bool = True):
    """Solve E(u, eta) = xi for u by damped Newton, batched.

    Returns ``u`` when strict (raising ConvergenceError if any solve stays
    above ``newton_tol``); otherwise returns ``(u, converged_mask)``.

    The Jacobian is a forward-difference variational matrix; with ``chord``
    it is refreshed only when a residual stalls, which costs one flow per
    iteration instead of p+1.
    """
    eta = np.asarray(eta, dtype=float)
    xi = np.asarray(xi, dtype=float)
    eta_b, xi_b = np.broadcast_arrays(eta, xi)
    shape = eta_b.shape
    eta_f = eta_b.reshape(-1, shape[-1])
    xi_f = xi_b.reshape(-1, shape[-1])
    n, p = eta_f.shape

    M = basis_matrix(t, eta_f)
    u = np.linalg.solve(M, (xi_f - eta_f)[..., None])[..., 0]

    def F(uu):
        return exp_E(t, uu, eta_f, check_domain=check_domain) - xi_f

    def jac(uu):
        J = np.empty((len(uu), p, p))
        base = exp_E(t, uu, eta_f, check_domain=check_domain)
        for j in range(p):
            du = np.zeros(p)
            du[j] = t.jac_fd_step
            J[:, :, j] = (exp_E(t, uu + du, eta_f,
                                check_domain=check_domain)
                          - base) / t.jac_fd_step
        return J

    res = F(u)
    rnorm = np.linalg.norm(res, axis=-1)
    J = None
    stale = np.full(n, True)
    for _ in range(t.newton_max_iter):
        active = rnorm > t.newton_tol
        if not np.any(active):
            break
        if J is None or np.any(stale & active):
            J = jac(u)
            stale[:] = False
        try:
            step = np.linalg.solve(J, res[..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(
                J.reshape(-1, p, p)[0], res.T, rcond=None)[0].T
        lam = np.where(active, 1.0, 0.0)
        improved = ~active
        for _ in range(8):
            trial = u - lam[:, None] * step
            tres = F(trial)
            tnorm = np.linalg.norm(tres, axis=-1)
            better = active & ~improved & (tnorm < rnorm)
            u = np.where(better[:, None], trial, u)
            res = np.where(better[:, None], tres, res)
            rnorm = np.where(better, tnorm, rnorm)
            improved |= better
            lam = np.where(active & ~improved, lam * 0.5, lam)
            if np.all(improved):
                break
        # solves that could not improve get a fresh Jacobian next round
        if not chord:
            stale[:] = True
        else:
            stale |= active & ~improved
        if np.any(active & ~improved & ~stale):
            break
    converged = rnorm <= t.newton_tol
    u = u.reshape(shape)
    if strict:
        if not np.all(converged):
            raise ConvergenceError(
                f"{int(np.sum(~converged))}/{n} Newton solves above "
                f"tolerance (max residual {float(np.max(rnorm)):.3e})",
                last_residual=float(np.max(rnorm)))
        return u
    return u, converged.reshape(shape[:-1])


def jacobian_factor(t: ThetaMap, eta, u):
    """(c_eta, correction): the frozen-basis determinant at eta and the
    relative deviation of |det dE/du| from it."""
    eta = np.asarray(eta, dtype=float)
    u = np.asarray(u, dtype=float)
    M = basis_matrix(t, eta)
    c_eta = np.abs(np.linalg.det(M))
    if np.any(c_eta == 0.0):
        raise ValueError("singular frozen basis at eta")
    p = t.sys.dim
    h = t.jac_fd_step
    cols = []
    for j in range(p):
        du = np.zeros(p)
        du[j] = h
        cols.append((exp_E(t, u + du, eta, check_domain=False)
                     - exp_E(t, u - du, eta, check_domain=False)) / (2 * h))
    J = np.stack(cols, axis=-1)
    correction = np.abs(np.linalg.det(J)) / c_eta - 1.0
    return c_eta, correction


def approx_residual(t: ThetaMap, i: int, f, fgrad, eta, xi,
                    h: float = 1e-4):
    """X_i(f o Theta_eta)(xi) - (Y_i f)(Theta_eta(xi)).

    ``f``/``fgrad`` live on the group (group coordinate layout).  The field
    derivative is a central difference along the integral curve of X_i.
    """
    from .group import field_flow  # local import to avoid cycle at load

    eta = np.asarray(eta, dtype=float)
    xi = np.asarray(xi, dtype=float)
    X = t.sys.field(i)

    def g(pts):
        u = theta(t, eta, pts, strict=True, chord=False)
        return f(u_to_group(t, u))

    xp = field_flow(X, xi, h)
    xm = field_flow(X, xi, -h)
    lhs = (g(xp) - g(xm)) / (2.0 * h)

    u0 = u_to_group(t, theta(t, eta, xi, strict=True, chord=False))
    Yi = t.group.model_system.field(i)
    rhs = np.einsum("...i,...i->...", Yi.coeff(u0), fgrad(u0))
    return lhs - rhs
