"""Levi parametrix engine on a quadrature grid.

The frozen chart turns the model kernel into the parametrix
P(x, y) = Gamma(Theta_y(x)); Z_1 = LP is formed by second-order central
differences along the integral curves of the fields; the primed series
Z'_j is built by the convolution recursion with diagonal exclusion, and
gamma(x, y) = (P(x, y) + J'(x, y)) / c_0(y)  assembles the local
fundamental solution.  Everything off the recursion itself is batched
over point pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import PatchTooLargeError, PoleError
from .fields import HormanderSystem
from .group import ModelKernel, field_flow, gamma_eval
from .theta import ThetaMap, basis_matrix, make_theta, theta, theta_norm, \
    u_to_group


# --- quadrature grid -------------------------------------------------------

@dataclass(frozen=True)
class GridDomain:
    """Product midpoint lattice over a box patch.

    ``weight`` is the common quadrature weight (cell volume); the sum of
    weights equals the box volume exactly.  ``rho_excl`` is the diagonal
    exclusion radius, in d_fast units, applied to singular-kernel pairs.
    """

    box: np.ndarray        # (p, 2)
    shape: tuple           # cells per axis
    nodes: np.ndarray      # (N, p) cell midpoints, C order
    weight: float
    spacings: np.ndarray   # (p,)
    rho_excl: float
    coordinate_weights: np.ndarray = None   # dilation exponent per axis

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def cell_scale(self) -> float:
        """Cell size in the homogeneous metric (an offset h along a
        weight-w axis lies at distance ~ h^(1/w))."""
        cw = (np.ones(len(self.shape)) if self.coordinate_weights is None
              else np.asarray(self.coordinate_weights, dtype=float))
        return float(max(h ** (1.0 / w)
                         for h, w in zip(self.spacings, cw)))

    def axes(self):
        """Per-axis midpoint coordinate arrays."""
        out = []
        for (lo, hi), n, h in zip(self.box, self.shape, self.spacings):
            out.append(lo + (np.arange(n) + 0.5) * h)
        return out


def make_grid(box, shape, rho_excl=None, sandwich_const: float = 1.0,
              coordinate_weights=None) -> GridDomain:
    box = np.asarray(box, dtype=float)
    shape = tuple(int(s) for s in shape)
    axes, spac = [], []
    for (lo, hi), n in zip(box, shape):
        h = (hi - lo) / n
        spac.append(h)
        axes.append(lo + (np.arange(n) + 0.5) * h)
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=-1)
    if coordinate_weights is None:
        cw = np.ones(len(shape))
    else:
        cw = np.asarray(coordinate_weights, dtype=float)
    if rho_excl is None:
        # cell size measured in the homogeneous metric: an offset of h
        # along a weight-w axis sits at distance ~ h^(1/w)
        cell = max(h ** (1.0 / w) for h, w in zip(spac, cw))
        rho_excl = 2.0 * cell * sandwich_const
    return GridDomain(box=box, shape=shape, nodes=nodes,
                      weight=float(np.prod(spac)),
                      spacings=np.asarray(spac), rho_excl=float(rho_excl),
                      coordinate_weights=cw)


def patch_box(center, radius: float, coordinate_weights) -> np.ndarray:
    """Anisotropic box patch of homogeneous-norm radius ``radius``:
    half-width radius**w along each weight-w axis."""
    center = np.asarray(center, dtype=float)
    cw = np.asarray(coordinate_weights, dtype=float)
    half = float(radius) ** cw
    return np.stack([center - half, center + half], axis=-1)


@dataclass
class KernelTable:
    """Dense two-point kernel values on grid x grid node pairs.

    Masked (near-pole) entries hold 0 so that quadrature contractions can
    use plain matrix products; ``pole_mask`` records which entries those
    are.
    """

    values: np.ndarray      # (Nx, Ny)
    pole_mask: np.ndarray   # bool, True where excluded

    def finite_off_mask(self) -> bool:
        return bool(np.all(np.isfinite(self.values[~self.pole_mask])))


# --- parametrix and Z1 -----------------------------------------------------

def parametrix_P(t: ThetaMap, kernel: ModelKernel, x, y) -> np.ndarray:
    """Gamma(Theta_y(x)), batched over broadcastable point arrays."""
    u = u_to_group(t, theta(t, y, x))
    flat = u.reshape(-1, u.shape[-1])
    pole = np.all(flat == 0.0, axis=-1)
    if u.ndim == 1:
        if pole[0]:
            raise PoleError("parametrix evaluated on the diagonal")
        return gamma_eval(kernel, u)
    out = np.empty(flat.shape[0])
    out[pole] = np.inf
    if np.any(~pole):
        out[~pole] = gamma_eval(kernel, flat[~pole])
    return out.reshape(u.shape[:-1])


def Z1(sys: HormanderSystem, t: ThetaMap, kernel: ModelKernel, x, y,
       rel_step: float = 1e-3) -> np.ndarray:
    """L applied in x to P(., y): flow-based central differences.

    The step is proportional to d_fast(x, y) (weight-2 drift uses the
    squared step), so accuracy is uniform relative to the kernel's local
    scale right up to the exclusion radius.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x, y = np.broadcast_arrays(x, y)
    squeeze = x.ndim == 1
    x = np.atleast_2d(x)
    y = np.atleast_2d(y)
    d = theta_norm(t, theta(t, y, x))
    if np.any(d == 0.0):
        raise PoleError("Z1 evaluated on the diagonal")
    P0 = parametrix_P(t, kernel, x, y)
    total = np.zeros_like(P0)
    h = (rel_step * d)[:, None]
    for i in range(1, len(sys.generators) + 1):
        X = sys.field(i)
        Pp = parametrix_P(t, kernel, field_flow(X, x, h), y)
        Pm = parametrix_P(t, kernel, field_flow(X, x, -h), y)
        total += (Pp - 2.0 * P0 + Pm) / h[:, 0] ** 2
    if sys.has_drift:
        s = (rel_step * d ** 2)[:, None]
        Pp = parametrix_P(t, kernel, field_flow(sys.drift, x, s), y)
        Pm = parametrix_P(t, kernel, field_flow(sys.drift, x, -s), y)
        total += (Pp - Pm) / (2.0 * s[:, 0])
    return total[0] if squeeze else total


def z1_cartesian(sys: HormanderSystem, t: ThetaMap, kernel: ModelKernel,
                 x, y, rel_step: float = 1e-3) -> float:
    """Independent oracle for Z1: plain Cartesian FD hessian/gradient of
    P(., y) contracted with the field coefficients,
    X_i^2 f = b_i^T H b_i + ((b_i . grad) b_i) . grad f.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    p = x.shape[-1]
    d = float(theta_norm(t, theta(t, y, x)))
    h = rel_step * d

    def P(pt):
        return float(parametrix_P(t, kernel, pt, y))

    grad = np.empty(p)
    hess = np.empty((p, p))
    e = np.eye(p) * h
    P0 = P(x)
    for i in range(p):
        fp, fm = P(x + e[i]), P(x - e[i])
        grad[i] = (fp - fm) / (2 * h)
        hess[i, i] = (fp - 2 * P0 + fm) / h ** 2
    for i in range(p):
        for j in range(i + 1, p):
            fpp = P(x + e[i] + e[j])
            fpm = P(x + e[i] - e[j])
            fmp = P(x - e[i] + e[j])
            fmm = P(x - e[i] - e[j])
            hess[i, j] = hess[j, i] = (fpp - fpm - fmp + fmm) / (4 * h ** 2)
    total = 0.0
    for i in range(1, len(sys.generators) + 1):
        X = sys.field(i)
        b = X.coeff(x)
        transport = np.einsum("ji,i->j", X.jacobian(x), b)
        total += float(b @ hess @ b + transport @ grad)
    if sys.has_drift:
        total += float(sys.drift.coeff(x) @ grad)
    return total


def c0(t: ThetaMap, x) -> np.ndarray:
    """|det of the frozen bracket basis at x| — the chart volume factor."""
    c = np.abs(np.linalg.det(basis_matrix(t, np.asarray(x, dtype=float))))
    if np.any(c == 0.0):
        raise ValueError("singular frozen basis")
    return c


# --- dense tables ----------------------------------------------------------

@dataclass
class ParametrixTables:
    grid: GridDomain
    P: KernelTable
    Z1: KernelTable
    d_fast: np.ndarray      # (N, N) chart distances
    c0: np.ndarray          # (N,)
    quad_scale: np.ndarray  # (N, N) fractional rim weights in [0, 1]


def rim_weights(grid: GridDomain, d: np.ndarray) -> np.ndarray:
    """Fractional quadrature weight across the exclusion boundary.

    A cell whose center sits at distance d from the pole is kept with the
    estimated fraction of its volume outside the exclusion ball; the
    linear ramp over one homogeneous cell size turns the O(h) rim error
    of a hard cutoff into a second-order one.
    """
    cell = max(grid.cell_scale, 1e-300)
    return np.clip((d - grid.rho_excl) / cell + 0.5, 0.0, 1.0)


def build_tables(sys: HormanderSystem, t: ThetaMap, kernel: ModelKernel,
                 grid: GridDomain, rel_step: float = 1e-3,
                 chunk: int = 150000) -> ParametrixTables:
    """Tabulate P, Z1, and d_fast on all node pairs (chunked, batched).

    Values are evaluated wherever the rim weight is positive; the pole
    mask marks the fully excluded core."""
    nodes = grid.nodes
    N = grid.n_nodes
    d = np.empty((N, N))
    P = np.zeros((N, N))
    Z = np.zeros((N, N))
    xi = np.repeat(nodes, N, axis=0)
    yi = np.tile(nodes, (N, 1))
    dflat = d.reshape(-1)
    Pflat = P.reshape(-1)
    Zflat = Z.reshape(-1)
    d_keep = grid.rho_excl - 0.5 * grid.cell_scale
    for s in range(0, N * N, chunk):
        sl = slice(s, min(N * N, s + chunk))
        xs, ys = xi[sl], yi[sl]
        dd = theta_norm(t, theta(t, ys, xs))
        dflat[sl] = dd
        ok = dd > max(d_keep, 0.0)
        if np.any(ok):
            Pflat[sl][ok] = parametrix_P(t, kernel, xs[ok], ys[ok])
            Zflat[sl][ok] = Z1(sys, t, kernel, xs[ok], ys[ok],
                               rel_step=rel_step)
    scale = rim_weights(grid, d)
    mask = scale <= 0.0
    return ParametrixTables(grid=grid,
                            P=KernelTable(P, mask.copy()),
                            Z1=KernelTable(Z, mask.copy()),
                            d_fast=d, c0=c0(t, nodes),
                            quad_scale=scale)


# --- recursion and assembly ------------------------------------------------

@dataclass
class RecursionReport:
    sups: list
    ratios: list
    accepted: bool
    tail_bound: float
    compensation: list      # per-level excluded-ball contribution estimate
    excluded_fraction: float

    @property
    def delta(self) -> float:
        """Fitted geometric ratio of the accepted tail (max of the last
        two sup-norm ratios; 0 for an empty series)."""
        if not self.ratios:
            return 0.0
        return float(max(self.ratios[-2:]))


def z_prime_recursion(grid: GridDomain, z1_table: KernelTable, c0_vec,
                      alpha: float, Q: float, j_max: int = 14,
                      tol: float = 1e-3, quad_scale=None):
    """Primed series tables [Z'_1, Z'_2, ...] with the stop rule.

    Z'_1 = Z_1 / c_0(x);  Z'_{j+1}(x, y) = int Z'_1(x, z) Z'_j(z, y) dz by
    the midpoint rule with the grid's diagonal exclusion.  Stops once the
    sup-norm ratio has been < 1 twice in a row and the fitted geometric
    tail is below tol (relative to sup|Z'_1|); raises PatchTooLargeError
    if no contraction appears within ceil(Q/alpha) + 2 levels.
    """
    c0_vec = np.asarray(c0_vec, dtype=float)
    Z1p = z1_table.values / c0_vec[:, None]
    if quad_scale is not None:
        Z1p = Z1p * quad_scale
    Z1p[z1_table.pole_mask] = 0.0
    tables = [KernelTable(Z1p, z1_table.pole_mask.copy())]
    sups = [float(np.max(np.abs(Z1p)))]
    if sups[0] == 0.0:
        # model-exact operator: the series is empty beyond Z'_1
        return tables, RecursionReport(
            sups=sups, ratios=[], accepted=True, tail_bound=0.0,
            compensation=[0.0],
            excluded_fraction=float(np.mean(z1_table.pole_mask)))
    j0 = math.ceil(Q / alpha) + 2
    max_excl = int(np.max(np.sum(z1_table.pole_mask, axis=1)))
    ratios = []
    comp = [grid.weight * max_excl * sups[0]]
    consecutive = 0
    accepted = False
    tail = np.inf
    for j in range(1, j_max):
        nxt = grid.weight * (Z1p @ tables[-1].values)
        tables.append(KernelTable(nxt, np.zeros_like(z1_table.pole_mask)))
        sup = float(np.max(np.abs(nxt)))
        ratio = sup / sups[-1] if sups[-1] > 0 else 0.0
        sups.append(sup)
        ratios.append(ratio)
        comp.append(grid.weight * max_excl * sups[0] * sups[-2])
        consecutive = consecutive + 1 if ratio < 1.0 else 0
        if consecutive >= 2:
            tail = sup * ratio / (1.0 - ratio)
            if tail < tol * sups[0]:
                accepted = True
                break
        if j >= j0 and consecutive == 0:
            raise PatchTooLargeError(
                f"Z' series not contracting after {j} levels "
                f"(last ratio {ratio:.3f}); shrink the patch")
    report = RecursionReport(
        sups=sups, ratios=ratios, accepted=accepted,
        tail_bound=float(tail if np.isfinite(tail) else np.inf),
        compensation=comp,
        excluded_fraction=float(np.mean(z1_table.pole_mask)))
    if not accepted and ratios and ratios[-1] >= 1.0:
        raise PatchTooLargeError(
            f"Z' series not contracting (last ratio {ratios[-1]:.3f})")
    return tables, report


@dataclass
class GammaAssembly:
    gamma: KernelTable
    phi_prime: KernelTable
    j_prime: KernelTable
    c0: np.ndarray


def assemble_gamma(grid: GridDomain, P_table: KernelTable, zprime_tables,
                   c0_vec, quad_scale=None) -> GammaAssembly:
    """Phi' = sum_j Z'_j;  J' = int P Phi' dz;  gamma = (P + J') / c0(y)."""
    c0_vec = np.asarray(c0_vec, dtype=float)
    Phi = np.zeros_like(P_table.values)
    for tab in zprime_tables:
        Phi = Phi + tab.values
    Pq = P_table.values if quad_scale is None else P_table.values * quad_scale
    J = grid.weight * (Pq @ Phi)
    gamma = (P_table.values + J) / c0_vec[None, :]
    gamma[P_table.pole_mask] = 0.0
    return GammaAssembly(
        gamma=KernelTable(gamma, P_table.pole_mask.copy()),
        phi_prime=KernelTable(Phi, zprime_tables[0].pole_mask.copy()),
        j_prime=KernelTable(J, np.zeros_like(P_table.pole_mask)),
        c0=c0_vec)


def integral_equation_residual(grid: GridDomain, zprime_tables,
                               phi_table: KernelTable) -> float:
    """sup |Phi' - Z'_1 - int Z'_1 Phi' dz| — consistency of the series
    with its integral equation, up to the quadrature's own tolerance."""
    Z1p = zprime_tables[0].values
    Phi = phi_table.values
    resid = Phi - Z1p - grid.weight * (Z1p @ Phi)
    return float(np.max(np.abs(resid)))


# --- pointwise gamma off the coarse grid -----------------------------------

def interp_column(grid: GridDomain, col_values):
    """Trilinear interpolant of a per-node column over the midpoint
    lattice (linear extrapolation toward the half-cell boundary rim)."""
    from scipy.interpolate import RegularGridInterpolator

    f = RegularGridInterpolator(
        tuple(grid.axes()), np.asarray(col_values).reshape(grid.shape),
        method="linear", bounds_error=False, fill_value=None)

    def ev(points):
        return f(np.atleast_2d(np.asarray(points, dtype=float)))

    return ev


def gamma_at(t: ThetaMap, kernel: ModelKernel, grid: GridDomain,
             assembly: GammaAssembly, iy: int, points,
             min_d: float = 0.0):
    """gamma(x, y_iy) at arbitrary x: exact P plus the interpolated
    J' column.  Points with d_fast below ``min_d`` come back as nan."""
    y = grid.nodes[iy]
    points = np.atleast_2d(np.asarray(points, dtype=float))
    d = theta_norm(t, theta(t, y, points))
    out = np.full(points.shape[0], np.nan)
    ok = d > max(min_d, 0.0)
    if np.any(ok):
        P = parametrix_P(t, kernel, points[ok], y)
        J = interp_column(grid, assembly.j_prime.values[:, iy])(points[ok])
        out[ok] = (P + J) / assembly.c0[iy]
    return out


def j_prime_dense(grid: GridDomain, assembly: GammaAssembly):
    """Multilinear interpolant of J'(x, y) in both slots over the
    midpoint lattice (2p-dimensional tensor grid)."""
    from scipy.interpolate import RegularGridInterpolator

    axes = tuple(grid.axes())
    table = assembly.j_prime.values.reshape(grid.shape + grid.shape)
    f = RegularGridInterpolator(axes + axes, table, method="linear",
                                bounds_error=False, fill_value=None)

    def ev(x, y):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        x, y = np.broadcast_arrays(x, y)
        return f(np.concatenate([x, y], axis=-1))

    return ev


def gamma_dense(t: ThetaMap, kernel: ModelKernel, grid: GridDomain,
                assembly: GammaAssembly, x, y, min_d: float = 0.0):
    """gamma(x, y) at arbitrary off-grid pairs.

    The direct parametrix term and the first slot of the J' quadrature
    are evaluated exactly; only Phi'(z, .) is interpolated in y, so the
    remaining error is the quadrature's own refinement error.  Pairs
    closer than ``min_d`` come back nan."""
    from scipy.interpolate import RegularGridInterpolator

    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    x, y = np.broadcast_arrays(x, y)
    d = theta_norm(t, theta(t, y, x))
    out = np.full(x.shape[0], np.nan)
    ok = d > max(min_d, 0.0)
    if not np.any(ok):
        return out
    xq, yq = x[ok], y[ok]
    nq = xq.shape[0]
    N = grid.n_nodes
    # Phi'(z, y) interpolated in the y slot, all z rows at once
    phi_by_y = RegularGridInterpolator(
        tuple(grid.axes()),
        assembly.phi_prime.values.T.reshape(grid.shape + (N,)),
        method="linear", bounds_error=False, fill_value=None)
    Phi_zy = phi_by_y(yq)                                    # (nq, N)
    # exact parametrix rows P(x, z) with the rim-weighted exclusion
    xs = np.repeat(xq, N, axis=0)
    zs = np.tile(grid.nodes, (nq, 1))
    d_xz = theta_norm(t, theta(t, zs, xs))
    scale = rim_weights(grid, d_xz)
    P_xz = np.zeros(nq * N)
    pos = scale > 0.0
    if np.any(pos):
        P_xz[pos] = parametrix_P(t, kernel, xs[pos], zs[pos])
    P_xz = (P_xz * scale).reshape(nq, N)
    J = grid.weight * np.sum(P_xz * Phi_zy, axis=1)
    P_direct = parametrix_P(t, kernel, xq, yq)
    out[ok] = (P_direct + J) / c0(t, yq)
    return out


# --- weak identity ---------------------------------------------------------

def weak_identity_check(sys: HormanderSystem, fine_grid: GridDomain,
                        gamma_values, psi, y) -> dict:
    """Quadrature defect of  int gamma(x, y) L*psi(x) dx = -psi(y).

    ``gamma_values`` are gamma(., y) on the fine grid nodes (nan at
    excluded nodes).  Returns the defect and its size relative to psi(y).
    """
    from .solver import transpose_apply

    gamma_values = np.asarray(gamma_values, dtype=float)
    lstar = transpose_apply(sys, psi, fine_grid.nodes)
    ok = np.isfinite(gamma_values)
    integral = float(np.sum(gamma_values[ok] * lstar[ok]) * fine_grid.weight)
    psi_y = float(psi.value(np.asarray(y, dtype=float)))
    defect = integral + psi_y
    rel = abs(defect) / abs(psi_y) if psi_y != 0.0 else abs(defect)
    return {"integral": integral, "psi_y": psi_y, "defect": defect,
            "relative_defect": rel,
            "excluded_nodes": int(np.sum(~ok))}


# --- second derivatives of gamma -------------------------------------------

def gamma_second_derivatives(sys: HormanderSystem, gamma_fn, x,
                             rel_step: float, d) -> np.ndarray:
    """X_i X_j gamma(., y) at x by nested flow-based central differences;
    returns the (i, j) matrix over generator indices."""
    x = np.asarray(x, dtype=float)
    ngen = len(sys.generators)
    h = rel_step * float(d)

    def X_fd(i, f):
        X = sys.field(i)

        def g(pt):
            return (f(field_flow(X, pt, h))
                    - f(field_flow(X, pt, -h))) / (2.0 * h)

        return g

    out = np.empty((ngen, ngen))
    for i in range(1, ngen + 1):
        for j in range(1, ngen + 1):
            out[i - 1, j - 1] = X_fd(i, X_fd(j, gamma_fn))(x)
    return out


def second_derivative_bounds(sys: HormanderSystem, t: ThetaMap,
                             gamma_fn, profile, pairs,
                             epsilon: float = 0.15,
                             rel_step: float = 5e-3) -> dict:
    """Empirical checks on X_i X_j gamma.

    (a) |X_i X_j gamma| * |B(x, d(x, y))| over the pairs (reported sup);
    (b) Holder slope: log |D2 gamma(x1) - D2 gamma(x2)| against
        log d(x1, x2) over pairs with d(x1, y) >= 2 d(x1, x2), compared
        to alpha - 2 epsilon.
    """
    pairs = np.asarray(pairs, dtype=float)   # (n, 3, p): x1, x2, y
    if pairs.shape[0] < 4:
        raise ValueError("need at least 4 (x1, x2, y) triples")
    products = []
    diffs, seps = [], []
    for x1, x2, y in pairs:
        d1 = float(theta_norm(t, theta(t, y, x1)))
        d12 = float(theta_norm(t, theta(t, x1, x2)))
        D1 = gamma_second_derivatives(sys, lambda p: gamma_fn(p, y), x1,
                                      rel_step, d1)
        products.append(float(np.max(np.abs(D1)))
                        * float(profile.volume(d1)))
        if d1 >= 2.0 * d12 and d12 > 0:
            D2 = gamma_second_derivatives(sys, lambda p: gamma_fn(p, y),
                                          x2, rel_step, d1)
            diffs.append(max(float(np.max(np.abs(D1 - D2))), 1e-300))
            seps.append(d12)
    slope = float("nan")
    if len(diffs) >= 3:
        slope = float(np.polyfit(np.log(seps), np.log(diffs), 1)[0])
    return {"sup_weighted_second_derivative": float(np.max(products)),
            "weighted_products": products,
            "holder_slope": slope,
            "holder_threshold": sys.alpha - 2.0 * epsilon,
            "n_holder_pairs": len(diffs)}


# --- end-to-end pipeline ---------------------------------------------------

@dataclass
class ParametrixRun:
    theta: ThetaMap
    grid: GridDomain
    tables: ParametrixTables
    zprime: list
    recursion: RecursionReport
    assembly: GammaAssembly
    patch_radius: float
    bisections: int


def parametrix_pipeline(sys: HormanderSystem, group, kernel: ModelKernel,
                        patch_radius: float, coarse_shape,
                        rel_step: float = 1e-3, tol: float = 1e-3,
                        j_max: int = 14, ode_step: float = 1.0 / 8.0,
                        newton_tol: float = 1e-12,
                        max_bisections: int = 3,
                        center=None, rho_excl=None) -> ParametrixRun:
    """Build gamma end to end, shrinking the patch (up to 3 halvings)
    when the Z' series fails to contract."""
    t = make_theta(sys, group, ode_step=ode_step, newton_tol=newton_tol)
    R = float(patch_radius)
    if center is None:
        center = np.zeros(sys.dim)
    last_exc = None
    for attempt in range(max_bisections + 1):
        box = patch_box(center, R, group.dilation_exponents)
        grid = make_grid(box, coarse_shape, rho_excl=rho_excl,
                         coordinate_weights=group.dilation_exponents)
        tables = build_tables(sys, t, kernel, grid, rel_step=rel_step)
        try:
            zprime, report = z_prime_recursion(
                grid, tables.Z1, tables.c0, sys.alpha, group.Q,
                j_max=j_max, tol=tol, quad_scale=tables.quad_scale)
        except PatchTooLargeError as exc:
            last_exc = exc
            R *= 0.5
            continue
        assembly = assemble_gamma(grid, tables.P, zprime, tables.c0,
                                  quad_scale=tables.quad_scale)
        return ParametrixRun(theta=t, grid=grid, tables=tables,
                             zprime=zprime, recursion=report,
                             assembly=assembly, patch_radius=R,
                             bisections=attempt)
    raise PatchTooLargeError(
        f"series still not contracting after {max_bisections} patch "
        f"halvings (last: {last_exc})")
