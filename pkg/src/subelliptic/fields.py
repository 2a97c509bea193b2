"""Vector fields as first-class values.

A field X = sum_j b_j(x) d/dx_j is represented by its coefficient map
``coeff`` and (optionally) the analytic Jacobian of the coefficients.
Everything is vectorized: ``coeff`` maps an array of shape (..., p) to an
array of shape (..., p), and ``jac`` to (..., p, p) with
``jac[..., j, i] = d b_j / d x_i``.

Weighted multiindices, nested brackets, and the rank test follow the usual
convention for operators L = sum X_i^2 + X_0: the drift X_0 carries weight
2, the generators X_1..X_n weight 1, and a bracket's weight is the sum of
the weights of its entries.
"""

from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DimensionMismatchError, DomainError

_SINGULAR_NUDGE = 1e-12


def index_weight(i: int) -> int:
    """Weight of a single field index: 2 for the drift (index 0), else 1."""
    return 2 if i == 0 else 1


def _nudge_off_hyperplanes(x: np.ndarray) -> np.ndarray:
    """Push coordinates off the |x_i| = 0 hyperplanes before differencing.

    Coefficients of the built-in nonsmooth families involve |x_i|^alpha whose
    formal derivative is undefined at 0; a 1e-12 perturbation keeps finite
    differences total without affecting any quoted tolerance.
    """
    x = np.array(x, dtype=float, copy=True)
    small = np.abs(x) < _SINGULAR_NUDGE
    if np.any(small):
        x[small] = _SINGULAR_NUDGE
    return x


def fd_jacobian(coeff: Callable, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of a vectorized coefficient map."""
    x = _nudge_off_hyperplanes(np.asarray(x, dtype=float))
    p = x.shape[-1]
    cols = []
    for i in range(p):
        e = np.zeros(p)
        e[i] = step
        cols.append((coeff(x + e) - coeff(x - e)) / (2.0 * step))
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class VectorFieldSpec:
    """A single vector field with evaluable coefficients.

    Parameters
    ----------
    dim : int
        Ambient dimension p.
    coeff : callable
        Vectorized coefficient map, (..., p) -> (..., p).
    jac : callable or None
        Vectorized coefficient Jacobian, (..., p) -> (..., p, p); when None
        a central-difference fallback with step ``fd_step`` is used.
    weight : int
        1 for generators, 2 for the drift; bracket-built fields carry the
        sum of their entries' weights.
    smoothness_tag : str
        Trusted metadata ("analytic" or a Hoelder class like "C^{1,1}").
    """

    dim: int
    coeff: Callable[[np.ndarray], np.ndarray]
    jac: Optional[Callable[[np.ndarray], np.ndarray]] = None
    weight: int = 1
    smoothness_tag: str = "analytic"
    name: str = ""
    fd_step: float = 1e-5

    def __call__(self, x) -> np.ndarray:
        return self.coeff(np.asarray(x, dtype=float))

    def jacobian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.jac is not None:
            return self.jac(x)
        return fd_jacobian(self.coeff, x, self.fd_step)

    def divergence(self, x) -> np.ndarray:
        """sum_j d b_j / d x_j, the trace of the coefficient Jacobian."""
        J = self.jacobian(x)
        return np.trace(J, axis1=-2, axis2=-1)


def constant_field(direction: Sequence[float], weight: int = 1,
                   name: str = "") -> VectorFieldSpec:
    """A constant-coefficient field (Euclidean frame member)."""
    b = np.asarray(direction, dtype=float)
    p = b.shape[0]

    def coeff(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(b, x.shape).copy()

    def jac(x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape + (p,))

    return VectorFieldSpec(dim=p, coeff=coeff, jac=jac, weight=weight,
                           smoothness_tag="analytic", name=name)


@dataclass(frozen=True, order=True)
class MultiIndex:
    """A bracket index I = (i_1..i_k) with its weighted length.

    Ordering is (weight, entries), which is the deterministic enumeration
    order used throughout.
    """

    weight: int
    entries: tuple

    def __len__(self):
        return len(self.entries)

    def __str__(self):
        return "(" + ",".join(str(i) for i in self.entries) + ")"


def multiindex(entries: Sequence[int]) -> MultiIndex:
    entries = tuple(int(i) for i in entries)
    return MultiIndex(weight=sum(index_weight(i) for i in entries),
                      entries=entries)


def in_box(x, box) -> np.ndarray:
    """Componentwise containment test against an axis-aligned (p, 2) box."""
    x = np.asarray(x, dtype=float)
    box = np.asarray(box, dtype=float)
    return np.all((x >= box[:, 0]) & (x <= box[:, 1]), axis=-1)


@dataclass(frozen=True)
class HormanderSystem:
    """An ordered family X_0..X_n with weighted step r on a box.

    ``drift`` is the (optional) weight-2 field X_0; ``generators`` are
    X_1..X_n. If ``step`` is 2 the Hoelder exponent must be 1.
    """

    generators: tuple
    step: int
    alpha: float
    domain_box: np.ndarray
    drift: Optional[VectorFieldSpec] = None
    name: str = ""

    def __post_init__(self):
        if self.step < 2:
            raise ValueError("step r must be >= 2")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must lie in (0, 1]")
        if self.step == 2 and self.alpha != 1.0:
            raise ValueError("step 2 requires alpha = 1")
        box = np.asarray(self.domain_box, dtype=float)
        if box.shape != (self.dim, 2):
            raise DimensionMismatchError(
                f"domain_box shape {box.shape} != ({self.dim}, 2)")
        object.__setattr__(self, "domain_box", box)
        object.__setattr__(self, "generators", tuple(self.generators))
        for X in self.generators:
            if X.dim != self.dim:
                raise DimensionMismatchError("generator dimension mismatch")
        if self.drift is not None and self.drift.dim != self.dim:
            raise DimensionMismatchError("drift dimension mismatch")

    @property
    def dim(self) -> int:
        return self.generators[0].dim

    @property
    def has_drift(self) -> bool:
        return self.drift is not None

    def field(self, i: int) -> VectorFieldSpec:
        """Field by operator index: 0 is the drift, 1..n the generators."""
        if i == 0:
            if self.drift is None:
                raise KeyError("system has no drift field")
            return self.drift
        return self.generators[i - 1]

    @property
    def field_indices(self) -> tuple:
        idx = tuple(range(1, len(self.generators) + 1))
        return ((0,) + idx) if self.has_drift else idx

    def require_in_box(self, x):
        ok = in_box(x, self.domain_box)
        if not np.all(ok):
            raise DomainError("point outside the configured domain box")


def apply_field(X: VectorFieldSpec, f: Callable, x,
                grad: Optional[Callable] = None,
                fd_step: float = 1e-6,
                domain_box=None) -> np.ndarray:
    """Directional derivative Xf(x) = sum_j b_j(x) d_j f(x).

    ``grad``, if given, must be vectorized (..., p) -> (..., p); otherwise
    the gradient of f is formed by central differences with ``fd_step``.
    """
    x = np.asarray(x, dtype=float)
    if domain_box is not None and not np.all(in_box(x, domain_box)):
        raise DomainError("point outside the configured domain box")
    if grad is None:
        p = x.shape[-1]
        parts = []
        for j in range(p):
            e = np.zeros(p)
            e[j] = fd_step
            parts.append((f(x + e) - f(x - e)) / (2.0 * fd_step))
        g = np.stack(parts, axis=-1)
    else:
        g = np.asarray(grad(x), dtype=float)
    return np.einsum("...j,...j->...", X.coeff(x), g)


def _degrade_tag(a: str, b: str) -> str:
    if a == "analytic" and b == "analytic":
        return "analytic"
    return "bracket-degraded"


def commutator(X: VectorFieldSpec, Y: VectorFieldSpec) -> VectorFieldSpec:
    """Lie bracket [X, Y], with coefficients from the two Jacobians."""
    if X.dim != Y.dim:
        raise DimensionMismatchError("commutator of fields with different dim")

    def coeff(pts):
        pts = np.asarray(pts, dtype=float)
        bX = X.coeff(pts)
        bY = Y.coeff(pts)
        JX = X.jacobian(pts)
        JY = Y.jacobian(pts)
        return (np.einsum("...i,...ji->...j", bX, JY)
                - np.einsum("...i,...ji->...j", bY, JX))

    return VectorFieldSpec(
        dim=X.dim, coeff=coeff, jac=None,
        weight=X.weight + Y.weight,
        smoothness_tag=_degrade_tag(X.smoothness_tag, Y.smoothness_tag),
        name=f"[{X.name or 'X'},{Y.name or 'Y'}]",
        fd_step=min(X.fd_step, Y.fd_step))


def _keep(entries: tuple) -> bool:
    """Canonical-representative rule for nested brackets.

    Length-1 indices are always kept.  A longer index is kept when its tail
    is kept and the innermost pair (a, b) is strictly increasing under the
    (weight, index) order, which drops [X, X] and one of each reversed pair.
    """
    if len(entries) == 1:
        return True
    a, b = entries[-2], entries[-1]
    return (index_weight(a), a) < (index_weight(b), b)


def enumerate_brackets(sys: HormanderSystem):
    """All nested brackets X_[I] with weight(I) <= r.

    Returns a list of (MultiIndex, VectorFieldSpec), deduplicated by
    multiindex, in (weight, lexicographic) order.
    """
    fields_by_entries = {}
    for i in sys.field_indices:
        fields_by_entries[(i,)] = sys.field(i)
    frontier = list(fields_by_entries)
    while frontier:
        new_frontier = []
        for tail in frontier:
            tail_w = sum(index_weight(i) for i in tail)
            for i in sys.field_indices:
                entries = (i,) + tail
                if tail_w + index_weight(i) > sys.step:
                    continue
                if entries in fields_by_entries or not _keep(entries):
                    continue
                fields_by_entries[entries] = commutator(
                    sys.field(i), fields_by_entries[tail])
                new_frontier.append(entries)
        frontier = new_frontier
    out = [(multiindex(e), X) for e, X in fields_by_entries.items()]
    out.sort(key=lambda pair: pair[0])
    return out


def bracket_field(sys: HormanderSystem, entries: Sequence[int]) -> VectorFieldSpec:
    """The nested bracket X_[I] for an explicit index sequence."""
    entries = tuple(int(i) for i in entries)
    X = sys.field(entries[-1])
    for i in reversed(entries[:-1]):
        X = commutator(sys.field(i), X)
    return X


def bracket_matrix(brackets, x) -> np.ndarray:
    """Rows (X_[I])_x for a bracket list, shape (..., n_brackets, p)."""
    x = np.asarray(x, dtype=float)
    rows = [X.coeff(x) for _, X in brackets]
    return np.stack(rows, axis=-2)


def hormander_rank(sys: HormanderSystem, x, brackets=None, rtol: float = 1e-9):
    """Rank of the enumerated brackets at x and a determinant-greedy basis.

    The basis is grown by repeatedly taking the row whose component
    orthogonal to the span of the chosen rows is largest, which greedily
    maximizes the spanned volume (hence |det| when rank = p).
    """
    if brackets is None:
        brackets = enumerate_brackets(sys)
    rows = np.stack([X.coeff(np.asarray(x, dtype=float)) for _, X in brackets])
    scale = np.max(np.linalg.norm(rows, axis=1))
    tol = rtol * max(scale, 1.0)
    chosen = []
    residual = rows.copy()
    for _ in range(sys.dim):
        norms = np.linalg.norm(residual, axis=1)
        k = int(np.argmax(norms))
        if norms[k] <= tol:
            break
        chosen.append(k)
        q = residual[k] / norms[k]
        residual = residual - np.outer(residual @ q, q)
    basis = [brackets[k][0] for k in chosen]
    return len(chosen), basis


def hormander_rank_batch(sys: HormanderSystem, pts, brackets=None,
                         rtol: float = 1e-9) -> np.ndarray:
    """Vectorized rank over many points (no basis selection)."""
    if brackets is None:
        brackets = enumerate_brackets(sys)
    M = bracket_matrix(brackets, np.asarray(pts, dtype=float))
    s = np.linalg.svd(M, compute_uv=False)
    tol = rtol * np.maximum(s[..., 0], 1.0)
    return np.sum(s > tol[..., None], axis=-1)


def lambda_det(sys: HormanderSystem, family, x):
    """det of the p rows (X_[I_j])_x and the total weight |I| = sum |I_j|.

    ``family`` is a sequence of exactly p multiindices (or raw entry
    tuples) with individual weights <= r.
    """
    mis = [mi if isinstance(mi, MultiIndex) else multiindex(mi)
           for mi in family]
    if len(mis) != sys.dim:
        raise ValueError(f"family must have exactly {sys.dim} multiindices")
    for mi in mis:
        if mi.weight > sys.step:
            raise ValueError(f"multiindex {mi} has weight > r")
    x = np.asarray(x, dtype=float)
    rows = np.stack([bracket_field(sys, mi.entries).coeff(x) for mi in mis],
                    axis=-2)
    det = np.linalg.det(rows)
    total = sum(mi.weight for mi in mis)
    return det, total
