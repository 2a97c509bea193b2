"""Built-in operator families.

Three nonsmooth families (Heisenberg-type, Kolmogorov-type, Grushin-type)
with minimal Hoelder regularity in their coefficients, plus the two smooth
group models that anchor the parametrix engine.  All coefficient maps and
Jacobians are vectorized and analytic (formal derivatives of |x|^alpha are
used away from 0; see fields module for the hyperplane nudge).
"""

from __future__ import annotations

import numpy as np

from .fields import HormanderSystem, VectorFieldSpec

_DEFAULT_BOX3 = np.array([[-1.0, 1.0]] * 3)
_DEFAULT_BOX2 = np.array([[-1.0, 1.0]] * 2)


def _sign(x):
    # sign with sign(0) = 1, matching the nudge convention for |x|' at 0
    return np.where(x >= 0.0, 1.0, -1.0)


def heisenberg_nonsmooth(box=None) -> HormanderSystem:
    """X1 = d/dx + y(1+|y|) d/dt,  X2 = d/dy - x(1+|x|) d/dt on R^3.

    Step 2, alpha = 1 (coefficients are C^{1,1}); drift-free, and free up
    to step 2, so the parametrix engine applies directly.
    """

    def c1(p):
        y = p[..., 1]
        out = np.zeros_like(p)
        out[..., 0] = 1.0
        out[..., 2] = y * (1.0 + np.abs(y))
        return out

    def j1(p):
        y = p[..., 1]
        J = np.zeros(p.shape + (3,))
        J[..., 2, 1] = 1.0 + 2.0 * np.abs(y)
        return J

    def c2(p):
        x = p[..., 0]
        out = np.zeros_like(p)
        out[..., 1] = 1.0
        out[..., 2] = -x * (1.0 + np.abs(x))
        return out

    def j2(p):
        x = p[..., 0]
        J = np.zeros(p.shape + (3,))
        J[..., 2, 0] = -(1.0 + 2.0 * np.abs(x))
        return J

    X1 = VectorFieldSpec(3, c1, j1, weight=1, smoothness_tag="C^{1,1}",
                         name="X1")
    X2 = VectorFieldSpec(3, c2, j2, weight=1, smoothness_tag="C^{1,1}",
                         name="X2")
    return HormanderSystem(generators=(X1, X2), step=2, alpha=1.0,
                           domain_box=_DEFAULT_BOX3 if box is None else box,
                           name="heisenberg_nonsmooth")


def kolmogorov_nonsmooth(alpha: float = 0.5, box=None) -> HormanderSystem:
    """X1 = d/dx,  X0 = x(1+|x|^alpha) d/dy + d/dt on R^3 (drift X0).

    Weighted step 3: [X1, X0] = (1+(alpha+1)|x|^alpha) d/dy completes the
    frame.  Free up to weighted step 3 with one generator and a drift.
    """
    if not (0.0 < alpha <= 1.0):
        raise ValueError("alpha must lie in (0, 1]")

    def c1(p):
        out = np.zeros_like(p)
        out[..., 0] = 1.0
        return out

    def j1(p):
        return np.zeros(p.shape + (3,))

    def c0(p):
        x = p[..., 0]
        out = np.zeros_like(p)
        out[..., 1] = x * (1.0 + np.abs(x) ** alpha)
        out[..., 2] = 1.0
        return out

    def j0(p):
        x = p[..., 0]
        J = np.zeros(p.shape + (3,))
        J[..., 1, 0] = 1.0 + (alpha + 1.0) * np.abs(x) ** alpha
        return J

    X1 = VectorFieldSpec(3, c1, j1, weight=1, smoothness_tag="analytic",
                         name="X1")
    X0 = VectorFieldSpec(3, c0, j0, weight=2,
                         smoothness_tag=f"C^{{2,{alpha}}}", name="X0")
    return HormanderSystem(generators=(X1,), drift=X0, step=3, alpha=alpha,
                           domain_box=_DEFAULT_BOX3 if box is None else box,
                           name="kolmogorov_nonsmooth")


def grushin_nonsmooth(r: int = 3, alpha: float = 0.5,
                      box=None) -> HormanderSystem:
    """X1 = d/dx,  X2 = x^{r-1}(1+|x|^alpha) d/dy on R^2, step r.

    Not free (two generators in dimension 2), so it participates in rank
    and metric tests only, not in the parametrix pipeline.
    """
    if r < 2:
        raise ValueError("r must be >= 2")
    if r == 2 and alpha != 1.0:
        raise ValueError("step 2 requires alpha = 1")

    def c1(p):
        out = np.zeros_like(p)
        out[..., 0] = 1.0
        return out

    def j1(p):
        return np.zeros(p.shape + (2,))

    def c2(p):
        x = p[..., 0]
        out = np.zeros_like(p)
        out[..., 1] = x ** (r - 1) * (1.0 + np.abs(x) ** alpha)
        return out

    def j2(p):
        x = p[..., 0]
        ax = np.abs(x)
        J = np.zeros(p.shape + (2,))
        J[..., 1, 0] = ((r - 1) * x ** (r - 2) * (1.0 + ax ** alpha)
                        + alpha * _sign(x) ** r * ax ** (r - 2 + alpha))
        return J

    X1 = VectorFieldSpec(2, c1, j1, weight=1, smoothness_tag="analytic",
                         name="X1")
    X2 = VectorFieldSpec(2, c2, j2, weight=1,
                         smoothness_tag=f"C^{{{r - 1},{alpha}}}", name="X2")
    return HormanderSystem(generators=(X1, X2), step=r, alpha=alpha,
                           domain_box=_DEFAULT_BOX2 if box is None else box,
                           name="grushin_nonsmooth")


def heisenberg_model(box=None) -> HormanderSystem:
    """Left-invariant step-2 model frame Y1 = d/dx - (y/2) d/dt,
    Y2 = d/dy + (x/2) d/dt, with [Y1, Y2] = d/dt."""

    def c1(p):
        out = np.zeros_like(p)
        out[..., 0] = 1.0
        out[..., 2] = -0.5 * p[..., 1]
        return out

    def j1(p):
        J = np.zeros(p.shape + (3,))
        J[..., 2, 1] = -0.5
        return J

    def c2(p):
        out = np.zeros_like(p)
        out[..., 1] = 1.0
        out[..., 2] = 0.5 * p[..., 0]
        return out

    def j2(p):
        J = np.zeros(p.shape + (3,))
        J[..., 2, 0] = 0.5
        return J

    Y1 = VectorFieldSpec(3, c1, j1, weight=1, name="Y1")
    Y2 = VectorFieldSpec(3, c2, j2, weight=1, name="Y2")
    return HormanderSystem(generators=(Y1, Y2), step=2, alpha=1.0,
                           domain_box=_DEFAULT_BOX3 if box is None else box,
                           name="heisenberg_model")


def kolmogorov_model(box=None) -> HormanderSystem:
    """Left-invariant drift model Y1 = d/dx - (t/2) d/dy,
    Y0 = (x/2) d/dy + d/dt, with [Y1, Y0] = d/dy (weighted step 3)."""

    def c1(p):
        out = np.zeros_like(p)
        out[..., 0] = 1.0
        out[..., 1] = -0.5 * p[..., 2]
        return out

    def j1(p):
        J = np.zeros(p.shape + (3,))
        J[..., 1, 2] = -0.5
        return J

    def c0(p):
        out = np.zeros_like(p)
        out[..., 1] = 0.5 * p[..., 0]
        out[..., 2] = 1.0
        return out

    def j0(p):
        J = np.zeros(p.shape + (3,))
        J[..., 1, 0] = 0.5
        return J

    Y1 = VectorFieldSpec(3, c1, j1, weight=1, name="Y1")
    Y0 = VectorFieldSpec(3, c0, j0, weight=2, name="Y0")
    return HormanderSystem(generators=(Y1,), drift=Y0, step=3, alpha=1.0,
                           domain_box=_DEFAULT_BOX3 if box is None else box,
                           name="kolmogorov_model")


FAMILY_BUILDERS = {
    "heisenberg_nonsmooth": heisenberg_nonsmooth,
    "kolmogorov_nonsmooth": kolmogorov_nonsmooth,
    "grushin_nonsmooth": grushin_nonsmooth,
    "heisenberg_model": heisenberg_model,
    "kolmogorov_model": kolmogorov_model,
}


def make_system(family: str, **params) -> HormanderSystem:
    """Build a named family; unknown names raise KeyError with the options."""
    try:
        builder = FAMILY_BUILDERS[family]
    except KeyError:
        raise KeyError(
            f"unknown family {family!r}; available: "
            + ", ".join(sorted(FAMILY_BUILDERS))) from None
    return builder(**params)
