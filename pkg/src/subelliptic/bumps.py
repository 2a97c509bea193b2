"""Smooth compactly supported test bumps with analytic derivatives.

The profile is a polynomial plateau: identically 1 inside an inner radius,
a C^3 polynomial smoothstep down to 0 at the outer radius, identically 0
outside.  Having L*psi vanish near any kernel pole inside the plateau is
what makes the weak-identity quadratures well behaved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x ** 4 * (35.0 - 84.0 * x + 70.0 * x ** 2 - 20.0 * x ** 3)


def _smoothstep_d1(x):
    x = np.clip(x, 0.0, 1.0)
    return 140.0 * x ** 3 * (1.0 - x) ** 3


def _smoothstep_d2(x):
    x = np.clip(x, 0.0, 1.0)
    return 420.0 * x ** 2 * (1.0 - x) ** 2 * (1.0 - 2.0 * x)


@dataclass(frozen=True)
class TestBump:
    """psi(u) = eta(|u - center|): 1 on the plateau, 0 outside ``radius``.

    value, grad and hess are analytic and vectorized over (..., p) inputs.
    """

    __test__ = False  # not a test class despite the name

    center: tuple
    radius: float
    plateau_fraction: float = 0.35

    @property
    def inner_radius(self) -> float:
        return self.plateau_fraction * self.radius

    def _sx(self, u):
        c = np.asarray(self.center, dtype=float)
        d = np.asarray(u, dtype=float) - c
        s = np.linalg.norm(d, axis=-1)
        a, b = self.inner_radius, self.radius
        return d, s, (b - s) / (b - a)

    def value(self, u):
        _, _, x = self._sx(u)
        return _smoothstep(x)

    def grad(self, u):
        d, s, x = self._sx(u)
        a, b = self.inner_radius, self.radius
        safe = np.maximum(s, 1e-12)
        d1 = -_smoothstep_d1(x) / (b - a)
        return (d1 / safe)[..., None] * d

    def hess(self, u):
        d, s, x = self._sx(u)
        a, b = self.inner_radius, self.radius
        safe = np.maximum(s, 1e-12)
        d1 = -_smoothstep_d1(x) / (b - a)
        d2 = _smoothstep_d2(x) / (b - a) ** 2
        eye = np.eye(d.shape[-1])
        uu = np.einsum("...i,...j->...ij", d, d) / (safe ** 2)[..., None, None]
        return d2[..., None, None] * uu + (d1 / safe)[..., None, None] * (eye - uu)

    def __call__(self, u):
        return self.value(u)
