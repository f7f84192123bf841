"""Compactly supported test vector fields and scalar weight functions."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import _smooth_bump

Array = np.ndarray


@dataclass
class TestVectorField:
    """C^1 vector field X with Jacobian ``jac[..., k, a] = d_a X^k``.

    ``radius`` bounds the support around ``center`` (``inf`` when the field
    is not compactly supported).  ``tangential`` asserts X . e_1 = 0 on the
    wall; it is checked on wall samples at construction.
    """

    __test__ = False  # not a pytest class

    dim: int
    value_fn: Callable[[Array], Array]
    jacobian_fn: Callable[[Array], Array]
    center: Array
    radius: float
    tangential: bool = False
    name: str = "field"

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        if self.tangential:
            self._verify_tangential()

    def _verify_tangential(self) -> None:
        rng = np.random.default_rng(12345)
        span = min(self.radius, 2.0) if np.isfinite(self.radius) else 1.0
        pts = self.center + rng.uniform(-span, span, size=(512, self.dim))
        pts[:, 0] = 0.0
        if np.max(np.abs(self.value(pts)[:, 0])) > 1e-12:
            raise ValueError(f"field {self.name!r} is flagged tangential but X.e1 != 0 on the wall")

    def value(self, x) -> Array:
        return self.value_fn(np.asarray(x, dtype=float))

    def jacobian(self, x) -> Array:
        return self.jacobian_fn(np.asarray(x, dtype=float))

    # constructors -------------------------------------------------------
    @classmethod
    def bump(cls, center, radius: float, vector, name: str = "bump") -> "TestVectorField":
        """X(x) = psi(|x - c| / R) v with the C^2 profile psi(t) = (1 - t^2)^3."""
        c = np.asarray(center, dtype=float)
        v = np.asarray(vector, dtype=float)
        dim = c.shape[0]

        def val(x):
            t = np.linalg.norm(x - c, axis=-1) / radius
            p, _ = _smooth_bump(t)
            return p[..., None] * v

        def jac(x):
            diff = x - c
            rad = np.linalg.norm(diff, axis=-1)
            _, dp = _smooth_bump(rad / radius)
            safe = np.where(rad > 0, rad, 1.0)
            grad = (dp / (radius * safe))[..., None] * diff
            return v[:, None] * grad[..., None, :]

        tangential = abs(v[0]) == 0.0
        return cls(dim, val, jac, c, radius, tangential, name)

    @classmethod
    def radial(cls, center, radius: float, name: str = "radial") -> "TestVectorField":
        """X(x) = psi(|x - c| / R)(x - c); tangential when the centre lies on the wall."""
        c = np.asarray(center, dtype=float)
        dim = c.shape[0]
        eye = np.eye(dim)

        def val(x):
            diff = x - c
            p, _ = _smooth_bump(np.linalg.norm(diff, axis=-1) / radius)
            return p[..., None] * diff

        def jac(x):
            diff = x - c
            rad = np.linalg.norm(diff, axis=-1)
            p, dp = _smooth_bump(rad / radius)
            safe = np.where(rad > 0, rad, 1.0)
            grad = (dp / (radius * safe))[..., None] * diff
            return p[..., None, None] * eye + diff[..., :, None] * grad[..., None, :]

        return cls(dim, val, jac, c, radius, c[0] == 0.0, name)

    @classmethod
    def position(cls, dim: int) -> "TestVectorField":
        """The identity field X(x) = x (not compactly supported)."""

        def val(x):
            return np.array(x, dtype=float)

        def jac(x):
            return np.broadcast_to(np.eye(dim), x.shape[:-1] + (dim, dim)).copy()

        return cls(dim, val, jac, np.zeros(dim), np.inf, False, "position")

    @classmethod
    def constant(cls, vector) -> "TestVectorField":
        v = np.asarray(vector, dtype=float)
        dim = v.shape[0]

        def val(x):
            return np.broadcast_to(v, x.shape).copy()

        def jac(x):
            return np.zeros(x.shape[:-1] + (dim, dim))

        return cls(dim, val, jac, np.zeros(dim), np.inf, v[0] == 0.0, "constant")

    def scaled_by(self, f: Callable[[Array], Array], grad_f: Callable[[Array], Array], name: str | None = None) -> "TestVectorField":
        """The product field f X, with Jacobian f DX + X (grad f)^T."""
        base = self

        def val(x):
            return f(x)[..., None] * base.value(x)

        def jac(x):
            return f(x)[..., None, None] * base.jacobian(x) + base.value(x)[..., :, None] * grad_f(x)[..., None, :]

        return TestVectorField(self.dim, val, jac, self.center, self.radius, self.tangential, name or f"scaled({self.name})")

    def __add__(self, other: "TestVectorField") -> "TestVectorField":
        a, b = self, other

        def val(x):
            return a.value(x) + b.value(x)

        def jac(x):
            return a.jacobian(x) + b.jacobian(x)

        rad = max(np.linalg.norm(a.center - b.center) + max(a.radius, b.radius), a.radius, b.radius)
        return TestVectorField(self.dim, val, jac, a.center, rad, a.tangential and b.tangential, f"{a.name}+{b.name}")

    def __mul__(self, scalar: float) -> "TestVectorField":
        a = self
        s = float(scalar)
        return TestVectorField(self.dim, lambda x: s * a.value(x), lambda x: s * a.jacobian(x),
                               a.center, a.radius, a.tangential, f"{s:g}*{a.name}")

    __rmul__ = __mul__


@dataclass
class ScalarField:
    """Scalar weight function with gradient, vectorized over points ``(..., d)``."""

    value_fn: Callable[[Array], Array]
    gradient_fn: Callable[[Array], Array]
    name: str = "scalar"

    def __call__(self, x) -> Array:
        return self.value_fn(np.asarray(x, dtype=float))

    def gradient(self, x) -> Array:
        return self.gradient_fn(np.asarray(x, dtype=float))

    @classmethod
    def constant(cls, c: float) -> "ScalarField":
        return cls(lambda x: np.full(x.shape[:-1], float(c)), lambda x: np.zeros_like(x), f"const:{c:g}")

    @classmethod
    def window(cls, center, radius: float) -> "ScalarField":
        """Smooth window equal to 1 on B_{radius/2}(center) and 0 outside B_radius(center)."""
        c = np.asarray(center, dtype=float)
        half = 0.5 * radius

        def profile(s):
            # C^1 step from 1 at s <= 0 to 0 at s >= 1
            s = np.clip(s, 0.0, 1.0)
            return 1.0 - s * s * (3.0 - 2.0 * s), -6.0 * s * (1.0 - s)

        def val(x):
            rad = np.linalg.norm(x - c, axis=-1)
            p, _ = profile((rad - half) / half)
            return p

        def grad(x):
            diff = x - c
            rad = np.linalg.norm(diff, axis=-1)
            _, dp = profile((rad - half) / half)
            safe = np.where(rad > 0, rad, 1.0)
            return (dp / (half * safe))[..., None] * diff

        return cls(val, grad, f"window({radius:g})")

    @classmethod
    def wall_cutoff(cls, scale: float) -> "ScalarField":
        """f(x_1 / scale) with f = 0 for |t| <= 1/16, f = 1 for |t| >= 1/8, smooth in between.

        The transition has slope at most 1.5 * 16 = 24 in t, well inside the
        bound |f'| <= 100 needed by the interior tilt estimate.
        """

        def profile(t):
            s = np.clip((np.abs(t) - 1.0 / 16.0) * 16.0, 0.0, 1.0)
            return s * s * (3.0 - 2.0 * s), np.sign(t) * 16.0 * 6.0 * s * (1.0 - s)

        def val(x):
            p, _ = profile(x[..., 0] / scale)
            return p

        def grad(x):
            _, dp = profile(x[..., 0] / scale)
            out = np.zeros_like(x)
            out[..., 0] = dp / scale
            return out

        return cls(val, grad, f"wall_cutoff({scale:g})")
