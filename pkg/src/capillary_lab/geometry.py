"""Half-space geometry: slanted planes, squashed norms, oscillation, metric fields.

Everything lives in the closed half-space ``{x_1 <= 0}`` of R^{n+1} with
n in {1, 2}; the container wall is the hyperplane ``{x_1 = 0}``.  Arrays of
points are stored with the coordinate index last, so a batch of points has
shape ``(..., n + 1)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Array = np.ndarray

FD_STEP = 1e-4  # centered finite-difference step for metric derivatives


def _check_angle(theta: float) -> float:
    theta = float(theta)
    if not 0.0 < theta < np.pi:
        raise ValueError(f"angle must lie in (0, pi), got {theta!r}")
    return theta


def squashed_norm(xp, theta: float):
    """Norm on the slice coordinates with the first axis stretched by 1/sin(theta).

    ``xp`` holds slice coordinates ``(x_1, ..., x_n)`` in its last axis.
    """
    theta = _check_angle(theta)
    xp = np.asarray(xp, dtype=float)
    scaled = xp.copy()
    scaled[..., 0] = scaled[..., 0] / np.sin(theta)
    return np.sqrt(np.sum(scaled * scaled, axis=-1))


def boundary_rotation(q, dim: int) -> Array:
    """Embed an orthogonal map of the wall coordinates into O(dim) fixing e_1."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    if q.shape != (dim - 1, dim - 1):
        raise ValueError(f"wall rotation must be {(dim - 1, dim - 1)}, got {q.shape}")
    if not np.allclose(q @ q.T, np.eye(dim - 1), atol=1e-10):
        raise ValueError("wall rotation is not orthogonal")
    out = np.eye(dim)
    out[1:, 1:] = q
    return out


def wall_rotation_2d(phi: float) -> Array:
    """Rotation by ``phi`` inside the wall plane of R^3 (coordinates x_2, x_3)."""
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Plane:
    """Hyperplane through the origin meeting the wall at angle ``theta``.

    With the identity rotation the unit normal is ``cos(theta) e_1 +
    sin(theta) e_{n+1}`` and the lower half ``{x_1 <= 0}`` of the plane is the
    wetting sheet partner of the model cone.
    """

    theta: float
    dim: int = 2
    rotation: Array | None = None

    def __post_init__(self):
        _check_angle(self.theta)
        if self.dim not in (2, 3):
            raise ValueError("ambient dimension must be 2 or 3")

    @property
    def ambient_rotation(self) -> Array:
        if self.rotation is None:
            return np.eye(self.dim)
        return boundary_rotation(self.rotation, self.dim)

    @property
    def normal(self) -> Array:
        nu = np.zeros(self.dim)
        nu[0] = np.cos(self.theta)
        nu[-1] = np.sin(self.theta)
        return self.ambient_rotation @ nu

    @property
    def projector(self) -> Array:
        nu = self.normal
        return np.eye(self.dim) - np.outer(nu, nu)

    def tangent_basis(self) -> Array:
        """Orthonormal rows spanning the plane; the first row points down-slope into {x_1 < 0}."""
        t = np.zeros((self.dim - 1, self.dim))
        t[0, 0] = -np.sin(self.theta)
        t[0, -1] = np.cos(self.theta)
        for k in range(1, self.dim - 1):
            t[k, k] = 1.0
        return t @ self.ambient_rotation.T

    def height(self, points) -> Array:
        """Signed normal height of points above the plane."""
        return np.asarray(points, dtype=float) @ self.normal


def oscillation(plane_or_normal, points, center, r: float) -> float:
    """Half the spread of normal heights of the points inside the closed ball B_r(center)."""
    if r <= 0:
        raise ValueError("radius must be positive")
    nu = plane_or_normal.normal if isinstance(plane_or_normal, Plane) else np.asarray(plane_or_normal, float)
    pts = np.asarray(points, dtype=float).reshape(-1, nu.shape[0])
    if pts.shape[0] == 0:
        return 0.0
    center = np.asarray(center, dtype=float)
    inside = np.sum((pts - center) ** 2, axis=1) <= r * r
    if np.count_nonzero(inside) <= 1:
        return 0.0
    heights = pts[inside] @ nu
    return 0.5 * float(heights.max() - heights.min())


def operator_norm_sym(m: Array) -> Array:
    """Spectral norm of a batch of symmetric matrices."""
    ev = np.linalg.eigvalsh(m)
    return np.max(np.abs(ev), axis=-1)


def _smooth_bump(t):
    """C^2 profile (1 - t^2)^3 on [0, 1), zero beyond, with its derivative."""
    t = np.asarray(t, dtype=float)
    inside = t < 1.0
    base = np.where(inside, 1.0 - t * t, 0.0)
    val = base**3
    der = np.where(inside, -6.0 * t * base**2, 0.0)
    return val, der


@dataclass
class MetricField:
    """Symmetric positive definite metric on the domain box with its first derivatives.

    ``evaluator(x)`` maps points of shape ``(..., d)`` to matrices ``(..., d, d)``;
    ``derivative(x)`` returns ``(..., d, d, d)`` with the last index the
    differentiation direction.  Without an analytic derivative a centered
    difference with step ``FD_STEP`` is used.
    """

    dim: int
    evaluator: Callable[[Array], Array]
    derivative_evaluator: Callable[[Array], Array] | None = None
    name: str = "custom"
    is_euclidean: bool = False
    _bounds: tuple[float, float] | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError("ambient dimension must be 2 or 3")

    # construction -------------------------------------------------------
    @classmethod
    def euclidean(cls, dim: int) -> "MetricField":
        def ev(x):
            x = np.asarray(x, dtype=float)
            return np.broadcast_to(np.eye(dim), x.shape[:-1] + (dim, dim)).copy()

        def dev(x):
            x = np.asarray(x, dtype=float)
            return np.zeros(x.shape[:-1] + (dim, dim, dim))

        return cls(dim, ev, dev, name="euclidean", is_euclidean=True, _bounds=(0.0, 0.0))

    @classmethod
    def constant(cls, matrix) -> "MetricField":
        m = np.asarray(matrix, dtype=float)
        dim = m.shape[0]
        _check_spd(m)

        def ev(x):
            x = np.asarray(x, dtype=float)
            return np.broadcast_to(m, x.shape[:-1] + (dim, dim)).copy()

        def dev(x):
            x = np.asarray(x, dtype=float)
            return np.zeros(x.shape[:-1] + (dim, dim, dim))

        bound = float(operator_norm_sym(m - np.eye(dim)))
        return cls(dim, ev, dev, name="constant", _bounds=(bound, 0.0))

    @classmethod
    def conformal_bump(cls, dim: int, amplitude: float, center=None, width: float = 0.75) -> "MetricField":
        """g = (1 + a psi(|x - c| / w)) I with psi the C^2 bump (1 - t^2)^3."""
        c = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
        if amplitude <= -1.0:
            raise ValueError("conformal amplitude must exceed -1")
        eye = np.eye(dim)

        def ev(x):
            x = np.asarray(x, dtype=float)
            t = np.linalg.norm(x - c, axis=-1) / width
            val, _ = _smooth_bump(t)
            return (1.0 + amplitude * val)[..., None, None] * eye

        def dev(x):
            x = np.asarray(x, dtype=float)
            diff = x - c
            rad = np.linalg.norm(diff, axis=-1)
            _, der = _smooth_bump(rad / width)
            safe = np.where(rad > 0, rad, 1.0)
            grad = (amplitude * der / (width * safe))[..., None] * diff
            return eye[..., None] * grad[..., None, None, :]

        # |psi'| <= 1.7173 (attained at t = 1/sqrt(5)); Frobenius norm of Dg adds sqrt(dim)
        bounds = (abs(amplitude), abs(amplitude) * 1.7174 * np.sqrt(dim) / width)
        return cls(dim, ev, dev, name=f"conformal:{amplitude:g}", _bounds=bounds)

    @classmethod
    def linear_shear(cls, dim: int, amplitude: float) -> "MetricField":
        """g = I + a x_2 (e_1 e_2^T + e_2 e_1^T) + a x_1 e_d e_d^T, positive definite for |a| < 1/2."""
        if abs(amplitude) >= 0.5:
            raise ValueError("shear amplitude must be below 1/2 to stay positive definite")
        d = dim
        s = np.zeros((d, d, d))
        s[0, 1, 1] = s[1, 0, 1] = amplitude
        s[d - 1, d - 1, 0] += amplitude

        def ev(x):
            x = np.asarray(x, dtype=float)
            return np.eye(d) + np.einsum("ijk,...k->...ij", s, x)

        def dev(x):
            x = np.asarray(x, dtype=float)
            return np.broadcast_to(s, x.shape[:-1] + (d, d, d)).copy()

        # on the box |x_k| <= 1 each perturbation entry is at most |a|
        bounds = (2.0 * abs(amplitude), float(np.sqrt(np.sum(s * s))))
        return cls(dim, ev, dev, name=f"shear:{amplitude:g}", _bounds=bounds)

    @classmethod
    def from_callable(cls, dim: int, func: Callable[[Array], Array], derivative=None, name: str = "custom") -> "MetricField":
        return cls(dim, func, derivative, name=name)

    # evaluation ---------------------------------------------------------
    def __call__(self, x) -> Array:
        return self.evaluator(np.asarray(x, dtype=float))

    def derivative(self, x) -> Array:
        x = np.asarray(x, dtype=float)
        if self.derivative_evaluator is not None:
            return self.derivative_evaluator(x)
        out = np.empty(x.shape[:-1] + (self.dim, self.dim, self.dim))
        for k in range(self.dim):
            step = np.zeros(self.dim)
            step[k] = FD_STEP
            out[..., k] = (self.evaluator(x + step) - self.evaluator(x - step)) / (2 * FD_STEP)
        return out

    def c1_bounds(self) -> tuple[float, float]:
        """Sup over the domain box of the operator norm of g - I and the Frobenius norm of Dg."""
        if self._bounds is None:
            axes = [np.linspace(-1.0, 0.0, 9)] + [np.linspace(-1.0, 1.0, 9)] * (self.dim - 1)
            pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)
            g = self(pts)
            if np.any(np.linalg.eigvalsh(g)[:, 0] <= 0):
                raise ValueError("metric is not positive definite on the domain box")
            c0 = float(operator_norm_sym(g - np.eye(self.dim)).max())
            c1 = float(np.sqrt(np.sum(self.derivative(pts) ** 2, axis=(1, 2, 3))).max())
            # sampled sup, padded to cover values between samples
            self._bounds = (1.1 * c0, 1.1 * c1)
        return self._bounds


def _check_spd(m: Array) -> None:
    if not np.allclose(m, np.swapaxes(m, -1, -2), atol=1e-12):
        raise ValueError("metric must be symmetric")
    if np.any(np.linalg.eigvalsh(m)[..., 0] <= 0):
        raise ValueError("metric must be positive definite")


@dataclass
class AngleField:
    """Contact-angle field beta(x) with values in (0, pi)."""

    evaluator: Callable[[Array], Array]
    gradient_evaluator: Callable[[Array], Array] | None = None
    derivative_bound: float = 0.0
    constant_value: float | None = None
    name: str = "custom"

    @classmethod
    def constant(cls, theta: float) -> "AngleField":
        theta = _check_angle(theta)

        def ev(x):
            x = np.asarray(x, dtype=float)
            return np.full(x.shape[:-1], theta)

        def grad(x):
            return np.zeros_like(np.asarray(x, dtype=float))

        return cls(ev, grad, 0.0, theta, name=f"const:{theta!r}")

    @classmethod
    def linear(cls, theta: float, slope) -> "AngleField":
        """beta(x) = theta + slope . x; the caller keeps the values inside (0, pi) on the box."""
        theta = _check_angle(theta)
        slope = np.asarray(slope, dtype=float)
        if theta - np.sum(np.abs(slope)) <= 0 or theta + np.sum(np.abs(slope)) >= np.pi:
            raise ValueError("linear angle field leaves (0, pi) on the domain box")

        def ev(x):
            return theta + np.asarray(x, dtype=float) @ slope

        def grad(x):
            x = np.asarray(x, dtype=float)
            return np.broadcast_to(slope, x.shape).copy()

        return cls(ev, grad, float(np.linalg.norm(slope)), None, name="linear")

    @classmethod
    def oscillating(cls, theta: float, amplitude: float, frequency: float, axis: int = -1) -> "AngleField":
        """beta(x) = theta + a sin(k x_axis); a steep field used as a negative control."""
        theta = _check_angle(theta)
        if theta - abs(amplitude) <= 0 or theta + abs(amplitude) >= np.pi:
            raise ValueError("oscillating angle field leaves (0, pi)")

        def ev(x):
            x = np.asarray(x, dtype=float)
            return theta + amplitude * np.sin(frequency * x[..., axis])

        def grad(x):
            x = np.asarray(x, dtype=float)
            out = np.zeros_like(x)
            out[..., axis] = amplitude * frequency * np.cos(frequency * x[..., axis])
            return out

        return cls(ev, grad, abs(amplitude * frequency), None, name="oscillating")

    def __call__(self, x) -> Array:
        return self.evaluator(np.asarray(x, dtype=float))

    def gradient(self, x) -> Array:
        x = np.asarray(x, dtype=float)
        if self.gradient_evaluator is not None:
            return self.gradient_evaluator(x)
        out = np.empty_like(x)
        for k in range(x.shape[-1]):
            step = np.zeros(x.shape[-1])
            step[k] = FD_STEP
            out[..., k] = (self.evaluator(x + step) - self.evaluator(x - step)) / (2 * FD_STEP)
        return out

    def complement(self) -> "AngleField":
        """The field pi - beta, used when the wet and dry regions are exchanged."""
        base = self
        const = None if base.constant_value is None else np.pi - base.constant_value

        def ev(x):
            return np.pi - base(x)

        def grad(x):
            return -base.gradient(x)

        return AngleField(ev, grad, base.derivative_bound, const, name=f"complement({base.name})")


def metric_unit_normal(g: MetricField, x) -> Array:
    """g-unit normal of the wall {x_1 = 0} pointing into {x_1 > 0}.

    The g-orthogonal complement of the wall is spanned by g^{-1} e_1, whose
    g-length is sqrt((g^{-1})_{11}).
    """
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x[..., 0]) > 1e-12):
        raise ValueError("metric_unit_normal is defined on the wall x_1 = 0")
    gm = g(x)
    e1 = np.zeros(g.dim)
    e1[0] = 1.0
    try:
        w = np.linalg.solve(gm, np.broadcast_to(e1, gm.shape[:-1])[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError("degenerate metric at the wall") from exc
    g11 = w[..., 0]
    if np.any(g11 <= 0) or not np.all(np.isfinite(g11)):
        raise ArithmeticError("degenerate metric at the wall")
    return w / np.sqrt(g11)[..., None]


def christoffel_lowered(dg: Array) -> Array:
    """Gamma_{l,ab} = (d_a g_lb + d_b g_la - d_l g_ab) / 2 from ``dg[..., i, j, k] = d_k g_ij``."""
    return 0.5 * (
        np.einsum("...lba->...lab", dg)
        + dg
        - np.einsum("...abl->...lab", dg)
    )


def tangential_divergence_arrays(gm: Array, dg: Array, frame: Array, X: Array, DX: Array) -> Array:
    """Tangential g-divergence from precomputed arrays.

    ``frame`` has shape ``(..., n, d)`` (rows spanning T, any basis), ``X``
    shape ``(..., d)`` and ``DX[..., k, a] = d_a X^k``.  The sum
    ``sum_ij A_ij g(tau_j, nabla_{tau_i} X)`` with ``A`` the inverse Gram
    matrix of the frame does not depend on the chosen basis of T.
    """
    gram = np.einsum("...ia,...ab,...jb->...ij", frame, gm, frame)
    inv = np.linalg.inv(gram)
    term = np.einsum("...ja,...ab,...bc,...ic->...ij", frame, gm, DX, frame)
    if np.any(dg):
        gam = christoffel_lowered(dg)
        term = term + np.einsum("...jl,...lab,...ia,...b->...ij", frame, gam, frame, X)
    return np.einsum("...ij,...ij->...", inv, term)


def tangential_divergence(g: MetricField, field, x, frame) -> Array:
    """div_{T,g} X at ``x`` for the plane T spanned by the rows of ``frame``."""
    x = np.asarray(x, dtype=float)
    frame = np.asarray(frame, dtype=float)
    frame = np.broadcast_to(frame, x.shape[:-1] + frame.shape[-2:])
    return tangential_divergence_arrays(g(x), g.derivative(x), frame, field.value(x), field.jacobian(x))


def divergence_perturbation_constant(n: int, g_norm: float, gram_inv_norm: float) -> float:
    """Explicit constant in |div_g X - div X| <= c (|Dg||X| + |g - I||D_T X|).

    Writing the g-divergence as tr(A B) + Christoffel terms with A the inverse
    Gram matrix and B_ij = g(D X tau_i, tau_j), the difference splits into
    tr((A - I) B) + tr(B - C) + Christoffel; operator-norm bounds on each
    piece give the factors below.
    """
    return n * max(1.0 + gram_inv_norm * g_norm, 1.5 * gram_inv_norm)
