"""Stereographic chart of the unit sphere and quadrature through the plane.

The chart maps a direction theta (north pole excluded) to v = theta_i / (1 - theta_d)
and back through

    J(v) = (2 v / <v>^2, (|v|^2 - 1) / <v>^2),   <v> = sqrt(1 + |v|^2).

The surface measure pulls back to 2^{d-1} <v>^{-2(d-1)} dv, so a uniform grid on
the truncated square [-L, L]^{d-1} gives a sphere quadrature that misses only the
small cap around the north pole.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

POLE_TOL = 1e-12


class PoleError(ValueError):
    """Raised when a direction is too close to the north pole to be projected."""


@dataclass(frozen=True)
class Direction:
    """Unit vector on S^{d-1}."""

    components: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.components, dtype=float)
        nrm = np.linalg.norm(c)
        if abs(nrm - 1.0) > 1e-12:
            raise ValueError(f"direction is not unit length (|theta| = {nrm!r})")
        object.__setattr__(self, "components", c)

    @property
    def theta_d(self) -> float:
        return float(self.components[-1])

    @property
    def d(self) -> int:
        return self.components.shape[0]


@dataclass(frozen=True)
class PlanePoint:
    """Point v of the projected plane R^{d-1}, with its Japanese bracket."""

    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))

    @cached_property
    def bracket(self) -> float:
        return math.sqrt(1.0 + float(np.dot(self.v, self.v)))


def japanese_bracket(v, axis=-1):
    """Return <v> = sqrt(1 + |v|^2) along ``axis``."""
    v = np.asarray(v, dtype=float)
    return np.sqrt(1.0 + np.sum(v * v, axis=axis))


# --------------------------------------------------------------------------
# Pointwise chart maps (vectorized over leading axes, last axis = components)
# --------------------------------------------------------------------------

def project_points(theta):
    """Vectorized stereographic projection, ``theta[..., d] -> v[..., d-1]``."""
    theta = np.asarray(theta, dtype=float)
    td = theta[..., -1]
    if np.any(td >= 1.0 - POLE_TOL):
        raise PoleError("direction at (or numerically at) the north pole")
    return theta[..., :-1] / (1.0 - td)[..., None]


def lift_points(v):
    """Vectorized inverse chart J, ``v[..., d-1] -> theta[..., d]``."""
    v = np.asarray(v, dtype=float)
    r2 = np.sum(v * v, axis=-1)
    br2 = 1.0 + r2
    return np.concatenate([2.0 * v / br2[..., None], ((r2 - 1.0) / br2)[..., None]], axis=-1)


def project(theta: Direction) -> PlanePoint:
    """Project a direction to the plane.

    Raises
    ------
    PoleError
        If ``theta_d >= 1 - 1e-12``.
    """
    if not isinstance(theta, Direction):
        theta = Direction(np.asarray(theta, dtype=float))
    return PlanePoint(project_points(theta.components))


def lift(v: PlanePoint) -> Direction:
    """Map a plane point back to the sphere."""
    if not isinstance(v, PlanePoint):
        v = PlanePoint(v)
    th = lift_points(v.v)
    # renormalize the last ulp so the Direction invariant holds for huge |v|
    return Direction(th / np.linalg.norm(th))


def one_minus_dot_points(v, w):
    """Vectorized 1 - J(v).J(w) = 2|v-w|^2 / (<v>^2 <w>^2)."""
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    dv = v - w
    num = 2.0 * np.sum(dv * dv, axis=-1)
    return num / ((1.0 + np.sum(v * v, axis=-1)) * (1.0 + np.sum(w * w, axis=-1)))


def one_minus_dot(v, w) -> float:
    """1 - theta.theta' written in plane coordinates.

    Symmetric in its arguments bit for bit: the numerator only sees |v-w|^2
    and the denominator is a product of two factors.
    """
    vv = v.v if isinstance(v, PlanePoint) else v
    ww = w.v if isinstance(w, PlanePoint) else w
    return float(one_minus_dot_points(vv, ww))


def sphere_area(d: int = 3) -> float:
    """|S^{d-1}|."""
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


def cap_bound(L: float, d: int = 3) -> float:
    """Exact area of the pole cap {theta : |project(theta)| > L}.

    |v| > L is the same set as theta_d > (L^2-1)/(L^2+1), which for d = 3 has
    area 2 pi (1 - z0) = 4 pi / (1 + L^2).
    """
    if d != 3:
        raise NotImplementedError("closed form implemented for d = 3")
    return 4.0 * math.pi / (1.0 + L * L)


def smooth_step(t):
    """C-infinity step: 1 for t <= 0, 0 for t >= 1."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)

    def f(x):
        return np.where(x > 0, np.exp(-1.0 / np.maximum(x, 1e-300)), 0.0)

    a, b = f(1.0 - t), f(t)
    return a / (a + b)


def taper_profile(r, L, inner=0.8, outer=0.95):
    """Radial window: 1 on r <= inner*L, 0 on r >= outer*L."""
    return smooth_step((np.asarray(r, dtype=float) - inner * L) / ((outer - inner) * L))


# --------------------------------------------------------------------------
# Atlas
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SphereAtlas:
    """Uniform cell-centred grid on [-L, L]^2 with lifted directions.

    Nodes sit at x_j = (j - (N-1)/2) h, h = 2L/N, so the cells tile the square
    exactly and the grid is invariant under the reflections and the diagonal
    swap of the square. With this layout the periodic trapezoid rule coincides
    with the midpoint rule.

    Parameters
    ----------
    L : float
        Half-width of the truncated plane.
    N : int
        Nodes per axis (even).
    """

    L: float = 16.0
    N: int = 128
    d: int = field(default=3, repr=False)

    def __post_init__(self):
        if self.d != 3:
            raise NotImplementedError("atlas implemented for d = 3")
        if self.N < 2 or self.N % 2:
            raise ValueError("N must be a positive even integer")
        if not self.L > 0:
            raise ValueError("L must be positive")

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.N

    @property
    def shape(self):
        return (self.N, self.N)

    @cached_property
    def axis(self) -> np.ndarray:
        return (np.arange(self.N) - (self.N - 1) / 2.0) * self.h

    @cached_property
    def nodes(self) -> np.ndarray:
        """Plane coordinates, shape (N, N, 2), ``nodes[i, j] = (x_i, x_j)``."""
        X, Y = np.meshgrid(self.axis, self.axis, indexing="ij")
        return np.stack([X, Y], axis=-1)

    @cached_property
    def r2(self) -> np.ndarray:
        v = self.nodes
        return v[..., 0] ** 2 + v[..., 1] ** 2

    @cached_property
    def bracket(self) -> np.ndarray:
        return np.sqrt(1.0 + self.r2)

    @cached_property
    def lifted(self) -> np.ndarray:
        """Directions J(v), shape (N, N, 3)."""
        return lift_points(self.nodes)

    @property
    def theta_d(self) -> np.ndarray:
        return self.lifted[..., -1]

    @cached_property
    def jac_weights(self) -> np.ndarray:
        """2^{d-1} <v>^{-2(d-1)} h^{d-1}."""
        n = self.d - 1
        return 2.0 ** n * (1.0 + self.r2) ** (-n) * self.h ** n

    @cached_property
    def taper(self) -> np.ndarray:
        return taper_profile(np.sqrt(self.r2), self.L)

    @cached_property
    def total_weight(self) -> float:
        return math.fsum(self.jac_weights.ravel())

    @property
    def deficit(self) -> float:
        """|S^2| minus the summed weights (pole cap plus quadrature error)."""
        return sphere_area(self.d) - self.total_weight

    @property
    def cap_bound(self) -> float:
        return cap_bound(self.L, self.d)

    def key(self):
        return (float(self.L), int(self.N), int(self.d))

    def direction(self, i: int, j: int) -> Direction:
        return Direction(self.lifted[i, j] / np.linalg.norm(self.lifted[i, j]))


def sphere_integrate(atlas: SphereAtlas, f) -> float | np.ndarray:
    """Atlas quadrature of values sampled at the nodes.

    ``f`` may carry leading axes; the last two axes are the plane grid. A single
    field is summed with ``math.fsum`` (correctly rounded, order independent);
    stacks are reduced with a fixed-order pairwise sum.
    """
    f = np.asarray(f, dtype=float)
    if f.shape[-2:] != atlas.shape:
        raise ValueError(f"field shape {f.shape} does not match atlas {atlas.shape}")
    prod = f * atlas.jac_weights
    if f.ndim == 2:
        return math.fsum(prod.ravel())
    return prod.reshape(prod.shape[:-2] + (-1,)).sum(axis=-1)


def reference_sphere_integral(func, degree: int = 131) -> float:
    """Reference sphere integral by a Lebedev rule.

    ``func`` takes an array of directions with shape (3, n) and returns n values.
    """
    from scipy.integrate import lebedev_rule

    x, w = lebedev_rule(degree)
    return float(np.dot(w, func(x)))
