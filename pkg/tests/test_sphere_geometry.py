import math

import numpy as np
import pytest
from scipy.integrate import quad

from rte_halfspace.sphere_geometry import (Direction, PlanePoint, PoleError, SphereAtlas,
                                           cap_bound, lift, lift_points, one_minus_dot,
                                           project, project_points, reference_sphere_integral,
                                           sphere_area, sphere_integrate)

# int_{|v|>16} 4 <v>^{-4} dv, evaluated once with mpmath (= 4 pi / 257)
CAP_16 = 0.04889638371345982
# area of the lifted square [-16, 16]^2, evaluated once by 2-D adaptive quadrature
SQUARE_16 = 12.526334411211998


def test_project_examples():
    assert np.allclose(project(Direction([0.0, 0.0, -1.0])).v, [0.0, 0.0])
    assert np.allclose(project(Direction([1.0, 0.0, 0.0])).v, [1.0, 0.0])


def test_lift_examples():
    assert np.allclose(lift(PlanePoint([0.0, 0.0])).components, [0.0, 0.0, -1.0])
    assert np.allclose(lift(PlanePoint([1.0, 0.0])).components, [1.0, 0.0, 0.0])
    th = lift(PlanePoint([1e6, 0.0]))
    assert th.theta_d > 1 - 1e-11


def test_round_trip_near_pole():
    rng = np.random.default_rng(3)
    for _ in range(20):
        phi = rng.uniform(0, 2 * np.pi)
        r = math.sqrt(1 - 0.9 ** 2)
        th = Direction([r * math.cos(phi), r * math.sin(phi), 0.9])
        v = project(th)
        # |v| = |theta'| / (1 - theta_d)
        assert abs(np.linalg.norm(v.v) - r / 0.1) < 1e-12
        back = lift(v)
        assert np.max(np.abs(back.components - th.components)) < 1e-13


def test_round_trip_vectorized():
    rng = np.random.default_rng(0)
    th = rng.normal(size=(500, 3))
    th /= np.linalg.norm(th, axis=1, keepdims=True)
    th = th[th[:, 2] < 0.99]
    assert np.max(np.abs(lift_points(project_points(th)) - th)) < 1e-12


def test_pole_raises():
    with pytest.raises(PoleError):
        project(Direction([0.0, 0.0, 1.0]))


def test_direction_requires_unit_length():
    with pytest.raises(ValueError):
        Direction([1.0, 1.0, 0.0])


def test_one_minus_dot():
    v, w = PlanePoint([0.0, 0.0]), PlanePoint([1.0, 0.0])
    assert one_minus_dot(v, v) == 0.0
    assert abs(one_minus_dot(v, w) - 1.0) < 1e-15
    rng = np.random.default_rng(1)
    for _ in range(50):
        a, b = rng.normal(scale=3, size=2), rng.normal(scale=3, size=2)
        direct = 1 - np.dot(lift(PlanePoint(a)).components, lift(PlanePoint(b)).components)
        assert abs(one_minus_dot(a, b) - direct) < 1e-12
        assert one_minus_dot(a, b) == one_minus_dot(b, a)


def test_cap_bound_examples():
    assert abs(cap_bound(1.0) - 2 * math.pi) < 1e-14
    assert cap_bound(1e8) < 1e-14
    Ls = np.linspace(0.5, 40, 30)
    assert np.all(np.diff([cap_bound(L) for L in Ls]) < 0)


def test_cap_bound_radial_oracle():
    # 1-D radial quadrature of 4 <v>^{-4} over |v| > 16
    val, _ = quad(lambda r: 4 * (1 + r * r) ** -2 * 2 * math.pi * r, 16, np.inf,
                  epsabs=1e-15, epsrel=1e-13)
    assert abs(val - CAP_16) < 1e-13
    assert abs(cap_bound(16.0) - CAP_16) < 1e-14


def test_sphere_integrate_constant():
    atlas = SphereAtlas(16.0, 128)
    total = sphere_integrate(atlas, np.ones(atlas.shape))
    deficit = 4 * math.pi - total
    assert abs(total - atlas.total_weight) < 1e-12
    # deficit = area outside the square (>= cap outside the disc) up to midpoint error
    assert abs(deficit - (sphere_area() - SQUARE_16)) < 1e-3
    assert deficit <= cap_bound(16.0)
    assert sphere_integrate(atlas, np.zeros(atlas.shape)) == 0.0


def test_sphere_integrate_odd_symmetry():
    atlas = SphereAtlas(16.0, 128)
    # theta_d is odd about the equator |v| = 1; the missing cap carries ~ +cap_bound
    val = sphere_integrate(atlas, atlas.theta_d)
    assert abs(val) < 2 * cap_bound(16.0)
    # theta_1 and theta_2 vanish by the grid reflections
    assert abs(sphere_integrate(atlas, atlas.lifted[..., 0])) < 1e-13


def test_atlas_matches_lebedev():
    atlas = SphereAtlas(32.0, 256)
    f = lambda th: np.exp(-2 * (1 + th[2])) * (1 + th[0] ** 2)  # noqa: E731
    ref = reference_sphere_integral(f)
    val = sphere_integrate(atlas, f(np.moveaxis(atlas.lifted, -1, 0)))
    assert abs(val - ref) < 1e-4 * abs(ref)


def test_atlas_symmetry_bitwise():
    atlas = SphereAtlas(16.0, 64)
    td = atlas.theta_d
    assert np.array_equal(td, td[::-1, :])
    assert np.array_equal(td, td[:, ::-1])
    assert np.array_equal(td, td.T)


def test_atlas_rejects_odd_n():
    with pytest.raises(ValueError):
        SphereAtlas(16.0, 63)
