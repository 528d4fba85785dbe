import math

import numpy as np
import pytest
from scipy.special import gamma, hyp1f1

from rte_halfspace.fractional import (OrderError, bracket_constant, bracket_identity_residual,
                                      frac_laplacian_quadrature, frac_laplacian_spectral,
                                      from_weighted, hs_seminorm, lattice_zeta, to_weighted)
from rte_halfspace.sphere_geometry import SphereAtlas

# (-Delta)^s exp(-|v|^2) in R^2 at r = 0, 0.5, 1, 2, 3 from the Hankel integral
# 1/2 int_0^inf k^{1+2s} exp(-k^2/4) J_0(k r) dk, evaluated once with mpmath
GAUSS_R = np.array([0.0, 0.5, 1.0, 2.0, 3.0])
GAUSS_REF = {
    0.25: [1.2818466760204237, 0.9328360093504352, 0.32640496252698736,
           -0.05168129306216478, -0.021014649520367065],
    0.5: [1.772453850905516, 1.2022139828743148, 0.27724865496675966,
          -0.11423077019607407, -0.02651027382600236],
    0.75: [2.599501380277155, 1.6387565811642852, 0.18701876826612515,
           -0.17234605769362768, -0.02040787651576476],
}


def gauss_frac(r, s):
    """Closed form 4^s Gamma(1+s) 1F1(1+s; 1; -r^2)."""
    return 4.0 ** s * gamma(1 + s) * hyp1f1(1 + s, 1.0, -np.asarray(r) ** 2)


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_gaussian_closed_form_matches_hankel_values(s):
    assert np.allclose(gauss_frac(GAUSS_R, s), GAUSS_REF[s], rtol=1e-10, atol=1e-14)


def test_order_validation():
    atlas = SphereAtlas(8.0, 32)
    for s in (0.0, 1.0, -0.2, float("nan")):
        with pytest.raises(OrderError):
            frac_laplacian_spectral(np.zeros(atlas.shape), s, atlas)


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_constant_maps_to_zero(s):
    atlas = SphereAtlas(8.0, 64)
    one = np.ones(atlas.shape)
    assert np.max(np.abs(frac_laplacian_spectral(one, s, atlas))) < 1e-12
    # the lattice sum with the constant continued outside the square
    q = frac_laplacian_quadrature(one, s, atlas, exterior=1.0)
    assert np.max(np.abs(q)) < 1e-10


def test_single_fourier_mode():
    atlas = SphereAtlas(8.0, 64)
    x, y = atlas.nodes[..., 0], atlas.nodes[..., 1]
    P = 2 * atlas.L
    xi = 2 * np.pi * np.array([3.0, 5.0]) / P
    f = np.cos(xi[0] * x + xi[1] * y)
    for s in (0.25, 0.5, 0.75):
        out = frac_laplacian_spectral(f, s, atlas)
        assert np.max(np.abs(out - np.linalg.norm(xi) ** (2 * s) * f)) < 1e-11


def test_exterior_ray_rule_constant():
    # at s = 1/2 the ray weight t^{2s-1} is 1, so a constant continuation is
    # integrated exactly by the callable path too
    atlas = SphereAtlas(8.0, 64)
    one = np.ones(atlas.shape)
    q = frac_laplacian_quadrature(one, 0.5, atlas, exterior=lambda x, y: np.ones_like(x))
    assert np.max(np.abs(q)) < 1e-10


def test_gaussian_quadrature_s_half():
    atlas = SphereAtlas(16.0, 256)
    r = np.sqrt(atlas.r2)
    m = r <= 0.8 * atlas.L
    f = atlas.taper * np.exp(-atlas.r2)
    ref = gauss_frac(r[m], 0.5)
    q = frac_laplacian_quadrature(f, 0.5, atlas, m)
    assert np.linalg.norm(q - ref) / np.linalg.norm(ref) < 1e-3
    sp = frac_laplacian_spectral(f, 0.5, atlas, pad=4, free_space=True)[m]
    assert np.linalg.norm(q - sp) / np.linalg.norm(sp) < 1e-3


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_gaussian_quadrature_converges(s):
    errs = []
    for N in (128, 256):
        atlas = SphereAtlas(16.0, N)
        r = np.sqrt(atlas.r2)
        m = r <= 0.8 * atlas.L
        f = atlas.taper * np.exp(-atlas.r2)
        q = frac_laplacian_quadrature(f, s, atlas, m)
        ref = gauss_frac(r[m], s)
        errs.append(np.linalg.norm(q - ref) / np.linalg.norm(ref))
    # second order in h
    assert errs[1] < 0.3 * errs[0]


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_gaussian_spectral(s):
    atlas = SphereAtlas(16.0, 256)
    r = np.sqrt(atlas.r2)
    f = atlas.taper * np.exp(-atlas.r2)
    ref = gauss_frac(r, s)
    sp = frac_laplacian_spectral(f, s, atlas, pad=4, free_space=True)
    m = r <= 0.8 * atlas.L
    rel = lambda a, b: np.linalg.norm(a - b) / np.linalg.norm(b)  # noqa: E731
    assert rel(sp[m], ref[m]) < 1e-3
    # centre value against 4^s Gamma(1+s)
    c = r <= atlas.h
    assert np.max(np.abs(sp[c] - ref[c])) < 1e-3 * GAUSS_REF[s][0]


def test_bracket_identity_s_half():
    atlas = SphereAtlas(32.0, 256)
    assert bracket_identity_residual(0.5, atlas, "spectral") <= 1e-2
    assert bracket_identity_residual(0.5, atlas, "quadrature") <= 1e-2


def test_bracket_constant_identity_limit():
    vals = [bracket_constant(2, s) for s in (0.2, 0.1, 0.01, 1e-4)]
    assert np.all(np.diff(np.abs(np.array(vals) - 1)) < 0)
    assert abs(vals[-1] - 1) < 1e-3
    # n = 2, s = 1/2: 2 Gamma(3/2) / Gamma(1/2) = 1
    assert abs(bracket_constant(2, 0.5) - 1.0) < 1e-15


def test_lattice_zeta_negative():
    for s in (0.25, 0.5, 0.75):
        assert lattice_zeta(s) < 0
    # Z(1 + s) is a convergent sum; compare with a direct truncated lattice sum
    m = np.arange(-400, 401)
    R2 = (m[:, None] ** 2 + m[None, :] ** 2).astype(float)
    R2[400, 400] = np.inf
    direct = np.sum(R2 ** -1.75)
    tail = 2 * math.pi * 400 ** -1.5 / 1.5  # continuum tail beyond the square
    assert abs(lattice_zeta(1.75) - direct) < 1.2 * tail


def test_weighted_examples():
    atlas = SphereAtlas(4.0, 8)
    one = np.ones(atlas.shape)
    U = to_weighted(one, 0.5, atlas)
    assert np.allclose(U, (1 + atlas.r2) ** -0.5)
    a2 = SphereAtlas(1.0, 2)       # nodes at (+-1/2, +-1/2)
    assert abs(to_weighted(np.ones(a2.shape), 0.5, a2)[0, 0] - 1.5 ** -0.5) < 1e-15
    # weight <v>^{-(2-2s)}: 1 at the origin and 2^{-1/2} on |v| = 1 for s = 1/2
    a3 = SphereAtlas(0.5 * math.sqrt(2) * 2, 2)   # nodes at (+-1/sqrt2, +-1/sqrt2)
    assert abs(np.sqrt(a3.r2[0, 0]) - 1) < 1e-15
    assert abs(to_weighted(np.ones(a3.shape), 0.5, a3)[0, 0] - 2 ** -0.5) < 1e-15
    rng = np.random.default_rng(5)
    u = rng.normal(size=atlas.shape)
    for s in (0.1, 0.5, 0.9):
        assert np.max(np.abs(from_weighted(to_weighted(u, s, atlas), s, atlas) - u)) < 1e-13


def test_hs_seminorm_basic():
    atlas = SphereAtlas(16.0, 64)
    assert hs_seminorm(np.zeros(atlas.shape), 0.5, atlas) == 0.0
    rng = np.random.default_rng(2)
    u = np.exp(-atlas.r2 / 4) * (1 + 0.1 * rng.normal(size=atlas.shape))
    a = hs_seminorm(u, 0.5, atlas)
    assert abs(hs_seminorm(3 * u, 0.5, atlas) - 3 * a) < 1e-12 * a


def test_hs_seminorm_y1_converges():
    vals = []
    for N in (64, 128, 256):
        atlas = SphereAtlas(16.0, N)
        vals.append(hs_seminorm(atlas.theta_d, 0.5, atlas))
    assert min(vals) > 0
    d1, d2 = abs(vals[1] - vals[0]), abs(vals[2] - vals[1])
    assert d2 < 0.5 * d1
    assert d2 < 1e-2 * vals[2]
