"""Time integration of the transport-scattering equation on the half-space.

    d_t u + theta . grad_x u = I(u)   on x_d > 0,
    u = g on the inflow set {x_d = 0, theta_d > 0},   u(0) = u0.

Transport is a conservative semi-Lagrangian remap per direction: each node
owns a trapezoid control volume, and its new mass is the mass of a monotone
reconstruction over the backward image of that volume. The part of the image
below x_d = 0 is filled from the boundary datum g and the part above the
artificial top x_d = X_max is read as zero. Scattering is the exact exponential of the discrete generator (see
:mod:`rte_halfspace.propagator`). The two are composed by Strang splitting.

Slab mode keeps u = u(t, x_d, theta). Box mode adds a periodic tangential
square [0, Xbar)^2 handled by dimension-split periodic shifts.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss

from .fractional import to_weighted
from .propagator import ScatteringPropagator
from .scattering import ScatteringModel
from .sphere_geometry import SphereAtlas

log = logging.getLogger(__name__)

COLUMN_CHUNK = 512      # angular columns per transport work item
SPATIAL_CHUNK = 16      # spatial nodes per scattering work item


class CflError(ValueError):
    """dt * max|theta_d| exceeds half the slab height."""


class StiffnessError(RuntimeError):
    """The scattering substep could not be certified."""


# --------------------------------------------------------------------------
# Grids and state
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SpatialGrid:
    """Nodes in x_d on [0, X_max] (and a periodic tangential square in box mode).

    Parameters
    ----------
    mode : {"slab", "box"}
    X_max : float
    M : int
        Nodes in x_d including both ends.
    Xbar : float
        Tangential period (box mode).
    Mbar : int
        Tangential nodes per axis (box mode).
    """

    mode: str = "slab"
    X_max: float = 6.0
    M: int = 64
    Xbar: float = 1.0
    Mbar: int = 8

    def __post_init__(self):
        if self.mode not in ("slab", "box"):
            raise ValueError(f"unknown grid mode {self.mode!r}")
        if self.M < 3 or not self.X_max > 0:
            raise ValueError("need M >= 3 and X_max > 0")
        if self.mode == "box" and (self.Mbar < 2 or not self.Xbar > 0):
            raise ValueError("need Mbar >= 2 and Xbar > 0 in box mode")

    @property
    def dx(self) -> float:
        return self.X_max / (self.M - 1)

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.M) * self.dx

    @property
    def dxbar(self) -> float:
        return self.Xbar / self.Mbar

    @property
    def xbar(self) -> np.ndarray:
        return np.arange(self.Mbar) * self.dxbar

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid weights in x_d."""
        w = np.full(self.M, self.dx)
        w[0] = w[-1] = 0.5 * self.dx
        return w

    @property
    def spatial_shape(self):
        if self.mode == "slab":
            return (self.M,)
        return (self.Mbar, self.Mbar, self.M)

    @property
    def volume_weights(self) -> np.ndarray:
        if self.mode == "slab":
            return self.weights
        return self.dxbar ** 2 * np.broadcast_to(self.weights, self.spatial_shape)

    @property
    def face_weight(self) -> float:
        """Measure of the tangential face per boundary node group."""
        return 1.0 if self.mode == "slab" else self.dxbar ** 2


@dataclass
class PhaseState:
    """u over (spatial nodes) x (atlas nodes) at time t."""

    u: np.ndarray
    t: float
    model: ScatteringModel
    atlas: SphereAtlas
    grid: SpatialGrid

    def copy(self) -> "PhaseState":
        return replace(self, u=self.u.copy())

    def weighted(self) -> np.ndarray:
        """U_J = u_J <v>^{-(d-1-2s)}."""
        return to_weighted(self.u, self.model.s, self.atlas)

    def mass(self) -> float:
        return phase_integral(self.u, self.atlas, self.grid)

    def energy(self) -> float:
        return phase_integral(self.u * self.u, self.atlas, self.grid)


def phase_integral(f, atlas: SphereAtlas, grid: SpatialGrid) -> float:
    """sum_x omega_x sum_theta W_theta f in a fixed order."""
    ang = np.sum((f * atlas.jac_weights).reshape(f.shape[:-2] + (-1,)), axis=-1)
    return float(np.sum(ang * grid.volume_weights))


def boundary_outflow_rate(u, atlas: SphereAtlas, grid: SpatialGrid) -> float:
    """int u |theta_d| over the outgoing traces: x_d = 0 with theta_d < 0 and the
    artificial top x_d = X_max with theta_d > 0, from the end-node values."""
    td = atlas.theta_d
    W = atlas.jac_weights
    low = np.where(td < 0, -td * W, 0.0)
    high = np.where(td > 0, td * W, 0.0)
    rate = np.sum(u[..., 0, :, :] * low, axis=(-2, -1)) + \
        np.sum(u[..., -1, :, :] * high, axis=(-2, -1))
    return float(grid.face_weight * np.sum(rate))


# --------------------------------------------------------------------------
# Boundary data and initial data
# --------------------------------------------------------------------------

def time_window(t, t_on, t_off, ramp=0.0):
    """1 on [t_on, t_off], with optional C-infinity ramps of width ``ramp``."""
    t = np.asarray(t, dtype=float)
    if ramp <= 0:
        return ((t >= t_on) & (t <= t_off)).astype(float)
    from .sphere_geometry import smooth_step
    up = smooth_step((t_on + ramp - t) / ramp)
    down = smooth_step((t - (t_off - ramp)) / ramp)
    return up * down


@dataclass(frozen=True)
class BoundarySource:
    """Inflow datum g(t, theta) on theta_d > 0, switched by a time window.

    Presets
    -------
    zero        g = 0
    isotropic   g = A
    cosine      g = A theta_d^k        (params: A, k)
    beam        g = A exp(kappa (theta . e - 1))  restricted to theta_d > 0
                (params: A, kappa, ex, ey, ez)
    """

    preset: str = "zero"
    params: tuple = ()
    t_on: float = 0.0
    t_off: float = math.inf
    ramp: float = 0.0

    def __post_init__(self):
        if self.preset not in ("zero", "isotropic", "cosine", "beam"):
            raise ValueError(f"unknown g preset {self.preset!r}")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if self.preset != "zero" and self.params and self.params[0] < 0:
            raise ValueError("g amplitude must be nonnegative")

    @property
    def active(self) -> bool:
        return self.preset != "zero" and (not self.params or self.params[0] != 0)

    def angular(self, theta) -> np.ndarray:
        """Angular profile, zero for theta_d <= 0."""
        td = theta[..., -1]
        p = self.params
        if self.preset == "zero":
            prof = np.zeros_like(td)
        elif self.preset == "isotropic":
            prof = np.full_like(td, p[0] if p else 1.0)
        elif self.preset == "cosine":
            A = p[0] if p else 1.0
            k = p[1] if len(p) > 1 else 1.0
            prof = A * np.maximum(td, 0.0) ** k
        else:
            A = p[0] if p else 1.0
            kappa = p[1] if len(p) > 1 else 4.0
            e = np.array(p[2:5]) if len(p) >= 5 else np.array([0.0, 0.0, 1.0])
            e = e / np.linalg.norm(e)
            prof = A * np.exp(kappa * (theta @ e - 1.0))
        return np.where(td > 0, prof, 0.0)

    def __call__(self, t, theta) -> np.ndarray:
        """g(t, theta); ``t`` broadcasts against the angular shape."""
        return time_window(t, self.t_on, self.t_off, self.ramp) * self.angular(theta)


def initial_data(preset: str, params: tuple, grid: SpatialGrid, atlas: SphereAtlas):
    """u0 on the phase grid.

    Presets
    -------
    zero        0
    uniform     A
    gaussian    A exp(-(x_d - x0)^2 / (2 sigma^2)) exp(kappa (theta_d - 1))
                (params: A, x0, sigma, kappa)
    indicator   A on a <= x_d <= b      (params: A, a, b)
    """
    p = tuple(float(v) for v in params)
    x = grid.x
    shape = grid.spatial_shape + atlas.shape
    if preset == "zero":
        return np.zeros(shape)
    if preset == "uniform":
        return np.full(shape, p[0] if p else 1.0)
    if preset == "gaussian":
        A = p[0] if len(p) > 0 else 1.0
        x0 = p[1] if len(p) > 1 else 2.0
        sig = p[2] if len(p) > 2 else 0.2
        kap = p[3] if len(p) > 3 else 0.0
        prof = A * np.exp(-0.5 * ((x - x0) / sig) ** 2)
        ang = np.exp(kap * (atlas.theta_d - 1.0))
    elif preset == "indicator":
        A = p[0] if len(p) > 0 else 1.0
        a = p[1] if len(p) > 1 else 1.0
        b = p[2] if len(p) > 2 else 2.0
        prof = A * ((x >= a) & (x <= b)).astype(float)
        ang = np.ones(atlas.shape)
    else:
        raise ValueError(f"unknown u0 preset {preset!r}")
    u = prof[:, None, None] * ang[None]
    return np.broadcast_to(u, shape).copy()


# --------------------------------------------------------------------------
# Step reports
# --------------------------------------------------------------------------

@dataclass
class TransportFluxes:
    """Boundary increments of one transport substep.

    ``*_energy`` are the scheme-consistent (discrete Green identity) energy
    fluxes; ``*_trace`` are the plain trace quadratures of int u^2 |theta_d|.
    """

    influx: float = 0.0
    outflux: float = 0.0
    top_outflux: float = 0.0
    in_energy: float = 0.0
    out_energy: float = 0.0
    in_trace: float = 0.0
    out_trace: float = 0.0
    boundary_l2: float = 0.0
    limited_columns: int = 0

    def __iadd__(self, other):
        for k in self.__dataclass_fields__:
            setattr(self, k, getattr(self, k) + getattr(other, k))
        return self


@dataclass
class StepReport:
    dt: float
    cfl: float = 0.0
    iterations: int = 0
    residual: float = 0.0
    cons_correction: float = 0.0
    outflux: float = 0.0
    influx: float = 0.0
    dissipation: float = 0.0
    fluxes: TransportFluxes = field(default_factory=TransportFluxes)


# --------------------------------------------------------------------------
# 1-D conservative semi-Lagrangian kernel (columns along axis 1)
# --------------------------------------------------------------------------
#
# Node i owns the trapezoid control volume [e_i, e_{i+1}] with
# e = (0, dx/2, 3dx/2, ..., X_max - dx/2, X_max), whose width is the
# trapezoid weight omega_i, so omega_i u_i is the cell mass. A step remaps
# the cell masses: the new mass of cell i is the mass of the reconstruction
# over the backward image [e_i - shift, e_{i+1} - shift], with the part below
# x_d = 0 filled by the inflow density and the part above X_max read as zero.
# Cell masses telescope, so the mass change equals inflow minus outflow to
# rounding.

@lru_cache(maxsize=8)
def _gauss(n: int):
    return leggauss(n)


def dual_edges(M: int, dx: float, X_max: float) -> np.ndarray:
    """Edges 0, dx/2, 3dx/2, ..., X_max of the trapezoid control volumes."""
    e = (np.arange(M + 1) - 0.5) * dx
    e[0] = 0.0
    e[-1] = X_max
    return e


def window_integral(a, b, t_on, t_off, ramp, power=1, n=32):
    """int_a^b w(s)^power ds for the source time window, elementwise.

    The window is split at its breakpoints and each smooth piece gets an
    n-point Gauss-Legendre rule; without a ramp the result is exact.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if ramp <= 0:
        return np.clip(np.minimum(b, t_off) - np.maximum(a, t_on), 0.0, None)
    x, wq = _gauss(n)
    bps = sorted(p for p in {t_on, t_on + ramp, t_off - ramp, t_off} if math.isfinite(p))
    edges = [-math.inf] + bps + [math.inf]
    out = np.zeros(np.broadcast(a, b).shape)
    for lo, hi in zip(edges[:-1], edges[1:]):
        aa = np.maximum(a, lo)
        ln = np.maximum(np.minimum(b, hi) - aa, 0.0)
        if not np.any(ln > 0):
            continue
        s = aa[..., None] + 0.5 * ln[..., None] * (x + 1.0)
        w = time_window(s, t_on, t_off, ramp)
        out = out + 0.5 * ln * np.sum(wq * w ** power, axis=-1)
    return out


def edge_densities(u, omega):
    """Density estimates at the control-volume edges, shape (M+1, ncol).

    Interior edges take the distance-weighted mean of the two adjacent cell
    values, which is exact for linear data, clipped to the Fritsch-Carlson
    region (same sign, at most three times either neighbour) so the cubic
    primitive is monotone on every cell.
    """
    wl = omega[:-1, None]
    wr = omega[1:, None]
    ul, ur = u[:-1], u[1:]
    d = (wr * ul + wl * ur) / (wl + wr)
    cap = 3.0 * np.minimum(np.abs(ul), np.abs(ur))
    d = np.where(ul * ur > 0, np.sign(ul) * np.minimum(np.abs(d), cap), 0.0)
    return np.concatenate([u[:1], d, u[-1:]], axis=0)


def _local_primitive(uk, dl, dr, h, s, hermite):
    """Mass over the first fraction s of a cell of width h."""
    if not hermite:
        return h * s * uk
    s2 = s * s
    s3 = s2 * s
    return h * ((s3 - 2 * s2 + s) * dl + (3 * s2 - 2 * s3) * uk + (s3 - s2) * dr)


def _local_density(uk, dl, dr, s, hermite):
    if not hermite:
        return uk + 0.0 * s
    return (3 * s * s - 4 * s + 1) * dl + 6 * s * (1 - s) * uk + (3 * s * s - 2 * s) * dr


class ColumnGeometry:
    """Backward images of the control-volume edges for one set of column shifts.

    Everything here depends on the shifts only, so it is built once per
    (dt, column range) and reused across steps.
    """

    def __init__(self, shift, dx, M, X_max, omega):
        shift = np.asarray(shift, dtype=float)
        ncol = shift.shape[0]
        e = dual_edges(M, dx, X_max)
        p = e[:, None] - shift[None, :]
        pc = np.clip(p, 0.0, X_max)
        k = np.clip(np.searchsorted(e, pc, side="right") - 1, 0, M - 1)
        self.shift = shift
        self.M, self.ncol = M, ncol
        self.omega = omega
        self.k = k
        self.s = (pc - e[k]) / omega[k]
        self.h = omega[k]
        self.kflat = k * ncol + np.arange(ncol)[None, :]
        self.span = k[1:] - k[:-1]
        self.wide = bool(np.any(self.span > 1))
        # inflow: edges whose image lies below x_d = 0, as time offsets in (0, dt]
        self.below = p < 0
        self.below_idx = np.nonzero(self.below)
        with np.errstate(divide="ignore", invalid="ignore"):
            off = -p / np.where(shift > 0, shift, 1.0)[None, :]
        self.offset_frac = off[self.below_idx]          # fraction of dt
        self.offset_frac[self.below_idx[0] == 0] = 1.0
        # overlaps of each cell with the union of the images (for Jensen bounds)
        lo = np.maximum(0.0, -shift)[None, :]
        hi = np.minimum(X_max, X_max - shift)[None, :]
        self.donor = np.clip(np.minimum(e[1:, None], hi) - np.maximum(e[:-1, None], lo),
                             0.0, None)


def _remap(u, geo: ColumnGeometry, hermite):
    """Reconstruction mass per new cell, and the local primitives at the edge images."""
    ncol = geo.ncol
    uf = u.ravel()
    uk = uf[geo.kflat]
    if hermite:
        d = edge_densities(u, geo.omega).ravel()
        dl, dr = d[geo.kflat], d[geo.kflat + ncol]
    else:
        dl = dr = None
    L = _local_primitive(uk, dl, dr, geo.h, geo.s, hermite)
    m = geo.omega[:, None] * u
    between = np.where(geo.span == 0, 0.0, m.ravel()[geo.kflat[:-1]])
    C = None
    if geo.wide:
        C = np.concatenate([np.zeros((1, ncol)), np.cumsum(m, axis=0)], axis=0)
        cols = np.arange(ncol)[None, :]
        far = C[geo.k[1:], cols] - C[geo.k[:-1], cols]
        between = np.where(geo.span > 1, far, between)
    return between + L[1:] - L[:-1], L, m, C, (dl, dr)


def _edge_flux_out(geo, L, m, C):
    """Mass below the image of edge 0 and above the image of edge M."""
    ncol = geo.ncol
    cols = np.arange(ncol)
    k0, kM = geo.k[0], geo.k[-1]
    low = L[0].copy()
    high = m[kM, cols] - L[-1]
    if np.any(k0 > 0) or np.any(kM < geo.M - 1):
        if C is None:
            C = np.concatenate([np.zeros((1, ncol)), np.cumsum(m, axis=0)], axis=0)
        low = low + C[k0, cols]
        high = high + (C[-1, cols] - C[kM + 1, cols])
    return low, high


def _density_sq_below(u, geo, dens, hermite, n=3):
    """int_0^{p_0} rho^2 for columns moving toward x_d = 0 (exact for quadratics)."""
    ncol = geo.ncol
    x, wq = _gauss(n)
    k0 = geo.k[0]
    out = np.zeros(ncol)
    dl_all, dr_all = dens
    d = edge_densities(u, geo.omega) if hermite else None
    for j in range(int(k0.max()) + 1):
        ln = np.where(j < k0, 1.0, np.where(j == k0, geo.s[0], 0.0))
        if not np.any(ln > 0):
            continue
        s = 0.5 * ln[None, :] * (x[:, None] + 1.0)
        dl = d[j] if hermite else None
        dr = d[j + 1] if hermite else None
        rho = _local_density(u[j][None, :], None if dl is None else dl[None, :],
                             None if dr is None else dr[None, :], s, hermite)
        out += 0.5 * ln * geo.omega[j] * np.sum(wq[:, None] * rho * rho, axis=0)
    return out


def transport_columns(u, theta_d, dt, dx, X_max, omega, inflow=None, method="pchip",
                      geo=None):
    """Advance independent x_d columns u[:, j] with speed theta_d[j].

    Parameters
    ----------
    u : ndarray (M, ncol)
    theta_d : ndarray (ncol,)
    inflow : callable (offset, col_idx, power) -> ndarray, optional
        g(theta)^power times int_t^{t+offset} w(s)^power ds for the inflow
        columns; ``None`` means g = 0.
    omega : trapezoid weights (M,)
    method : {"pchip", "linear"}
        Monotone cubic primitive (piecewise quadratic density) or piecewise
        constant density.
    geo : ColumnGeometry, optional
        Precomputed geometry for ``dt * theta_d``.

    Returns
    -------
    new : ndarray (M, ncol)
    flux : dict of per-column arrays (in, out, top, in_energy, out_energy,
        out_trace, limited)
    """
    if method not in ("pchip", "linear"):
        raise ValueError(f"unknown interpolation {method!r}")
    M, ncol = u.shape
    if geo is None:
        geo = ColumnGeometry(dt * theta_d, dx, M, X_max, omega)
    shift = geo.shift
    hermite = method == "pchip"
    # inflow primitive at the edge images below x_d = 0 (zero elsewhere)
    P = np.zeros((M + 1, ncol))
    in_energy = np.zeros(ncol)
    if inflow is not None and geo.below_idx[0].size:
        ei, ci = geo.below_idx
        P[ei, ci] = inflow(geo.offset_frac * dt, ci, 1)
        inc = np.nonzero(shift > 0)[0]
        in_energy[inc] = theta_d[inc] * inflow(np.full(inc.size, dt), inc, 2)
    in_mass = theta_d[None, :] * (P[:-1] - P[1:])
    influx = theta_d * P[0]

    mass, L, m, C, dens = _remap(u, geo, hermite)
    new = (mass + in_mass) / omega[:, None]
    uu = u * u
    # Jensen bound of the piecewise constant remap
    bound = np.sum(geo.donor * uu, axis=0) + in_energy
    limited = np.zeros(ncol, dtype=bool)
    if hermite:
        limited = np.sum(omega[:, None] * new * new, axis=0) > bound
        if np.any(limited):
            mass_c, L_c, _, _, _ = _remap(u, geo, False)
            new = np.where(limited[None, :], (mass_c + in_mass) / omega[:, None], new)
            L = np.where(limited[None, :], L_c, L)
    low, high = _edge_flux_out(geo, L, m, C)
    neg = shift < 0
    pos = shift > 0
    out = np.where(neg, low, 0.0)
    top = np.where(pos, high, 0.0)
    out_energy = np.sum((omega[:, None] - geo.donor) * uu, axis=0)
    out_tr = np.zeros(ncol)
    if np.any(neg):
        tr_h = _density_sq_below(u, geo, dens, True) if hermite else 0.0
        tr_c = _density_sq_below(u, geo, dens, False)
        tr = np.where(limited, tr_c, tr_h) if hermite else tr_c
        out_tr = np.where(neg, tr, 0.0)
    return new, dict(**{"in": influx}, out=out, top=top, in_energy=in_energy,
                     out_energy=out_energy, out_trace=out_tr, limited=limited)


def _periodic_shift(u, shift, dx, axis, method):
    """Conservative periodic remap along ``axis`` (columns broadcast on the rest)."""
    u = np.moveaxis(u, axis, 0)
    n = u.shape[0]
    flat = u.reshape(n, -1)
    sh = np.broadcast_to(shift, u.shape[1:]).reshape(-1)
    q = np.floor(sh / dx)
    f = sh / dx - q
    i = np.arange(n)[:, None]
    j1 = np.mod(i - q[None, :].astype(int), n)
    j0 = np.mod(j1 - 1, n)
    cols = np.broadcast_to(np.arange(flat.shape[1])[None, :], j1.shape)
    # cell i collects the last fraction f of cell j0 and the first 1 - f of cell j1
    lin = f * flat[j0, cols] + (1.0 - f) * flat[j1, cols]
    if method == "linear":
        new = lin
    elif method == "pchip":
        ul = np.roll(flat, 1, axis=0)
        d = np.where(ul * flat > 0, np.sign(flat) * np.minimum(
            np.abs(0.5 * (ul + flat)), 3.0 * np.minimum(np.abs(ul), np.abs(flat))), 0.0)
        dn = np.roll(d, -1, axis=0)

        def first(j, s):
            return _local_primitive(flat[j, cols], d[j, cols], dn[j, cols], 1.0, s, True)

        new = (flat[j0, cols] - first(j0, 1.0 - f)) + first(j1, 1.0 - f)
        # fall back to the piecewise constant remap where the energy would grow
        grow = np.sum(new * new, axis=0) > np.sum(flat * flat, axis=0)
        new = np.where(grow[None, :], lin, new)
    else:
        raise ValueError(f"unknown interpolation {method!r}")
    return np.moveaxis(new.reshape(u.shape), 0, axis)


# --------------------------------------------------------------------------
# Substeps
# --------------------------------------------------------------------------

@lru_cache(maxsize=8)
def orbit_representatives(N: int):
    """One atlas node per orbit of the square-grid symmetry group.

    Returns (reps, inv): flat indices of the representatives and, for every
    node, the position of its representative in ``reps``.
    """
    i, j = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
    a = np.minimum(i, N - 1 - i)
    b = np.minimum(j, N - 1 - j)
    canon = np.maximum(a, b) * N + np.minimum(a, b)
    reps_canon, first, inv = np.unique(canon.ravel(), return_index=True, return_inverse=True)
    return first, inv


class Integrator:
    """Holds the model, atlas, grid and the lazily built scattering propagator.

    Parameters
    ----------
    model, atlas, grid
    interpolation : {"pchip", "linear"}
    threads : int
        Worker threads for column and spatial chunks. Results do not depend on
        this number: chunk sizes are fixed and reductions run in fixed order.
    projection : bool
        Apply the conservation projection after each scattering substep.
    """

    def __init__(self, model: ScatteringModel, atlas: SphereAtlas, grid: SpatialGrid,
                 interpolation: str = "pchip", threads: int = 1, projection: bool = True,
                 residual_tol: float = 1e-10, propagator: ScatteringPropagator | None = None):
        self.model = model
        self.atlas = atlas
        self.grid = grid
        self.interpolation = interpolation
        self.threads = max(1, int(threads))
        self.projection = projection
        self.residual_tol = residual_tol
        self._prop = propagator
        self._geo = {}

    @property
    def propagator(self) -> ScatteringPropagator:
        if self._prop is None:
            self._prop = ScatteringPropagator(self.model, self.atlas)
        return self._prop

    def _map(self, fn, items):
        if self.threads == 1 or len(items) == 1:
            return [fn(it) for it in items]
        with ThreadPoolExecutor(max_workers=self.threads) as ex:
            return list(ex.map(fn, items))

    # -- transport ------------------------------------------------------
    def check_cfl(self, dt):
        if not dt > 0:
            raise ValueError("dt must be positive")
        tdmax = float(np.max(np.abs(self.atlas.theta_d)))
        if dt * tdmax > self.grid.X_max / 2:
            raise CflError(f"dt*max|theta_d| = {dt * tdmax:.4g} exceeds X_max/2 = "
                           f"{self.grid.X_max / 2:.4g}")
        return dt * tdmax / self.grid.dx

    def _geometry(self, dt, chunks, td, reduced):
        key = (float(dt), reduced)
        if key not in self._geo:
            if len(self._geo) >= 4:
                self._geo.pop(next(iter(self._geo)))
            g = self.grid
            self._geo[key] = {a: ColumnGeometry(dt * td[a:b], g.dx, g.M, g.X_max, g.weights)
                              for a, b in chunks}
        return self._geo[key]

    def transport_step(self, state: PhaseState, dt: float, source: BoundarySource):
        """Semi-Lagrangian transport over [t, t+dt]; returns (state', fluxes).

        When the field and the inflow profile are invariant under the symmetry
        group of the atlas (bitwise), only one column per orbit is advected
        and the result is copied to the rest of the orbit. Columns are
        independent, so this changes nothing but the cost.
        """
        self.check_cfl(dt)
        grid, atlas = self.grid, self.atlas
        u = state.u
        if grid.mode == "box":
            u = self._tangential(u, dt)
        t = state.t
        th = atlas.lifted.reshape(-1, 3)
        W = atlas.jac_weights.ravel()
        td_full = th[:, 2]
        omega = grid.weights
        ncol = td_full.shape[0]
        lead = u.shape[:-3] if grid.mode == "box" else ()
        cols_full = u.reshape(lead + (grid.M, ncol))
        gp_full = source.angular(th) if source.active else np.zeros(ncol)

        reps, inv = orbit_representatives(atlas.N)
        reduced = (np.array_equal(gp_full, gp_full[reps][inv])
                   and np.array_equal(cols_full, cols_full[..., reps][..., inv]))
        if reduced:
            td, gprof, cols_u = td_full[reps], gp_full[reps], cols_full[..., reps]
        else:
            td, gprof, cols_u = td_full, gp_full, cols_full
        nsel = td.shape[0]

        def inflow_factory(ci_offset):
            def inflow(offset, ci, power):
                j = ci + ci_offset
                wi = window_integral(t, t + offset, source.t_on, source.t_off, source.ramp,
                                     power)
                return gprof[j] ** power * wi
            return inflow if source.active else None

        chunks = [(s0, min(s0 + COLUMN_CHUNK, nsel)) for s0 in range(0, nsel, COLUMN_CHUNK)]
        new = np.empty_like(cols_u)
        flux = TransportFluxes()
        per = {k: np.zeros(lead + (nsel,)) for k in
               ("in", "out", "top", "in_energy", "out_energy", "out_trace", "limited")}

        geos = self._geometry(dt, chunks, td, reduced)

        def work(item):
            idx, (a, b) = item
            col = cols_u[idx][:, a:b]
            res, fl = transport_columns(col, td[a:b], dt, grid.dx, grid.X_max, omega,
                                        inflow_factory(a), self.interpolation, geos[a])
            return idx, a, b, res, fl

        items = [(idx, ch) for idx in np.ndindex(*lead) for ch in chunks] if lead else \
            [((), ch) for ch in chunks]
        for idx, a, b, res, fl in self._map(work, items):
            new[idx][:, a:b] = res
            for key in per:
                per[key][idx][a:b] = fl[key]
        if reduced:
            new = new[..., inv]
            per = {k: v[..., inv] for k, v in per.items()}
        fw = grid.face_weight
        lax = tuple(range(len(lead)))

        def total(key):
            return fw * float(np.sum(np.sum(per[key], axis=lax) * W))

        flux.outflux = total("out")
        flux.top_outflux = total("top")
        flux.in_energy = total("in_energy")
        flux.out_energy = total("out_energy")
        flux.out_trace = total("out_trace")
        flux.limited_columns = int(np.sum(per["limited"]))
        if source.active:
            nb = int(np.prod(lead)) if lead else 1
            _, ei, bl = self._inflow_integrals(source, t, dt, gp_full, td_full, W)
            flux.influx = total("in")
            flux.in_trace = fw * nb * ei
            flux.boundary_l2 = fw * nb * bl
        u_new = new.reshape(u.shape)
        return PhaseState(u_new, t + dt, state.model, atlas, grid), flux

    @staticmethod
    def _inflow_integrals(source, t, dt, gprof, td, W):
        """int_t^{t+dt} of sum W theta_d g, sum W theta_d g^2 and sum W (theta_d g)^2."""
        pos = td > 0
        w1 = float(window_integral(t, t + dt, source.t_on, source.t_off, source.ramp, 1))
        w2 = float(window_integral(t, t + dt, source.t_on, source.t_off, source.ramp, 2))
        gp = gprof[pos]
        a = float(np.sum(W[pos] * td[pos] * gp))
        b = float(np.sum(W[pos] * td[pos] * gp * gp))
        c = float(np.sum(W[pos] * (td[pos] * gp) ** 2))
        return w1 * a, w2 * b, w2 * c

    def _tangential(self, u, dt):
        """Periodic shifts in the two tangential directions (box mode)."""
        th = self.atlas.lifted
        for ax in (0, 1):
            u = _periodic_shift(u, dt * th[..., ax], self.grid.dxbar, ax, self.interpolation)
        return u

    # -- scattering -----------------------------------------------------
    def scattering_step(self, state: PhaseState, dt: float):
        """exp(dt G) at every spatial node; returns (state', StepReport)."""
        if not dt > 0:
            raise ValueError("dt must be positive")
        atlas, grid = self.atlas, self.grid
        prop = self.propagator
        u = state.u
        sp = u.shape[:-2]
        flat = u.reshape((-1,) + atlas.shape)
        n = flat.shape[0]
        chunks = [(a, min(a + SPATIAL_CHUNK, n)) for a in range(0, n, SPATIAL_CHUNK)]

        def work(ch):
            a, b = ch
            return prop.propagate(flat[a:b], dt)

        out = np.concatenate(self._map(work, chunks), axis=0)
        corr = np.zeros(n)
        if self.projection:
            W = atlas.jac_weights
            Wt = atlas.total_weight
            m0 = np.sum((flat * W).reshape(n, -1), axis=1)
            m1 = np.sum((out * W).reshape(n, -1), axis=1)
            corr = (m0 - m1) / Wt
            out = out + corr[:, None, None]
        res = prop.residual
        if not res <= self.residual_tol:
            raise StiffnessError(f"scattering propagator residual {res:.3e} above tolerance")
        new = out.reshape(u.shape)
        e0 = phase_integral(u * u, atlas, grid)
        e1 = phase_integral(new * new, atlas, grid)
        rep = StepReport(dt=dt, iterations=0, residual=res,
                         cons_correction=float(np.max(np.abs(corr))) if n else 0.0,
                         dissipation=e0 - e1)
        return PhaseState(new, state.t, state.model, atlas, grid), rep

    # -- composition ----------------------------------------------------
    def strang_step(self, state, dt, source, transport_on=True, scattering_on=True):
        rep = StepReport(dt=dt)
        rep.cfl = self.check_cfl(dt)
        fl = TransportFluxes()
        if transport_on:
            state, f = self.transport_step(state, 0.5 * dt, source)
            fl += f
        if scattering_on:
            state, sr = self.scattering_step(state, dt)
            rep.residual = sr.residual
            rep.cons_correction = sr.cons_correction
            rep.dissipation = sr.dissipation
        if transport_on:
            state, f = self.transport_step(state, 0.5 * dt, source)
            fl += f
        if not transport_on:
            state = replace(state, t=state.t + dt)
        rep.fluxes = fl
        rep.outflux = fl.outflux + fl.top_outflux
        rep.influx = fl.influx
        return state, rep


def transport_step(state, dt, source, interpolation="pchip"):
    """Functional form of :meth:`Integrator.transport_step`."""
    return Integrator(state.model, state.atlas, state.grid, interpolation).transport_step(
        state, dt, source)


def scattering_step(state, dt, propagator=None):
    """Functional form of :meth:`Integrator.scattering_step`."""
    return Integrator(state.model, state.atlas, state.grid,
                      propagator=propagator).scattering_step(state, dt)


def strang_step(state, dt, source, integrator=None, **kw):
    integ = integrator or Integrator(state.model, state.atlas, state.grid)
    return integ.strang_step(state, dt, source, **kw)
