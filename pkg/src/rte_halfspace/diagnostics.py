"""Ledgers and quantitative probes on computed trajectories.

Every check here is a pure function of recorded series or stored snapshots, so
it can be replayed from the CSV and snapshot files without rerunning the solver.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fractional import hs_seminorm
from .sphere_geometry import SphereAtlas, sphere_integrate

LEDGER_COLUMNS = ("t", "mass", "flux_in", "flux_out", "l2_energy", "hs_dissipation",
                  "min_u", "cons_correction", "boundary_l2")

ENERGY_COLUMNS = ("t", "in_energy", "out_energy", "in_trace", "out_trace", "top_outflux",
                  "limited_columns", "flux_out_remap")


class FormatError(ValueError):
    """Ledger columns or ordering do not match the contract."""


class InsufficientSnapshots(ValueError):
    """Fewer snapshots than a probe needs."""


class DegenerateWindow(ValueError):
    """A decay fit window has no usable signal."""


class _Table:
    columns: tuple = ()

    def __init__(self, rows=None):
        self._rows: list[tuple] = []
        for r in rows or ():
            self.append(r)

    def append(self, row):
        if isinstance(row, dict):
            row = tuple(float(row[c]) for c in self.columns)
        row = tuple(float(v) for v in row)
        if len(row) != len(self.columns):
            raise FormatError(f"expected {len(self.columns)} values, got {len(row)}")
        if not all(math.isfinite(v) for v in row):
            raise FormatError(f"non-finite ledger entry in row {row}")
        if self._rows and not row[0] > self._rows[-1][0]:
            raise FormatError(f"time column not increasing at t = {row[0]!r}")
        self._rows.append(row)

    def __len__(self):
        return len(self._rows)

    def __getitem__(self, name) -> np.ndarray:
        j = self.columns.index(name)
        return np.array([r[j] for r in self._rows], dtype=float)

    @property
    def rows(self):
        return list(self._rows)

    def __eq__(self, other):
        return type(self) is type(other) and self._rows == other._rows


class RunLedger(_Table):
    """Per-step records: t, mass, cumulative fluxes, energy, dissipation, min u, ..."""

    columns = LEDGER_COLUMNS


class EnergyLedger(_Table):
    """Cumulative boundary energy fluxes (companion of :class:`RunLedger`)."""

    columns = ENERGY_COLUMNS


# --------------------------------------------------------------------------
# Ledger checks
# --------------------------------------------------------------------------

def mass_ledger_check(ledger: RunLedger):
    """r(t) = m(t) + Phi_out(t) - m(0) - Phi_in(t); returns (r, max|r|/m(0))."""
    if len(ledger) == 0:
        return np.zeros(0), 0.0
    m = ledger["mass"]
    r = m + ledger["flux_out"] - m[0] - ledger["flux_in"]
    scale = abs(m[0])
    if scale == 0:
        scale = max(float(np.max(np.abs(m))), float(np.max(ledger["flux_in"])), 0.0)
    rel = float(np.max(np.abs(r)) / scale) if scale > 0 else float(np.max(np.abs(r)))
    return r, rel


@dataclass
class EnergyCheck:
    slack: np.ndarray             # per interval, boundary-energy inequality
    slack_dissipative: np.ndarray  # per interval, with the scattering dissipation on the left
    max_slack: float
    max_slack_dissipative: float
    relative: float               # max_slack / initial energy


def energy_ledger_check(ledger: RunLedger, energy: EnergyLedger) -> EnergyCheck:
    """Per-interval slack of the discrete energy inequality.

    slack_n = 1/2 E_{n+1} + 1/2 dOut - 1/2 E_n - 1/2 dIn, where E is the squared
    L^2 norm and Out/In are the cumulative boundary energy fluxes. The second
    series adds 1/2 of the scattering dissipation to the left-hand side.
    """
    if len(ledger) != len(energy):
        raise FormatError("ledger and energy ledger lengths differ")
    if len(ledger) < 2:
        z = np.zeros(0)
        return EnergyCheck(z, z, 0.0, 0.0, 0.0)
    if not np.array_equal(ledger["t"], energy["t"]):
        raise FormatError("ledger and energy ledger time columns differ")
    E = ledger["l2_energy"]
    dE = np.diff(E)
    dout = np.diff(energy["out_energy"])
    din = np.diff(energy["in_energy"])
    ddiss = np.diff(ledger["hs_dissipation"])
    slack = 0.5 * (dE + dout - din)
    slack2 = slack + 0.5 * ddiss
    E0 = E[0] if E[0] > 0 else max(float(np.max(E)), 1e-300)
    ms = float(max(np.max(slack), 0.0))
    return EnergyCheck(slack, slack2, ms, float(max(np.max(slack2), 0.0)), ms / E0)


def energy_bound_ratio(ledger: RunLedger) -> float:
    """(sup E + int dissipation) / (E(0) + ||theta_d g||^2) from ledger columns."""
    lhs = float(np.max(ledger["l2_energy"]) + ledger["hs_dissipation"][-1])
    rhs = float(ledger["l2_energy"][0] + ledger["boundary_l2"][-1])
    return lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf)


def positivity_check(ledger: RunLedger, u0_sup: float) -> float:
    """min over the run of min_u / ||u0||_inf (or of min_u if u0 = 0)."""
    mn = float(np.min(ledger["min_u"]))
    return mn / u0_sup if u0_sup > 0 else mn


# --------------------------------------------------------------------------
# Fourier gain probe
# --------------------------------------------------------------------------

def half_space_s0(s: float) -> float:
    return (s / 8) / (2 * s + 1)


def whole_space_s0(s: float) -> float:
    return (s / 4) / (2 * s + 1)


@dataclass
class FourierGainReport:
    s: float
    s0_half_space: float
    s0_whole_space: float
    k_c: float
    times: np.ndarray
    tail_ratio: np.ndarray
    beta: np.ndarray
    beta_initial: float
    gain_declared: bool
    rough_initial: bool
    interpretation: str = ("per-time spectral decay: a pointwise-in-time reading of a "
                           "space-time bound, stronger than what is bounded")

    def as_dict(self):
        return dict(s=self.s, s0_half_space=self.s0_half_space,
                    s0_whole_space=self.s0_whole_space, k_c=self.k_c,
                    times=self.times.tolist(), tail_ratio=self.tail_ratio.tolist(),
                    beta=self.beta.tolist(), beta_initial=self.beta_initial,
                    gain_declared=self.gain_declared, rough_initial=self.rough_initial,
                    interpretation=self.interpretation)


def spatial_spectrum(u, dx: float, atlas: SphereAtlas, pad: int = 4):
    """Angular-integrated |u_hat(k)|^2 of a slab field extended by zero to x_d < 0.

    Returns (k, E) with k > 0 only.
    """
    M = u.shape[0]
    P = pad * M
    g = np.zeros((P,) + u.shape[1:])
    g[:M] = u
    U = np.fft.rfft(g, axis=0) * dx
    E = np.sum((np.abs(U) ** 2 * atlas.jac_weights).reshape(U.shape[0], -1), axis=1)
    k = 2 * np.pi * np.fft.rfftfreq(P, d=dx)
    return k[1:], E[1:]


def spectral_slope(k, E, k_lo, k_hi, nbins: int = 12) -> float:
    """Decay exponent beta in E ~ k^{-beta}, fitted on log-spaced band averages."""
    edges = np.geomspace(k_lo, k_hi, nbins + 1)
    kc, Ec = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        m = (k >= a) & (k < b)
        if np.any(m) and np.mean(E[m]) > 0:
            kc.append(math.sqrt(a * b))
            Ec.append(np.mean(E[m]))
    if len(kc) < 2:
        return math.nan
    slope = np.polyfit(np.log(kc), np.log(Ec), 1)[0]
    return float(-slope)


def fourier_gain_probe(snapshots, s: float, dx: float, atlas: SphereAtlas,
                       k_c: float | None = None, T: float | None = None,
                       rough_threshold: float = 1e-6) -> FourierGainReport:
    """Spectral-decay gain of the spatial profile between t = 0 and t >= T/2.

    Parameters
    ----------
    snapshots : sequence of (t, u) with u of shape (M, N, N)
    dx : spatial step
    k_c : tail cutoff, default (pi/dx)/4
    T : horizon; default is the last snapshot time

    The decay exponent is fitted on [k_c/16, k_c]. Gain is declared when some
    snapshot with t >= T/2 has beta >= beta(0) + s0/2, and only for rough
    initial data (tail fraction at t = 0 above ``rough_threshold``).
    """
    snaps = sorted(snapshots, key=lambda p: p[0])
    if len(snaps) < 2 or snaps[0][0] != 0.0:
        raise InsufficientSnapshots("insufficient snapshots: need t = 0 and at least one later time")
    if k_c is None:
        k_c = (math.pi / dx) / 4
    if T is None:
        T = snaps[-1][0]
    s0 = half_space_s0(s)
    times, R, B = [], [], []
    for t, u in snaps:
        k, E = spatial_spectrum(np.asarray(u), dx, atlas)
        tot = float(np.sum(E))
        R.append(float(np.sum(E[k > k_c]) / tot) if tot > 0 else 0.0)
        B.append(spectral_slope(k, E, k_c / 16, k_c))
        times.append(t)
    times = np.array(times)
    R = np.array(R)
    B = np.array(B)
    rough = bool(R[0] > rough_threshold)
    late = times >= 0.5 * T
    gain = bool(rough and np.any(late & (B >= B[0] + 0.5 * s0)))
    return FourierGainReport(s, s0, whole_space_s0(s), k_c, times, R, B, float(B[0]),
                             gain, rough)


# --------------------------------------------------------------------------
# Decay fit
# --------------------------------------------------------------------------

@dataclass
class DecayFitReport:
    t_a: float
    t_b: float
    p_hat: float
    A: float
    residual: float
    omega_slot: str = "1/(omega-1) with omega not explicit; exponent fitted only"


def decay_fit(ledger: RunLedger, window) -> DecayFitReport:
    """Least squares of log E(t) = log A - p log t on [t_a, t_b].

    ``residual`` is the RMS misfit in log E divided by the range of log E over
    the window (0 when the signal is constant).
    """
    t_a, t_b = float(window[0]), float(window[1])
    if not t_a > 0 or not t_b > t_a:
        raise DegenerateWindow("window must satisfy 0 < t_a < t_b")
    t = ledger["t"]
    E = ledger["l2_energy"]
    m = (t >= t_a) & (t <= t_b)
    if m.sum() < 2:
        raise DegenerateWindow("fewer than two ledger rows in the window")
    if np.any(E[m] < 1e-14):
        raise DegenerateWindow("||u||^2 below 1e-14 in the window")
    lt, lE = np.log(t[m]), np.log(E[m])
    A_ = np.vstack([np.ones_like(lt), lt]).T
    (c0, c1), *_ = np.linalg.lstsq(A_, lE, rcond=None)
    fit = c0 + c1 * lt
    rng = float(np.max(lE) - np.min(lE))
    rms = float(np.sqrt(np.mean((lE - fit) ** 2)))
    res = rms / rng if rng > 0 else 0.0
    return DecayFitReport(t_a, t_b, float(-c1), float(math.exp(c0)), res)


# --------------------------------------------------------------------------
# Sobolev embedding
# --------------------------------------------------------------------------

def embedding_exponent(s: float, d: int = 3) -> float:
    """p_s with 1/p_s = 1/2 - s/(d-1)."""
    return 1.0 / (0.5 - s / (d - 1))


def hs_norm(u, s: float, atlas: SphereAtlas) -> float:
    l2 = sphere_integrate(atlas, np.asarray(u) ** 2)
    return math.sqrt(hs_seminorm(u, s, atlas) ** 2 + l2)


def embedding_check(u, s: float, atlas: SphereAtlas) -> float:
    """||u||_{L^{p_s}} / ||u||_{H^s} on the sphere; 0 for the zero field."""
    u = np.asarray(u, dtype=float)
    p = embedding_exponent(s, atlas.d)
    lp = sphere_integrate(atlas, np.abs(u) ** p) ** (1 / p)
    if lp == 0:
        return 0.0
    return lp / hs_norm(u, s, atlas)


# --------------------------------------------------------------------------
# Angular relaxation
# --------------------------------------------------------------------------

def anisotropy(u, atlas: SphereAtlas) -> np.ndarray:
    """||u - mean_theta u||_{L^2_theta} per spatial node."""
    u = np.asarray(u, dtype=float)
    W = atlas.jac_weights
    mean = np.sum((u * W).reshape(u.shape[:-2] + (-1,)), -1) / atlas.total_weight
    dev = u - mean[..., None, None]
    return np.sqrt(np.sum((dev * dev * W).reshape(u.shape[:-2] + (-1,)), -1))
