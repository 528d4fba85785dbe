"""Run orchestration: config in, ledgers and snapshots out."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig, serialize_config
from .diagnostics import EnergyLedger, RunLedger
from .io import software_versions, write_energy_ledger, write_ledger, write_manifest, write_snapshot
from .propagator import ScatteringPropagator
from .scattering import ScatteringModel
from .solver import (BoundarySource, Integrator, PhaseState, SpatialGrid, StepReport,
                     boundary_outflow_rate, initial_data)
from .sphere_geometry import SphereAtlas

log = logging.getLogger(__name__)


class PositivityError(RuntimeError):
    """Strict mode: min u dropped below -1e-6 ||u0||_inf."""


class RunError(RuntimeError):
    """Numerical failure surfaced with the step index."""


@dataclass
class RunResult:
    config: RunConfig
    ledger: RunLedger
    energy: EnergyLedger
    snapshots: list = field(default_factory=list)      # (t, u) pairs when kept
    state: PhaseState | None = None
    reports: list = field(default_factory=list)
    wall_time: float = 0.0
    u0_sup: float = 0.0


def build(cfg: RunConfig, propagator: ScatteringPropagator | None = None, threads: int = 1):
    """Model, atlas, grid, integrator, source and u0 from a config."""
    model = ScatteringModel(cfg.s, cfg.b1, cfg.h_preset, cfg.h_params)
    atlas = SphereAtlas(cfg.L, cfg.N)
    grid = SpatialGrid(cfg.mode, cfg.X_max, cfg.M, cfg.Xbar, cfg.Mbar)
    if propagator is not None and (propagator.model != model or propagator.atlas != atlas):
        propagator = None
    integ = Integrator(model, atlas, grid, cfg.interpolation, threads,
                       cfg.conservation_projection, cfg.scatter_residual, propagator)
    source = BoundarySource(cfg.g_preset, cfg.g_params, cfg.t_on, cfg.t_off, cfg.ramp)
    u0 = initial_data(cfg.u0_preset, cfg.u0_params, grid, atlas)
    return model, atlas, grid, integ, source, u0


def run(cfg: RunConfig, output_dir=None, threads: int = 1, strict: bool | None = None,
        keep_snapshots: bool = False, propagator: ScatteringPropagator | None = None,
        u0=None) -> RunResult:
    """Integrate from t = 0 to T with Strang steps.

    Parameters
    ----------
    cfg : RunConfig
    output_dir : path, optional
        When given, writes ledger.csv, energy_fluxes.csv, snapshots/, config.cfg
        and manifest.json there.
    threads : int
        Worker threads inside the substeps; results are identical for any value.
    strict : bool, optional
        Abort on positivity violations (defaults to the config flag).
    keep_snapshots : bool
        Also keep snapshot arrays in memory.
    u0 : ndarray, optional
        Override the preset initial data.
    """
    t_wall = time.perf_counter()
    strict = cfg.strict_positivity if strict is None else strict
    model, atlas, grid, integ, source, u_init = build(cfg, propagator, threads)
    if u0 is not None:
        u_init = np.array(u0, dtype=float)
    state = PhaseState(u_init, 0.0, model, atlas, grid)
    u0_sup = float(np.max(np.abs(u_init))) if u_init.size else 0.0
    ledger = RunLedger()
    energy = EnergyLedger()
    res = RunResult(cfg, ledger, energy, u0_sup=u0_sup)

    out = Path(output_dir) if output_dir is not None else None
    snapdir = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.cfg").write_text(serialize_config(cfg), encoding="utf-8")
        if cfg.snapshot_every > 0:
            snapdir = out / "snapshots"
            snapdir.mkdir(exist_ok=True)
            for old in snapdir.glob("*.rteh"):
                old.unlink()
    snap_files = []

    def snapshot(k):
        if cfg.snapshot_every <= 0:
            return
        if keep_snapshots:
            res.snapshots.append((state.t, state.u.copy()))
        if snapdir is not None:
            p = snapdir / f"snap_{k:06d}.rteh"
            write_snapshot(p, state.u, state.t, s=cfg.s, L=cfg.L, X_max=cfg.X_max,
                           mode=cfg.mode)
            snap_files.append(p.name)

    cum = dict(fin=0.0, fout=0.0, diss=0.0, bl2=0.0, ein=0.0, eout=0.0, tin=0.0, tout=0.0,
               top=0.0, lim=0.0, ftr=0.0)
    # the ledger's outflux is the trace quadrature of u |theta_d| on the exits
    # (trapezoid in time); the remap's own exact outflux goes to the energy file
    trace = [boundary_outflow_rate(state.u, atlas, grid)]
    m0 = state.mass()

    def record(rep: StepReport | None):
        mn = float(np.min(state.u)) if state.u.size else 0.0
        if rep is not None:
            f = rep.fluxes
            cum["fin"] += f.influx
            cum["fout"] += f.outflux + f.top_outflux
            cum["diss"] += rep.dissipation
            cum["bl2"] += f.boundary_l2
            cum["ein"] += f.in_energy
            cum["eout"] += f.out_energy
            cum["tin"] += f.in_trace
            cum["tout"] += f.out_trace
            cum["top"] += f.top_outflux
            cum["lim"] += f.limited_columns
            rate = boundary_outflow_rate(state.u, atlas, grid)
            cum["ftr"] += 0.5 * rep.dt * (trace[0] + rate)
            trace[0] = rate
        ledger.append((state.t, state.mass(), cum["fin"], cum["ftr"], state.energy(),
                       cum["diss"], mn, rep.cons_correction if rep else 0.0, cum["bl2"]))
        energy.append((state.t, cum["ein"], cum["eout"], cum["tin"], cum["tout"], cum["top"],
                       cum["lim"], cum["fout"]))
        return mn

    record(None)
    snapshot(0)
    n = cfg.n_steps
    for k in range(1, n + 1):
        dt = min(cfg.dt, cfg.T - state.t) if k == n else cfg.dt
        try:
            state, rep = integ.strang_step(state, dt, source, cfg.transport_on,
                                           cfg.scattering_on)
        except Exception as e:  # surface the step index
            raise RunError(f"step {k} (t = {state.t:.6g}): {type(e).__name__}: {e}") from e
        if k == n:
            state.t = cfg.T
        res.reports.append(rep)
        mn = record(rep)
        if not np.all(np.isfinite(state.u)):
            raise RunError(f"step {k}: non-finite values")
        if strict and mn < -1e-6 * u0_sup:
            raise PositivityError(f"step {k}: min u = {mn:.3e} below -1e-6 ||u0||_inf")
        if cfg.snapshot_every > 0 and (k % cfg.snapshot_every == 0 or k == n):
            snapshot(k)
    res.state = state
    res.wall_time = time.perf_counter() - t_wall
    log.info("run finished: %d steps in %.2fs, mass %.6g -> %.6g", n, res.wall_time, m0,
             state.mass())
    if out is not None:
        write_ledger(ledger, out / "ledger.csv")
        write_energy_ledger(energy, out / "energy_fluxes.csv")
        write_manifest(out / "manifest.json", {
            "config_hash": cfg.hash(),
            "versions": software_versions(),
            "wall_time_s": res.wall_time,
            "steps": n,
            "snapshots": snap_files,
            "threads": threads,
            "top_outflux": cum["top"],
            "limited_columns": int(cum["lim"]),
            "u0_sup": u0_sup,
        })
    return res
