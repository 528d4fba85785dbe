"""Command line: run, check, probe and replay.

Exit codes: 0 success, 1 numerical failure (or a failed check), 2 config or
input error.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .config import ParseError, RunConfig, ValidationError, default_config, parse_config
from .diagnostics import (DegenerateWindow, FormatError, InsufficientSnapshots, decay_fit,
                          embedding_check, energy_bound_ratio, energy_ledger_check,
                          fourier_gain_probe, mass_ledger_check, positivity_check)
from .io import read_energy_ledger, read_ledger, read_manifest, read_snapshot
from .runner import PositivityError, RunError, run
from .solver import CflError, SpatialGrid, StiffnessError
from .sphere_geometry import SphereAtlas

EXIT_OK, EXIT_NUMERIC, EXIT_CONFIG = 0, 1, 2


class ConfigError(Exception):
    pass


def _threads(arg) -> int:
    if arg is not None:
        return max(1, int(arg))
    env = os.environ.get("RTE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"RTE_THREADS={env!r} is not an integer") from None
    return 1


def _load_config(path) -> RunConfig:
    if path is None:
        return default_config()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(encoding="utf-8"))


def _table(rows):
    w = max(len(r[0]) for r in rows)
    return "\n".join(f"{k:<{w}}  {v}" for k, v in rows)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_run(args) -> int:
    cfg = _load_config(args.config_opt or args.config)
    out = Path(args.output_dir or cfg.output_dir)
    res = run(cfg, output_dir=out, threads=_threads(args.threads),
              strict=True if args.strict else None)
    led = res.ledger
    _, mass_rel = mass_ledger_check(led)
    print(_table([
        ("output", str(out)),
        ("steps", str(cfg.n_steps)),
        ("wall time [s]", f"{res.wall_time:.2f}"),
        ("final mass", f"{led['mass'][-1]:.10g}"),
        ("final energy", f"{led['l2_energy'][-1]:.10g}"),
        ("mass ledger residual / m(0)", f"{mass_rel:.3e}"),
        ("min u", f"{np.min(led['min_u']):.3e}"),
    ]))
    return EXIT_OK


def cmd_check(args) -> int:
    from .checks import run_checks

    cfg = _load_config(args.config_opt or args.config)
    only = None
    if args.only:
        try:
            only = sorted({int(x) for x in args.only.split(",") if x.strip()})
        except ValueError:
            raise ConfigError(f"--only expects comma separated criterion numbers, got {args.only!r}") from None
        bad = [k for k in only if not 1 <= k <= 12]
        if bad:
            raise ConfigError(f"unknown criteria {bad}")
    results = list(run_checks(cfg, only, threads=_threads(args.threads),
                              workdir=args.workdir, log=print))
    n_ok = sum(r.passed for r in results)
    print(f"{n_ok}/{len(results)} suites passed")
    if args.report:
        Path(args.report).write_text(json.dumps(
            [dict(number=r.number, name=r.name, passed=r.passed, summary=r.summary,
                  seconds=r.seconds, details=r.details) for r in results],
            indent=2, default=_json_default) + "\n", encoding="utf-8")
    return EXIT_OK if n_ok == len(results) else EXIT_NUMERIC


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    return str(o)


def _run_dir(path) -> Path:
    d = Path(path)
    if not d.is_dir():
        raise ConfigError(f"run directory not found: {d}")
    return d


def cmd_probe(args) -> int:
    d = _run_dir(args.run_dir)
    cfg = _load_config(d / "config.cfg")
    snaps = sorted((d / "snapshots").glob("*.rteh")) if (d / "snapshots").is_dir() else []
    if len(snaps) < 2:
        raise InsufficientSnapshots(f"insufficient snapshots in {d}: found {len(snaps)}, need 2")
    loaded = [read_snapshot(p) for p in snaps]
    atlas = SphereAtlas(cfg.L, cfg.N)
    grid = SpatialGrid(cfg.mode, cfg.X_max, cfg.M, cfg.Xbar, cfg.Mbar)
    if cfg.mode != "slab":
        raise ConfigError("probe supports slab runs only")
    pairs = [(sn.t, sn.u) for sn in loaded]
    rep = fourier_gain_probe(pairs, cfg.s, grid.dx, atlas, T=cfg.T)
    report = {"fourier_gain": rep.as_dict()}
    rows = [("beta(0)", f"{rep.beta_initial:.4f}"),
            ("beta(t_last)", f"{rep.beta[-1]:.4f}"),
            ("s0 half-space / whole-space", f"{rep.s0_half_space:.4f} / {rep.s0_whole_space:.4f}"),
            ("gain declared", str(rep.gain_declared))]
    led_path = d / "ledger.csv"
    if led_path.is_file():
        led = read_ledger(led_path)
        try:
            fit = decay_fit(led, (cfg.T / 4, cfg.T))
            report["decay_fit"] = dict(t_a=fit.t_a, t_b=fit.t_b, p_hat=fit.p_hat, A=fit.A,
                                       residual=fit.residual, omega_slot=fit.omega_slot)
            rows += [("decay p_hat", f"{fit.p_hat:.4f}"),
                     ("decay fit residual", f"{fit.residual:.2%}")]
        except DegenerateWindow as e:
            report["decay_fit"] = {"error": str(e)}
            rows.append(("decay fit", f"skipped: {e}"))
    # embedding ratio of the final angular profiles, worst over spatial nodes
    last = loaded[-1].u
    emb = [embedding_check(last[k], cfg.s, atlas) for k in range(last.shape[0])]
    report["embedding_ratio_max"] = float(max(emb))
    rows.append(("max L^p / H^s ratio (final)", f"{max(emb):.4f}"))
    (d / "probe_report.json").write_text(json.dumps(report, indent=2, default=_json_default)
                                         + "\n", encoding="utf-8")
    print(_table(rows))
    return EXIT_OK


def cmd_replay(args) -> int:
    d = _run_dir(args.run_dir)
    led = read_ledger(d / "ledger.csv")
    energy = read_energy_ledger(d / "energy_fluxes.csv")
    u0_sup = math.nan
    if (d / "manifest.json").is_file():
        u0_sup = float(read_manifest(d / "manifest.json").get("u0_sup", math.nan))
    _, mass_rel = mass_ledger_check(led)
    ec = energy_ledger_check(led, energy)
    pos = positivity_check(led, u0_sup) if math.isfinite(u0_sup) else float(np.min(led["min_u"]))
    ratio = energy_bound_ratio(led)
    checks = [("mass ledger residual / m(0)", mass_rel, mass_rel <= 1e-2),
              ("max energy slack / E(0)", ec.relative, ec.relative <= 1e-8),
              ("min u / ||u0||_inf", pos, pos >= -1e-6),
              ("energy bound ratio", ratio, math.isfinite(ratio))]
    for name, val, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name:<30} {val:.3e}")
    return EXIT_OK if all(c[2] for c in checks) else EXIT_NUMERIC


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rte-halfspace", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("config", nargs="?", help="config file (defaults if omitted)")
            sp.add_argument("--config", dest="config_opt", help="config file")
        sp.add_argument("--threads", type=int, help="worker threads (env RTE_THREADS)")

    sp = sub.add_parser("run", help="integrate a configuration")
    common(sp)
    sp.add_argument("--output-dir", help="run directory (overrides [output] output_dir)")
    sp.add_argument("--strict", action="store_true", help="abort on positivity violations")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("check", help="run the invariant and acceptance suites")
    common(sp)
    sp.add_argument("--only", help="comma separated criterion numbers")
    sp.add_argument("--report", help="write a JSON report here")
    sp.add_argument("--workdir", help="scratch directory for the determinism suite")
    sp.add_argument("--output-dir", help=argparse.SUPPRESS)
    sp.add_argument("--strict", action="store_true", help=argparse.SUPPRESS)
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("probe", help="diagnostics on a stored run")
    sp.add_argument("run_dir")
    sp.set_defaults(func=cmd_probe)

    sp = sub.add_parser("replay", help="ledger checks from the CSV files alone")
    sp.add_argument("run_dir")
    sp.set_defaults(func=cmd_replay)
    return p


def cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse usage errors
        return EXIT_CONFIG if e.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InsufficientSnapshots as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, ValidationError, ConfigError, FormatError, OSError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (RunError, PositivityError, StiffnessError, CflError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


def main():
    sys.exit(cli())


if __name__ == "__main__":
    main()
