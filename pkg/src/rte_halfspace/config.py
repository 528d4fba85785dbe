"""Flat sectioned run configuration.

    [model]
    s = 0.5
    ...

Every key has a documented default; unknown sections or keys are errors.
:func:`serialize_config` writes the canonical form (fixed section and key
order, ``repr`` floats), and parse/serialize round-trips byte for byte.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, fields, replace


class ParseError(ValueError):
    def __init__(self, msg, line=None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


class ValidationError(ValueError):
    pass


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


# section -> ordered (key, type, default)
SCHEMA = {
    "model": (("s", float, 0.5), ("b1", float, 1.0), ("h_preset", str, "zero"),
              ("h_params", tuple, ()), ("conservation_projection", bool, True),
              ("scatter_residual", float, 1e-10), ("max_iters", int, 200)),
    "atlas": (("L", float, 16.0), ("N", int, 128)),
    "grid": (("mode", str, "slab"), ("X_max", float, 6.0), ("M", int, 64),
             ("Xbar", float, 1.0), ("Mbar", int, 8)),
    "time": (("dt", float, 0.01), ("T", float, 2.0), ("snapshot_every", int, 0),
             ("transport_on", bool, True), ("scattering_on", bool, True),
             ("interpolation", str, "pchip")),
    "ic": (("preset", str, "gaussian"), ("params", tuple, (1.0, 2.0, 0.2, 0.0))),
    "bc": (("preset", str, "zero"), ("params", tuple, ()), ("t_on", float, 0.0),
           ("t_off", float, math.inf), ("ramp", float, 0.0)),
    "output": (("output_dir", str, "run"), ("strict_positivity", bool, False),
               ("seed", int, 0)),
}


@dataclass(frozen=True)
class RunConfig:
    s: float = 0.5
    b1: float = 1.0
    h_preset: str = "zero"
    h_params: tuple = ()
    conservation_projection: bool = True
    scatter_residual: float = 1e-10
    max_iters: int = 200
    L: float = 16.0
    N: int = 128
    mode: str = "slab"
    X_max: float = 6.0
    M: int = 64
    Xbar: float = 1.0
    Mbar: int = 8
    dt: float = 0.01
    T: float = 2.0
    snapshot_every: int = 0
    transport_on: bool = True
    scattering_on: bool = True
    interpolation: str = "pchip"
    u0_preset: str = "gaussian"
    u0_params: tuple = (1.0, 2.0, 0.2, 0.0)
    g_preset: str = "zero"
    g_params: tuple = ()
    t_on: float = 0.0
    t_off: float = math.inf
    ramp: float = 0.0
    output_dir: str = "run"
    strict_positivity: bool = False
    seed: int = 0

    def with_(self, **kw) -> "RunConfig":
        return validate(replace(self, **kw))

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.T / self.dt - 1e-9)) if self.T > 0 else 0

    def hash(self) -> str:
        return hashlib.sha256(serialize_config(self).encode()).hexdigest()


# config attribute for (section, key)
_ATTR = {("ic", "preset"): "u0_preset", ("ic", "params"): "u0_params",
         ("bc", "preset"): "g_preset", ("bc", "params"): "g_params"}


def _attr(section, key):
    return _ATTR.get((section, key), key)


def _convert(raw: str, typ, line):
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is tuple:
            return tuple(float(x) for x in raw.split(",") if x.strip()) if raw else ()
        return raw
    except ValueError:
        raise ParseError(f"cannot read {raw!r} as {typ.__name__}", line) from None


def parse_config(text: str) -> RunConfig:
    """Parse and validate a sectioned ``key = value`` config."""
    values = {}
    section = None
    seen = set()
    for no, line in enumerate(text.splitlines(), 1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if s.startswith("["):
            if not s.endswith("]"):
                raise ParseError(f"malformed section header {s!r}", no)
            section = s[1:-1].strip()
            if section not in SCHEMA:
                raise ParseError(f"unknown section [{section}]", no)
            continue
        if "=" not in s:
            raise ParseError(f"expected 'key = value', got {s!r}", no)
        if section is None:
            raise ParseError("key outside any section", no)
        key, raw = (p.strip() for p in s.split("=", 1))
        spec = {k: (t, d) for k, t, d in SCHEMA[section]}
        if key not in spec:
            raise ParseError(f"unknown key {key!r} in [{section}]", no)
        if (section, key) in seen:
            raise ParseError(f"duplicate key {key!r} in [{section}]", no)
        seen.add((section, key))
        values[_attr(section, key)] = _convert(raw, spec[key][0], no)
    return validate(RunConfig(**values))


def validate(cfg: RunConfig) -> RunConfig:
    """Check every invariant; raises ValidationError naming the violated one."""
    def bad(msg):
        raise ValidationError(msg)

    if not (0 < cfg.s < 1):
        bad(f"s = {cfg.s} outside the admissible interval (0, min(1, (d-1)/2)) = (0, 1) for d = 3")
    if not cfg.b1 > 0:
        bad("b1 must be positive")
    if cfg.h_preset not in ("zero", "const", "power"):
        bad(f"unknown h_preset {cfg.h_preset!r}")
    if cfg.h_preset == "const" and cfg.h_params and cfg.h_params[0] < 0:
        bad("h constant must be nonnegative")
    if cfg.h_preset == "power" and len(cfg.h_params) > 1 and (
            cfg.h_params[1] != int(cfg.h_params[1]) or cfg.h_params[1] < 0):
        bad("h power exponent must be a nonnegative integer")
    if not cfg.L > 1:
        bad("atlas L must exceed 1")
    if cfg.N < 2 or cfg.N & (cfg.N - 1):
        bad(f"N = {cfg.N} must be a power of two")
    if cfg.mode not in ("slab", "box"):
        bad(f"grid mode must be slab or box, got {cfg.mode!r}")
    if cfg.M < 3 or not cfg.X_max > 0:
        bad("grid needs M >= 3 and X_max > 0")
    if cfg.mode == "box" and (cfg.Mbar < 2 or not cfg.Xbar > 0):
        bad("box grid needs Mbar >= 2 and Xbar > 0")
    if not cfg.dt > 0:
        bad("dt must be positive")
    if not cfg.T >= 0 or not math.isfinite(cfg.T):
        bad("T must be finite and nonnegative")
    if cfg.snapshot_every < 0:
        bad("snapshot_every must be nonnegative")
    if cfg.interpolation not in ("pchip", "linear"):
        bad("interpolation must be pchip or linear")
    if cfg.u0_preset not in ("zero", "uniform", "gaussian", "indicator"):
        bad(f"unknown ic preset {cfg.u0_preset!r}")
    if cfg.g_preset not in ("zero", "isotropic", "cosine", "beam"):
        bad(f"unknown bc preset {cfg.g_preset!r}")
    if cfg.g_params and cfg.g_params[0] < 0:
        bad("bc amplitude must be nonnegative")
    if not cfg.t_off >= cfg.t_on:
        bad("bc window needs t_off >= t_on")
    if cfg.ramp < 0:
        bad("bc ramp must be nonnegative")
    if not cfg.scatter_residual > 0 or cfg.max_iters < 1:
        bad("scatter tolerances must be positive")
    return cfg


def serialize_config(cfg: RunConfig) -> str:
    """Canonical text form."""
    out = []
    for section, keys in SCHEMA.items():
        out.append(f"[{section}]")
        for key, _, _ in keys:
            out.append(f"{key} = {_fmt(getattr(cfg, _attr(section, key)))}")
        out.append("")
    return "\n".join(out)


def default_config(**kw) -> RunConfig:
    return validate(replace(RunConfig(), **kw))


CONFIG_FIELDS = tuple(f.name for f in fields(RunConfig))
