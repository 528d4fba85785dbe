import math
import struct

import numpy as np
import pytest

from rte_halfspace.config import (ParseError, RunConfig, ValidationError, parse_config,
                                  serialize_config)
from rte_halfspace.diagnostics import EnergyLedger, FormatError, RunLedger
from rte_halfspace.io import (read_energy_ledger, read_ledger, read_manifest, read_snapshot,
                              write_energy_ledger, write_ledger, write_manifest,
                              write_snapshot)


def test_empty_model_section_defaults():
    cfg = parse_config("[model]\n")
    assert cfg.s == 0.5 and cfg.b1 == 1.0 and cfg.h_preset == "zero"
    assert cfg == RunConfig()


def test_s_out_of_range():
    with pytest.raises(ValidationError, match=r"\(0, 1\)"):
        parse_config("[model]\ns = 1.5\n")


def test_round_trip_bytes():
    text = serialize_config(RunConfig(s=0.25, h_preset="power", h_params=(0.5, 2.0), N=64,
                                      g_preset="beam", g_params=(1.0, 4.0, 0.0, 0.6, 0.8),
                                      t_on=0.1, t_off=0.7, ramp=0.05, snapshot_every=3))
    assert serialize_config(parse_config(text)) == text
    with open("configs/default.cfg", encoding="utf-8") as f:
        default = f.read()
    assert serialize_config(parse_config(default)).strip() == default.strip()
    assert parse_config(default) == RunConfig()


@pytest.mark.parametrize("text, line", [
    ("[model]\ns = 0.5\nbogus = 1\n", 3),
    ("[nosuch]\n", 1),
    ("s = 0.5\n", 1),
    ("[atlas]\nN = many\n", 2),
    ("[atlas]\nN = 64\nN = 64\n", 3),
    ("[time]\ntransport_on = maybe\n", 2),
    ("[grid\n", 1),
    ("[grid]\nmode slab\n", 2),
])
def test_parse_errors_carry_line(text, line):
    with pytest.raises(ParseError) as e:
        parse_config(text)
    assert e.value.line == line


@pytest.mark.parametrize("text", [
    "[atlas]\nN = 100\n", "[time]\ndt = 0\n", "[time]\nT = -1\n", "[model]\nb1 = 0\n",
    "[bc]\nt_on = 2\nt_off = 1\n", "[time]\ninterpolation = cubic\n",
    "[ic]\npreset = nope\n", "[grid]\nmode = torus\n",
])
def test_validation_errors(text):
    with pytest.raises(ValidationError):
        parse_config(text)


def test_comments_and_inf():
    cfg = parse_config("# header\n[bc]  # inflow\nt_off = inf\nparams = 0.5, 2  # A, k\n")
    assert math.isinf(cfg.t_off) and cfg.g_params == (0.5, 2.0)


def test_config_hash_stable():
    assert RunConfig().hash() == parse_config(serialize_config(RunConfig())).hash()
    assert RunConfig().hash() != RunConfig(dt=0.02).hash()


def ledger_rows(n, seed=0):
    rng = np.random.default_rng(seed)
    t = np.cumsum(rng.uniform(0.001, 0.01, n))
    return [(ti,) + tuple(rng.normal(size=8) * 10.0 ** rng.integers(-12, 3, 8)) for ti in t]


def test_ledger_round_trip(tmp_path):
    led = RunLedger(ledger_rows(1000))
    p = tmp_path / "ledger.csv"
    write_ledger(led, p)
    assert read_ledger(p) == led
    en = EnergyLedger([r[:8] for r in ledger_rows(50, 1)])
    write_energy_ledger(en, tmp_path / "e.csv")
    assert read_energy_ledger(tmp_path / "e.csv") == en


def test_empty_ledger_header_only(tmp_path):
    p = tmp_path / "ledger.csv"
    write_ledger(RunLedger(), p)
    assert p.read_text() == ("t,mass,flux_in,flux_out,l2_energy,hs_dissipation,min_u,"
                             "cons_correction,boundary_l2\n")
    assert len(read_ledger(p)) == 0


def test_ledger_format_errors(tmp_path):
    p = tmp_path / "ledger.csv"
    write_ledger(RunLedger(ledger_rows(5)), p)
    lines = p.read_text().splitlines()
    lines[3], lines[4] = lines[4], lines[3]
    bad = tmp_path / "swapped.csv"
    bad.write_text("\n".join(lines) + "\n")
    with pytest.raises(FormatError):
        read_ledger(bad)
    bad.write_text("t,mass\n0,1\n")
    with pytest.raises(FormatError):
        read_ledger(bad)
    bad.write_text("")
    with pytest.raises(FormatError):
        read_ledger(bad)


def test_snapshot_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    u = rng.normal(size=(5, 8, 8))
    p = tmp_path / "s.rteh"
    write_snapshot(p, u, 0.125, s=0.5, L=4.0, X_max=6.0)
    snap = read_snapshot(p)
    assert np.array_equal(snap.u, u)
    assert (snap.t, snap.M, snap.N, snap.L, snap.X_max, snap.s, snap.mode) == \
        (0.125, 5, 8, 4.0, 6.0, 0.5, "slab")
    # fixed little-endian layout: header then the payload in C order
    data = p.read_bytes()
    assert data[:4] == b"RTEH"
    assert struct.unpack("<d", data[-8:])[0] == u[-1, -1, -1]
    box = rng.normal(size=(2, 2, 3, 4, 4))
    write_snapshot(tmp_path / "b.rteh", box, 1.0, s=0.3, L=2.0, X_max=1.0, mode="box")
    sb = read_snapshot(tmp_path / "b.rteh")
    assert sb.mode == "box" and np.array_equal(sb.u, box)


def test_snapshot_corruption(tmp_path):
    p = tmp_path / "s.rteh"
    write_snapshot(p, np.ones((3, 4, 4)), 0.0, s=0.5, L=4.0, X_max=1.0)
    data = bytearray(p.read_bytes())
    data[-3] ^= 0xFF
    p.write_bytes(bytes(data))
    with pytest.raises(FormatError, match="checksum"):
        read_snapshot(p)
    p.write_bytes(b"NOPE" + bytes(data[4:]))
    with pytest.raises(FormatError, match="magic"):
        read_snapshot(p)
    p.write_bytes(bytes(data[:-8]))
    with pytest.raises(FormatError):
        read_snapshot(p)
    p.write_bytes(b"RT")
    with pytest.raises(FormatError):
        read_snapshot(p)


def test_manifest_round_trip(tmp_path):
    rec = {"config_hash": "ab", "steps": 3, "versions": {"numpy": "x"}}
    write_manifest(tmp_path / "m.json", rec)
    assert read_manifest(tmp_path / "m.json") == rec
