import json
import math
import struct

import numpy as np
import pytest

from gravlab.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_OK, load_config, main, ConfigError
from gravlab.runio import read_csv, read_states

FLAT = """
[grid]
n_points = 32
length = 6.283185307179586
[time]
dt = 0.1
t_final = 0.5
[diagnostics]
monitor = 1
[experiment]
initial = flat
"""

STANDING = """
[grid]
n_points = 64
[time]
dt = 0.1
t_final = 1.0
output_stride = 2
[diagnostics]
monitor = 1 2
check_conservation = true
[experiment]
initial = standing
amplitude = 0.01
"""


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def simulate(tmp_path, text, out="out", *extra):
    return main(["simulate", "--config", write(tmp_path, text), "--out", str(tmp_path / out), *extra])


def test_flat_config_zero_trajectory(tmp_path):
    assert simulate(tmp_path, FLAT) == EXIT_OK
    states = read_states(tmp_path / "out" / "states.bin")
    assert len(states) == 6
    assert all(not s.h.coeffs.any() and not s.psi.coeffs.any() for s in states)
    header, rows = read_csv(tmp_path / "out" / "diagnostics.csv")
    assert header[0] == "t"
    assert all(float(v) == 0 for r in rows for v in r[1:])
    m = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert m["command"] == "simulate" and m["checks"] == {}


def test_negative_dt_names_key(tmp_path, capsys):
    assert simulate(tmp_path, FLAT.replace("dt = 0.1", "dt = -0.1")) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "dt" in err and "run.ini:6" in err


def test_unknown_key_is_error(tmp_path, capsys):
    assert simulate(tmp_path, FLAT + "typo_key = 3\n") == EXIT_CONFIG
    assert "typo_key" in capsys.readouterr().err


def test_unknown_section_is_error(tmp_path):
    with pytest.raises(ConfigError, match="unknown section"):
        load_config(write(tmp_path, FLAT + "[extra]\nx = 1\n"))


def test_bad_value(tmp_path, capsys):
    assert simulate(tmp_path, FLAT.replace("n_points = 32", "n_points = many")) == EXIT_CONFIG
    assert "n_points" in capsys.readouterr().err


def test_usage_error():
    assert main(["simulate"]) == EXIT_CONFIG


def test_config_digest(tmp_path):
    cfg = load_config(write(tmp_path, FLAT))
    import hashlib

    assert cfg.digest == hashlib.sha256(FLAT.encode()).hexdigest()


def test_standing_conservation_and_determinism(tmp_path):
    assert simulate(tmp_path, STANDING, "a") == EXIT_OK
    assert simulate(tmp_path, STANDING, "b") == EXIT_OK
    for name in ("states.bin", "diagnostics.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    m = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert m["checks"]["hamiltonian_drift"]["pass"]
    times = [s.t for s in read_states(tmp_path / "a" / "states.bin")]
    assert times == pytest.approx([0.0, 0.2, 0.4, 0.6, 0.8, 1.0])


def test_resume_after_kill(tmp_path):
    assert simulate(tmp_path, STANDING, "full") == EXIT_OK
    full = tmp_path / "full"
    part = tmp_path / "part"
    part.mkdir()
    # a killed run: three snapshots and a torn fourth record, diagnostics for three
    data = (full / "states.bin").read_bytes()
    rec = len(data) // 6
    (part / "states.bin").write_bytes(data[: 3 * rec + rec // 2])
    lines = (full / "diagnostics.csv").read_text().splitlines(keepends=True)
    (part / "diagnostics.csv").write_text("".join(lines[:4]))
    assert simulate(tmp_path, STANDING, "part", "--resume") == EXIT_OK
    assert (part / "states.bin").read_bytes() == data
    assert (part / "diagnostics.csv").read_bytes() == (full / "diagnostics.csv").read_bytes()


def test_gravlab_out_overrides(tmp_path, monkeypatch):
    env_out = tmp_path / "env"
    monkeypatch.setenv("GRAVLAB_OUT", str(env_out))
    assert simulate(tmp_path, FLAT, "ignored") == EXIT_OK
    assert (env_out / "states.bin").exists()
    assert not (tmp_path / "ignored").exists()


def test_states_bin_layout(tmp_path):
    assert simulate(tmp_path, STANDING) == EXIT_OK
    data = (tmp_path / "out" / "states.bin").read_bytes()
    n, L, t = struct.unpack_from("<qdd", data, 0)
    assert (n, L, t) == (64, 2 * math.pi, 0.0)
    body = np.frombuffer(data, "<f8", count=4 * n, offset=24)
    h = body[: 2 * n : 2] + 1j * body[1 : 2 * n : 2]
    # h = 0.01 (cos x + cos 2x / 2): coefficient L/2 * 0.01 at mode 1
    assert h[1] == pytest.approx(0.01 * math.pi, rel=1e-12)
    assert len(data) == 6 * (24 + 32 * n)


def test_scatter_diag_zero_data(tmp_path):
    text = FLAT.replace("initial = flat", "initial = packet\namplitude = 0")
    rc = main(["scatter-diag", "--config", write(tmp_path, text), "--out", str(tmp_path / "sd")])
    assert rc == EXIT_OK
    assert json.loads((tmp_path / "sd" / "report.json").read_text()) == {"empty": True}


def test_dn_check_small(tmp_path):
    text = """
[grid]
n_points = 64
[dn]
nz = 256
[experiment]
eps = 0.01 0.005
"""
    rc = main(["dn-check", "--config", write(tmp_path, text), "--out", str(tmp_path / "dn"), "--threads", "2"])
    assert rc == EXIT_OK
    header, rows = read_csv(tmp_path / "dn" / "dn_check.csv")
    assert header == ["eps", "gap_taylor_oracle", "gap_fixed_oracle", "slope_taylor", "slope_fixed"]
    assert float(rows[1][3]) == pytest.approx(4.0, abs=0.3)


def test_symbols_verify_small(tmp_path):
    text = """
[experiment]
samples = 2000
phase_samples = 2000
bound_samples = 4
"""
    rc = main(["symbols-verify", "--config", write(tmp_path, text), "--out", str(tmp_path / "sv"), "--seed", "3"])
    assert rc in (EXIT_OK, EXIT_CHECK)
    m = json.loads((tmp_path / "sv" / "manifest.json").read_text())
    assert m["checks"]["residual_1100"]["pass"]
    assert m["seed"] == 3
