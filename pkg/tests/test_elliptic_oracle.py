import math

import numpy as np
import pytest

from gravlab.dirichlet_neumann import WaveState, ZConfig, dn_fixed_point, dn_taylor3
from gravlab.elliptic_oracle import OracleError, StripProblem, oracle_dn, oracle_G, solve_strip
from gravlab.spectral_core import Grid, SpectralField, abs_deriv

G64 = Grid(64, 2 * math.pi)


def st(h, psi, grid=G64):
    return WaveState.from_functions(grid, h, psi)


def rel(a, b):
    return (a - b).norm() / b.norm()


@pytest.mark.parametrize("lifted", [True, False])
def test_flat_cos(lifted):
    s = st(lambda x: 0 * x, np.cos)
    G = oracle_G(StripProblem(s, 8.0, 128, lifted=lifted), richardson=False)
    assert rel(G, s.psi) <= (1e-12 if lifted else 1e-3)


def test_flat_cos4_second_order():
    s = st(lambda x: 0 * x, lambda x: np.cos(4 * x))
    errs = [rel(oracle_G(StripProblem(s, 4.0, nz, lifted=False), richardson=False), abs_deriv(s.psi))
            for nz in (64, 128)]
    assert errs[1] <= 1e-2
    assert math.log2(errs[0] / errs[1]) == pytest.approx(2.0, abs=0.2)


def test_manufactured_solution():
    # phi* = e^{2z} cos 2x is harmonic; its gradient must be reproduced level by level
    s = st(lambda x: 0 * x, lambda x: np.cos(2 * x))
    errs = []
    for nz in (64, 128):
        prof = solve_strip(StripProblem(s, 6.0, nz, lifted=False))
        ref_z = 2 * np.exp(2 * prof.zgrid)[:, None] * np.cos(2 * G64.x)[None, :]
        got = np.array([SpectralField(G64, c, True).values for c in prof.phi_z])
        errs.append(np.max(np.abs(got - ref_z)))
    assert errs[1] <= 1e-2
    assert math.log2(errs[0] / errs[1]) == pytest.approx(2.0, abs=0.3)


def test_neumann_bottom():
    s = st(lambda x: 0 * x, np.cos)
    G = oracle_G(StripProblem(s, 20.0, 256, bottom_bc="neumann", lifted=False), richardson=False)
    assert rel(G, s.psi) <= 1e-2


def test_agrees_with_fixed_point():
    eps = 1e-2
    s = st(lambda x: eps * np.cos(2 * x), lambda x: eps * np.sin(x))
    Go = oracle_G(StripProblem(s, 8.0, 256))
    _, rf = dn_fixed_point(s, ZConfig(8, 256), with_coefficient=False)
    assert rel(rf.G_psi, Go) <= 1e-6


def test_nz_doubling_rate():
    eps = 1e-2
    s = st(lambda x: eps * np.cos(2 * x), lambda x: eps * np.sin(x))
    ref = oracle_G(StripProblem(s, 8.0, 512))
    errs = [rel(oracle_G(StripProblem(s, 8.0, nz), richardson=False), ref) for nz in (64, 128)]
    assert math.log2(errs[0] / errs[1]) == pytest.approx(2.0, abs=0.2)


def test_oracle_vs_taylor_slope():
    gaps = []
    for eps in (1e-2, 5e-3):
        s = st(lambda x: eps * np.cos(2 * x), lambda x: eps * np.sin(x))
        gaps.append((dn_taylor3(s, with_coefficient=False).G_psi - oracle_G(StripProblem(s, 8.0, 256))).norm())
    assert math.log2(gaps[0] / gaps[1]) == pytest.approx(4.0, abs=0.3)


def test_oracle_dn_result():
    s = st(lambda x: 0 * x, np.cos)
    r = oracle_dn(StripProblem(s, 8.0, 64), with_coefficient=True)
    assert r.method == "oracle"
    assert rel(r.B, s.psi) <= 1e-12
    assert r.a is not None and np.all(r.a.values > 0)


def test_oracle_self_adjoint():
    h = SpectralField.from_function(G64, lambda x: 0.01 * np.cos(2 * x))
    p1 = SpectralField.from_function(G64, np.sin)
    p2 = SpectralField.from_function(G64, lambda x: np.cos(3 * x))
    G1 = oracle_G(StripProblem(WaveState(h, p1), 8.0, 256))
    G2 = oracle_G(StripProblem(WaveState(h, p2), 8.0, 256))
    defect = abs(p1.inner(G2) - p2.inner(G1)) / (p1.norm() * p2.norm())
    # Richardson-extrapolated discretization error is far below 1e-8 here
    assert defect <= 1e-8


def test_rejects_bad_problems():
    s = st(lambda x: 0 * x, np.cos)
    with pytest.raises(ValueError):
        StripProblem(s, -1.0, 64)
    with pytest.raises(ValueError):
        StripProblem(s, 8.0, 64, bottom_bc="wall")
    with pytest.raises(ValueError):
        StripProblem(s, 8.0, 64, bottom_bc="neumann", lifted=True)
    with pytest.raises(OracleError, match="steepness"):
        solve_strip(StripProblem(st(lambda x: 0.5 * np.cos(x), np.sin), 8.0, 64))
