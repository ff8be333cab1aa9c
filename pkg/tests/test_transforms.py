import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gravlab.dirichlet_neumann import WaveState
from gravlab.experiments import linear_U
from gravlab.spectral_core import Grid, SpectralField, abs_deriv, bilinear_apply
from gravlab.transforms import (
    NormalFormed,
    PhaseFunction,
    SymbolTable,
    apply_normal_form,
    build_normal_form_symbols,
    good_unknowns,
    phase_bound_check,
    profile,
    q1_1,
    q2,
    q3_complete,
    q3_bare,
    quadratic_rhs,
    symbol_bound_constants,
)

G64 = Grid(64, 2 * math.pi)
BASE = WaveState.from_functions(G64, lambda x: np.cos(x) + 0.5 * np.sin(2 * x),
                                lambda x: 0.7 * np.sin(x) + 0.3 * np.cos(3 * x))


def slope(fn, eps=(0.02, 0.01)):
    a, b = (fn(BASE.scaled(e)) for e in eps)
    return math.log2(a / b)


# ------------------------------------------------------------ symbols


def test_q2_point_value():
    assert q2(1.0, 2.0**-12) == pytest.approx(1.2208e-4, rel=1e-4)
    assert q2(1.0, 2.0**-12) == pytest.approx(math.sqrt(1 + 2.0**-12) * 2.0**-12 / 2, rel=1e-14)


@pytest.mark.parametrize("fn", [q1_1, q2, q3_bare, q3_complete])
def test_symbols_vanish_at_zero_eta(fn):
    z = np.array([-3.0, -0.5, 0.25, 7.0])
    assert np.all(fn(z, np.zeros_like(z)) == 0)


def test_denominator_cases():
    t = SymbolTable()
    assert t.denominator(1.0, 2.0) == pytest.approx(8.0)
    assert not t.excluded(1.0, 2.0)
    assert t.excluded(1.0, -1.0)
    before = t.exclusions
    assert t.b(np.array(1.0), np.array(-1.0)) == 0.0
    assert t.exclusions == before + 1


@pytest.mark.parametrize("variant", ["bare", "complete"])
def test_system_residuals(variant):
    t = SymbolTable(variant)
    rng = np.random.default_rng(7)
    n = 10_000
    z = rng.uniform(-10, 10, n) * 2.0 ** rng.integers(-10, 5, n)
    e = rng.uniform(-10, 10, n) * 2.0 ** rng.integers(-10, 5, n)
    ok = ~t.excluded(z, e)
    r1, r2, r3, scale = t.residuals(z[ok], e[ok])
    worst = max(float(np.max(np.abs(r) / scale)) for r in (r1, r2, r3))
    assert worst <= 1e-12


def test_variant_checked():
    with pytest.raises(ValueError):
        SymbolTable("other")


def test_build_with_cache():
    t = build_normal_form_symbols(Grid(16, 2 * math.pi), "complete", cache=True)
    assert t.variant == "complete"
    assert t["a1"].cached_column(Grid(16, 2 * math.pi), 3) is not None


def test_export_csv(tmp_path):
    g = Grid(8, 2 * math.pi)
    p = tmp_path / "sym.csv"
    SymbolTable().export_csv(p, g, names=("q2", "b"))
    with open(p) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["zeta", "eta", "q2_re", "q2_im", "b_re", "b_im"]
    assert len(rows) == 1 + 64


# ------------------------------------------------------ good unknowns


def test_good_unknowns_zero():
    gu = good_unknowns(WaveState.zero(G64))
    for f in (gu.omega, gu.U1, gu.U2):
        assert not f.coeffs.any()


def test_good_unknowns_constant_h():
    h = SpectralField.from_values(G64, np.full(64, 0.01))
    gu = good_unknowns(WaveState(h, SpectralField.zeros(G64)))
    assert np.max(np.abs(gu.omega.coeffs)) <= 1e-15
    assert np.max(np.abs(gu.U2.coeffs)) <= 1e-15
    assert np.allclose(gu.U1.coeffs, h.coeffs, atol=1e-15)


def test_good_unknowns_flat_state():
    psi = SpectralField.from_function(G64, lambda x: np.sin(x) + 0.4 * np.cos(2 * x))

    def u1(eps):
        return good_unknowns(WaveState(SpectralField.zeros(G64), psi * eps)).U1.norm()

    def u2(eps):
        gu = good_unknowns(WaveState(SpectralField.zeros(G64), psi * eps))
        return (gu.U2 - abs_deriv(psi * eps, 0.5)).norm()

    # h = 0 leaves U1 = T_alpha 0 = 0 and omega = psi exactly
    assert u1(0.01) == 0.0
    assert u2(0.01) <= 1e-16


def two_scale(eps, A=0.03, k=1100):
    # T_alpha h only sees alpha far below the frequency of h, so h needs a mode
    # ~2^10 above the low one. psi amplitudes are set so the quadratic zero mode
    # of alpha cancels (h and psi contribute -5/16 and +1/2 times |k h_k|^2);
    # otherwise T_{alpha_0} h, which is cubic, swamps the quadratic term.
    g = Grid(4096, 2 * math.pi)
    b = math.sqrt(0.625)
    return WaveState.from_functions(g, lambda x: eps * (np.cos(x) + A * np.cos(k * x)),
                                    lambda x: b * eps * (np.sin(x) + A * np.sin(k * x) / math.sqrt(k)))


def test_good_unknowns_quadratic_deviation():
    def two_scale_slope(fn):
        a, b = (fn(two_scale(e)) for e in (0.004, 0.002))
        return math.log2(a / b)

    assert two_scale_slope(lambda s: (good_unknowns(s).U1 - s.h).norm()) == pytest.approx(2.0, abs=0.2)
    assert two_scale_slope(lambda s: (good_unknowns(s).U2 - abs_deriv(s.psi, 0.5)).norm()) == pytest.approx(
        2.0, abs=0.2)


def test_good_unknowns_single_scale_U1_is_cubic():
    # no frequency separation: only the (quadratic) mean of alpha acts on h
    assert slope(lambda s: (good_unknowns(s).U1 - s.h).norm()) == pytest.approx(3.0, abs=0.2)


def test_reality():
    s = BASE.scaled(0.02)
    gu = good_unknowns(s)
    nf = apply_normal_form(gu, SymbolTable())
    for f in (gu.U1, gu.U2, nf.V1, nf.V2):
        assert f.real
        c = f.coeffs
        assert np.max(np.abs(c[(-np.arange(64)) % 64] - np.conj(c))) <= 1e-12 * np.max(np.abs(c))


def test_quadratic_rhs_shapes():
    gu = good_unknowns(BASE.scaled(0.01))
    Q1, Q23 = quadratic_rhs(gu, SymbolTable())
    assert Q1.real and Q23.real
    assert slope(lambda s: quadratic_rhs(good_unknowns(s), SymbolTable())[0].norm()) == pytest.approx(2.0, abs=0.1)


# -------------------------------------------------------- normal form


def test_normal_form_zero():
    gu = good_unknowns(WaveState.zero(G64))
    nf = apply_normal_form(gu, SymbolTable())
    assert not nf.V1.coeffs.any() and not nf.V2.coeffs.any()


def test_normal_form_quadratic_correction():
    t = SymbolTable()

    def dev(s):
        gu = good_unknowns(s)
        nf = apply_normal_form(gu, t)
        return math.hypot((nf.V1 - gu.U1).norm(), (nf.V2 - gu.U2).norm())

    assert slope(dev) == pytest.approx(2.0, abs=0.2)


def test_symmetric_operators_are_symmetrized():
    t = SymbolTable()
    gu = good_unknowns(BASE.scaled(0.02))
    nf = apply_normal_form(gu, t)
    A = bilinear_apply(t["a1"], gu.U1, gu.U1) + bilinear_apply(t["a2"], gu.U2, gu.U2)
    swapped = bilinear_apply(lambda z, e: t.a1(e, z), gu.U1, gu.U1) + bilinear_apply(
        lambda z, e: t.a2(e, z), gu.U2, gu.U2)
    # for equal arguments the swap average equals either order
    assert np.allclose((nf.V1 - gu.U1).coeffs, A.coeffs, atol=1e-15)
    assert np.allclose(A.coeffs, swapped.coeffs, atol=1e-15)


# ------------------------------------------------------------ profile


def test_profile_t0_and_modulus():
    gu = good_unknowns(BASE.scaled(0.02))
    nf = apply_normal_form(gu, SymbolTable())
    assert np.array_equal(profile(nf, 0.0).coeffs, nf.V.coeffs)
    f = profile(nf, 3.7)
    assert np.allclose(np.abs(f.coeffs), np.abs(nf.V.coeffs), rtol=1e-14, atol=0)


def test_profile_constant_under_linear_flow():
    s = BASE.scaled(0.01)
    f0 = profile(linear_U(s, 0.0), 0.0)
    for t in (1.0, 13.0, 55.5):
        ft = profile(linear_U(s, t), t)
        assert np.max(np.abs(ft.coeffs - f0.coeffs)) <= 1e-10


def test_normal_formed_V():
    g = Grid(8, 1.0)
    nf = NormalFormed(SpectralField.from_values(g, np.ones(8)), SpectralField.from_values(g, np.arange(8.0)))
    assert np.allclose(nf.V.values, 1 + 1j * np.arange(8.0))


# ------------------------------------------------------------- phases


@settings(max_examples=100, deadline=None)
@given(st.sampled_from([(1, 1, 1), (1, 1, -1), (1, -1, -1), (-1, -1, -1)]),
       st.floats(-50, 50), st.floats(-50, 50), st.floats(-50, 50))
def test_phase_global_sign_flip(signs, xi, eta, sigma):
    phi = PhaseFunction(signs)
    # Lambda is even, so a global sign flip leaves every term unchanged
    assert phi(-xi, -eta, -sigma) == phi(xi, eta, sigma)


def test_all_minus_phase_dominates_lambda():
    rng = np.random.default_rng(3)
    xi, eta, sigma = rng.uniform(-20, 20, (3, 1000))
    phi = PhaseFunction((-1, -1, -1))
    assert np.all(phi(xi, eta, sigma) >= np.sqrt(np.abs(xi)) - 1e-15)


def test_phase_bound_minima_positive():
    rep = phase_bound_check(2000, seed=1)
    d = rep.as_dict()
    assert d["samples"] == 2000
    assert all(d[k] > 0 for k in ("phase_98", "phase_5400", "phase_9970"))


def test_symbol_bound_report_small():
    rep = symbol_bound_constants(SymbolTable("complete"), samples=6, pairs=[(0, -6), (-6, 0)])
    d = rep.as_dict()
    assert d["pairs"] == 2 and d["samples"] == 6
    assert all(np.isfinite(d[k]) and d[k] > 0 for k in ("C_q", "C_cancel", "C_nf"))
