import math

import numpy as np
import pytest

from gravlab.dirichlet_neumann import WaveState
from gravlab.evolution import (
    BlowUpError,
    LinearPropagator,
    LocalizationError,
    SolverConfig,
    Trajectory,
    centered_derivative,
    hamiltonian,
    krasny_filter,
    mass,
    outer_mass_fraction,
    rhs,
    run,
    stencil_states,
    step,
)
from gravlab.experiments import standing_wave
from gravlab.spectral_core import Grid, SpectralField, abs_deriv

TWO_PI = 2 * math.pi
G64 = Grid(64, TWO_PI)


def cfg64(**kw):
    base = dict(n_points=64, length=TWO_PI, dt=0.05, t_final=1.0)
    base.update(kw)
    return SolverConfig(**base)


def dist(a: WaveState, b: WaveState) -> float:
    return math.hypot((a.h - b.h).norm(), (a.psi - b.psi).norm())


# ------------------------------------------------------------- config


@pytest.mark.parametrize("bad", [dict(dt=0.0), dict(dt=-0.1), dict(t_final=-1.0), dict(dn_method="bem"),
                                 dict(output_stride=0), dict(n_points=48)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        cfg64(**bad)


def test_cfl_only_without_integrating_factor():
    cfg64(n_points=512, dt=0.5)
    with pytest.raises(ValueError, match="dt"):
        cfg64(n_points=512, dt=0.5, integrating_factor=False)


# ---------------------------------------------------------------- rhs


def test_rhs_flat_cos():
    s = WaveState.from_functions(G64, lambda x: 0 * x, np.cos)
    ht, pt = rhs(s)
    assert np.max(np.abs(ht.values - np.cos(G64.x))) <= 1e-13
    assert np.max(np.abs(pt.values - 0.5 * np.cos(2 * G64.x))) <= 1e-13


def test_rhs_zero():
    ht, pt = rhs(WaveState.zero(G64))
    assert not ht.coeffs.any() and not pt.coeffs.any()


def test_rhs_linearization_slope():
    base = WaveState.from_functions(G64, lambda x: np.cos(x) + 0.3 * np.sin(2 * x), lambda x: np.sin(x))
    res = []
    for eps in (1e-2, 5e-3):
        s = base.scaled(eps)
        ht, pt = rhs(s)
        lin_h, lin_p = abs_deriv(s.psi), -s.h
        res.append(math.hypot((ht - lin_h).norm(), (pt - lin_p).norm()))
    assert math.log2(res[0] / res[1]) == pytest.approx(2.0, abs=0.2)


# --------------------------------------------------------------- step


def test_step_zero_state():
    s = step(WaveState.zero(G64), 0.1, cfg64())
    assert not s.h.coeffs.any() and not s.psi.coeffs.any()
    assert s.t == pytest.approx(0.1)


def test_linear_mode_exact_period():
    s0 = WaveState.from_functions(G64, lambda x: np.cos(x) + 0.2 * np.cos(4 * x), lambda x: 0.5 * np.sin(x))
    cfg = cfg64(dt=TWO_PI / 100, t_final=TWO_PI, nonlinear=False)
    s = s0
    for _ in range(100):
        s = step(s, cfg.dt, cfg)
    # one period of mode 1; mode 4 has period pi, so both return
    assert dist(s, s0) <= 1e-10


def test_propagator_matches_complex_form():
    prop = LinearPropagator(G64)
    s = WaveState.from_functions(G64, lambda x: np.sin(3 * x), lambda x: np.cos(2 * x))
    tau = 0.37
    hc, pc = prop(s.h.coeffs, s.psi.coeffs, tau)
    lam = np.sqrt(np.abs(G64.xi))
    u0 = s.h.coeffs + 1j * lam * s.psi.coeffs
    u1 = hc + 1j * lam * pc
    assert np.max(np.abs(u1 - np.exp(-1j * tau * lam) * u0)) <= 1e-12


@pytest.mark.parametrize("integrating_factor", [True, False])
def test_time_order_four(integrating_factor):
    s0 = standing_wave(G64, 0.01)
    T = 2.0

    def advance(dt):
        cfg = cfg64(dt=dt, t_final=T, integrating_factor=integrating_factor, krasny_floor=0.0)
        s = s0
        for _ in range(int(round(T / dt))):
            s = step(s, dt, cfg)
        return s

    dts = [0.2, 0.1, 0.05]
    ref = advance(dts[-1] / 8)
    errs = [dist(advance(dt), ref) for dt in dts]
    slopes = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert slopes[-1] == pytest.approx(4.0, abs=0.3)


def test_time_reversal():
    s0 = standing_wave(G64, 0.01)
    cfg = cfg64(krasny_floor=0.0)
    fwd = step(step(s0, 0.05, cfg), -0.05, cfg)
    assert dist(fwd, s0) <= 1e-9


def test_blowup_carries_last_good():
    s0 = WaveState.from_functions(G64, lambda x: 0 * x, np.cos)
    s0.psi.coeffs[3] = np.nan
    with pytest.raises(BlowUpError) as exc:
        step(s0, 0.1, cfg64())
    assert exc.value.last_good is s0


# --------------------------------------------------------- invariants


def test_hamiltonian_examples():
    flat = WaveState.from_functions(G64, lambda x: 0 * x, np.cos)
    assert hamiltonian(flat) == pytest.approx(math.pi / 2, rel=1e-13)
    still = WaveState.from_functions(G64, np.cos, lambda x: 0 * x)
    assert hamiltonian(still) == pytest.approx(math.pi / 2, rel=1e-13)
    assert hamiltonian(flat, "fixed_point") == pytest.approx(math.pi / 2, rel=1e-10)


def test_short_run_conservation():
    cfg = cfg64(dt=0.1, t_final=10.0, output_stride=10)
    s0 = standing_wave(G64, 0.01)
    traj = run(cfg, s0)
    H0, m0 = hamiltonian(s0), mass(s0)
    assert max(abs(hamiltonian(s) - H0) for s in traj.states) / H0 <= 1e-6
    assert max(abs(mass(s) - m0) for s in traj.states) <= 1e-10


# -------------------------------------------------------------- run


def test_run_stride_and_times():
    cfg = cfg64(dt=0.1, t_final=1.0, output_stride=3)
    seen = []
    traj = run(cfg, standing_wave(G64, 0.01), callback=lambda k, s: k, observer=lambda k, s: seen.append(k))
    assert traj.records == [0, 3, 6, 9, 10]
    assert seen == list(range(11))
    assert np.all(np.diff(traj.times) > 0)
    assert traj.times[-1] == pytest.approx(1.0)


def test_run_keep_states_false():
    cfg = cfg64(dt=0.1, t_final=1.0, output_stride=2)
    traj = run(cfg, standing_wave(G64, 0.01), keep_states=False)
    assert len(traj) == 1 and traj[0].t == pytest.approx(1.0)


def test_run_resume_matches_uninterrupted():
    cfg = cfg64(dt=0.1, t_final=1.0)
    full = run(cfg, standing_wave(G64, 0.01))
    resumed = run(cfg, full[4], start_step=4)
    assert np.array_equal(resumed[-1].h.coeffs, full[-1].h.coeffs)
    assert np.array_equal(resumed[-1].psi.coeffs, full[-1].psi.coeffs)
    assert resumed[-1].t == full[-1].t


def test_trajectory_rejects_nonincreasing():
    tr = Trajectory(G64)
    tr.append(WaveState.zero(G64, 1.0))
    with pytest.raises(ValueError):
        tr.append(WaveState.zero(G64, 1.0))


def test_run_steepness_guard():
    s0 = WaveState.from_functions(G64, lambda x: 0.5 * np.cos(x), lambda x: 0 * x)
    with pytest.raises(BlowUpError, match="steepness"):
        run(cfg64(), s0)


def test_localization_guard():
    g = Grid(256, 64.0)
    s0 = WaveState.from_functions(g, lambda x: 1e-3 * np.cos(x), lambda x: 0 * x)
    assert outer_mass_fraction(s0) > 0.05
    with pytest.raises(LocalizationError):
        run(SolverConfig(256, 64.0, 0.1, 1.0, localized=True), s0)


def test_krasny_filter():
    s = WaveState.from_functions(G64, np.cos, lambda x: 0 * x)
    s.h.coeffs[5] = s.h.coeffs[-5] = 1e-15
    out = krasny_filter(s, 1e-13)
    assert out.h.coeffs[5] == 0 and out.h.coeffs[1] != 0


# ------------------------------------------------------------ stencil


def test_centered_derivative_exact_on_quartics():
    dt = 0.1
    t = np.arange(-2, 3) * dt
    vals = [1 + 2 * s - s**2 + 3 * s**3 - 0.5 * s**4 for s in t]
    assert centered_derivative(vals, dt) == pytest.approx(2.0, abs=1e-12)


def test_stencil_states_times():
    s0 = standing_wave(G64, 0.01)
    sts = stencil_states(s0, 0.01, cfg64())
    assert [round(s.t, 12) for s in sts] == [-0.02, -0.01, 0.0, 0.01, 0.02]
