"""Time integration of the gravity water-wave system

    h_t = G(h) psi
    psi_t = -h - psi_x^2 / 2 + (G(h) psi + h_x psi_x)^2 / (2 (1 + h_x^2))

with ``g = 1``.  The linear part is propagated exactly per mode (integrating
factor) and the remainder advanced with Lawson's fourth-order Runge-Kutta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dirichlet_neumann import (
    G_taylor3,
    STEEPNESS_LIMIT,
    WaveState,
    ZConfig,
    _fixed_point_core,
)
from .spectral_core import Grid, SpectralField, abs_deriv, ddx, pseudo


class BlowUpError(RuntimeError):
    def __init__(self, msg, last_good: WaveState | None = None):
        super().__init__(msg)
        self.last_good = last_good


class LocalizationError(RuntimeError):
    def __init__(self, msg, last_good: WaveState | None = None):
        super().__init__(msg)
        self.last_good = last_good


@dataclass
class SolverConfig:
    n_points: int
    length: float
    dt: float
    t_final: float
    dn_method: str = "taylor3"
    dealias: bool = True
    krasny_floor: float = 1e-13
    output_stride: int = 1
    integrating_factor: bool = True
    nonlinear: bool = True
    localized: bool = False
    outer_fraction: float = 0.1
    outer_mass_tol: float = 1e-8
    zcfg: ZConfig = field(default_factory=ZConfig)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.t_final < 0:
            raise ValueError(f"t_final must be nonnegative, got {self.t_final}")
        if self.dn_method not in ("taylor3", "fixed_point"):
            raise ValueError(f"dn_method must be taylor3 or fixed_point, got {self.dn_method!r}")
        if self.output_stride < 1:
            raise ValueError("output_stride must be >= 1")
        if self.krasny_floor < 0:
            raise ValueError("krasny_floor must be nonnegative")
        grid = self.grid  # validates n and L
        cfl = self.dt * math.sqrt(grid.xi_nyquist)
        if not self.integrating_factor and cfl > 2.8:
            raise ValueError(f"dt={self.dt} violates dt*max|xi|^(1/2) <= 2.8 (got {cfl:.3g})")

    @property
    def grid(self) -> Grid:
        return Grid(self.n_points, self.length)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))


@dataclass
class Trajectory:
    grid: Grid
    states: list = field(default_factory=list)
    records: list = field(default_factory=list)

    def append(self, state: WaveState, record=None):
        if self.states and not state.t > self.states[-1].t:
            raise ValueError("trajectory times must increase")
        self.states.append(state)
        self.records.append(record)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    def __len__(self):
        return len(self.states)

    def __getitem__(self, i):
        return self.states[i]


# ------------------------------------------------------------------ rhs


def dn_apply(state: WaveState, dn_method: str, zcfg: ZConfig | None = None) -> SpectralField:
    if dn_method == "taylor3":
        return G_taylor3(state.h, state.psi)
    if dn_method == "fixed_point":
        return _fixed_point_core(state.h, state.psi, zcfg or ZConfig())[1]
    raise ValueError(f"unknown dn_method {dn_method!r}")


def _psi_nonlinear(G: SpectralField, hx: SpectralField, px: SpectralField) -> SpectralField:
    def expr(g, a, b):
        num = g + a * b
        return -0.5 * b * b + num * num / (2.0 * (1.0 + a * a))

    return pseudo(expr, G, hx, px, pad=2.0)


def rhs(state: WaveState, dn_method: str = "taylor3", zcfg: ZConfig | None = None):
    """``(dh/dt, dpsi/dt)``; products evaluated on the padded grid."""
    G = dn_apply(state, dn_method, zcfg)
    N = _psi_nonlinear(G, ddx(state.h), ddx(state.psi))
    return G, N - state.h


def nonlinear_part(state: WaveState, dn_method: str = "taylor3", zcfg: ZConfig | None = None):
    """Right-hand side minus its linearization ``(|D| psi, -h)``."""
    G = dn_apply(state, dn_method, zcfg)
    N = _psi_nonlinear(G, ddx(state.h), ddx(state.psi))
    return G - abs_deriv(state.psi), N


# -------------------------------------------------------------- stepper


class LinearPropagator:
    """Exact flow of ``h_t = |D| psi, psi_t = -h`` per Fourier mode."""

    def __init__(self, grid: Grid):
        self.axi = np.abs(grid.xi)
        self.om = np.sqrt(self.axi)
        self._cache = {}

    def matrices(self, tau: float):
        key = float(tau)
        m = self._cache.get(key)
        if m is None:
            om = self.om
            c = np.cos(om * tau)
            s = np.sin(om * tau)
            # sin(om tau)/om with its limit tau at om = 0
            with np.errstate(invalid="ignore", divide="ignore"):
                sinc = np.where(om > 0, s / np.where(om > 0, om, 1.0), tau)
            m = (c, om * s, -sinc, c)
            if len(self._cache) > 16:
                self._cache.clear()
            self._cache[key] = m
        return m

    def __call__(self, hc, pc, tau):
        a, b, c, d = self.matrices(tau)
        return a * hc + b * pc, c * hc + d * pc


def _state(grid, hc, pc, t):
    return WaveState(SpectralField(grid, hc, True), SpectralField(grid, pc, True), t)


def step(state: WaveState, dt: float, cfg: SolverConfig, prop: LinearPropagator | None = None) -> WaveState:
    """One Lawson RK4 step (or classical RK4 when the integrating factor is off)."""
    grid = state.grid
    prop = prop or LinearPropagator(grid)
    t = state.t
    if not cfg.nonlinear:
        hc, pc = prop(state.h.coeffs, state.psi.coeffs, dt)
        return _check(_state(grid, hc, pc, t + dt), state)

    def N(hc, pc, tt):
        a, b = nonlinear_part(_state(grid, hc, pc, tt), cfg.dn_method, cfg.zcfg)
        return a.coeffs, b.coeffs

    h0, p0 = state.h.coeffs, state.psi.coeffs
    if cfg.integrating_factor:
        k1 = N(h0, p0, t)
        eh0 = prop(h0, p0, dt / 2)
        ek1 = prop(*k1, dt / 2)
        k2 = N(eh0[0] + dt / 2 * ek1[0], eh0[1] + dt / 2 * ek1[1], t + dt / 2)
        k3 = N(eh0[0] + dt / 2 * k2[0], eh0[1] + dt / 2 * k2[1], t + dt / 2)
        ek3 = prop(*k3, dt / 2)
        ef0 = prop(h0, p0, dt)
        k4 = N(ef0[0] + dt * ek3[0], ef0[1] + dt * ek3[1], t + dt)
        fk1 = prop(*k1, dt)
        ek23 = prop(k2[0] + k3[0], k2[1] + k3[1], dt / 2)
        hc = ef0[0] + dt / 6 * (fk1[0] + 2 * ek23[0] + k4[0])
        pc = ef0[1] + dt / 6 * (fk1[1] + 2 * ek23[1] + k4[1])
    else:
        axi = prop.axi

        def F(hc, pc, tt):
            a, b = N(hc, pc, tt)
            return a + axi * pc, b - hc

        k1 = F(h0, p0, t)
        k2 = F(h0 + dt / 2 * k1[0], p0 + dt / 2 * k1[1], t + dt / 2)
        k3 = F(h0 + dt / 2 * k2[0], p0 + dt / 2 * k2[1], t + dt / 2)
        k4 = F(h0 + dt * k3[0], p0 + dt * k3[1], t + dt)
        hc = h0 + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        pc = p0 + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    return _check(_state(grid, hc, pc, t + dt), state)


def _check(new: WaveState, old: WaveState) -> WaveState:
    if not (np.all(np.isfinite(new.h.coeffs)) and np.all(np.isfinite(new.psi.coeffs))):
        raise BlowUpError(f"non-finite values after step at t={new.t:.6g}", old)
    return new


def krasny_filter(state: WaveState, floor: float) -> WaveState:
    """Zero Fourier-series amplitudes below ``floor``."""
    if floor <= 0:
        return state
    L = state.grid.length
    out = []
    for f in (state.h, state.psi):
        c = f.coeffs.copy()
        c[np.abs(c) < floor * L] = 0.0
        out.append(SpectralField(f.grid, c, True))
    return WaveState(out[0], out[1], state.t)


def outer_mass_fraction(state: WaveState, fraction: float = 0.1) -> float:
    """Share of ``int h^2 + (|D|^{1/2} psi)^2`` in the outer ``fraction`` of the torus."""
    g = state.grid
    u = state.h.values ** 2 + abs_deriv(state.psi, 0.5).values ** 2
    total = float(np.sum(u))
    if total == 0:
        return 0.0
    outer = np.abs(g.x) >= (0.5 - fraction / 2) * g.length
    return float(np.sum(u[outer])) / total


# ------------------------------------------------------------ invariants


def hamiltonian(state: WaveState, dn_method: str = "taylor3", zcfg: ZConfig | None = None) -> float:
    G = dn_apply(state, dn_method, zcfg)
    return 0.5 * float(np.real(state.psi.inner(G))) + 0.5 * state.h.norm() ** 2


def mass(state: WaveState) -> float:
    return float(np.real(state.h.coeffs[0]))


# ------------------------------------------------------------------- run


def run(cfg: SolverConfig, initial: WaveState, callback: Callable | None = None,
        start_step: int = 0, observer: Callable | None = None,
        keep_states: bool = True) -> Trajectory:
    """Advance to ``t_final``; snapshots every ``output_stride`` steps.

    ``callback(step_index, state)`` is invoked on each snapshot and its return
    value stored as the snapshot's record.  ``observer(step_index, state)``
    sees every step without storing it.  With ``keep_states=False`` only the
    latest snapshot is retained.  ``start_step`` resumes a run whose
    initial state is the snapshot taken after that many steps.
    """
    grid = cfg.grid
    if not grid.same(initial.grid):
        raise ValueError("initial state grid does not match config")
    prop = LinearPropagator(grid)
    traj = Trajectory(grid)
    state = initial
    steps = cfg.n_steps
    t0 = initial.t - start_step * cfg.dt

    def emit(k, s):
        rec = callback(k, s) if callback else None
        traj.append(s, rec)
        if not keep_states and len(traj) > 1:
            del traj.states[:-1], traj.records[:-1]

    if start_step == 0:
        _guard(state, cfg, None)
        if observer:
            observer(0, state)
        emit(0, state)
    for k in range(start_step + 1, steps + 1):
        try:
            new = step(state, cfg.dt, cfg, prop)
        except BlowUpError:
            raise
        except Exception as exc:  # DN failures and friends
            raise BlowUpError(f"step failed at t={state.t:.6g}: {exc}", state) from exc
        new.t = t0 + k * cfg.dt
        if cfg.krasny_floor > 0:
            new = krasny_filter(new, cfg.krasny_floor)
        _guard(new, cfg, state)
        state = new
        if observer:
            observer(k, state)
        if k % cfg.output_stride == 0 or k == steps:
            emit(k, state)
    return traj


def _guard(state: WaveState, cfg: SolverConfig, last_good):
    if cfg.nonlinear and state.steepness > STEEPNESS_LIMIT:
        raise BlowUpError(f"steepness {state.steepness:.3g} exceeds {STEEPNESS_LIMIT} at t={state.t:.6g}",
                          last_good)
    if cfg.localized:
        frac = outer_mass_fraction(state, cfg.outer_fraction)
        if frac > cfg.outer_mass_tol:
            raise LocalizationError(
                f"outer-region mass fraction {frac:.3g} exceeds {cfg.outer_mass_tol:.3g} at t={state.t:.6g}",
                last_good,
            )


def stencil_states(state: WaveState, dt_fine: float, cfg: SolverConfig) -> list:
    """States at ``t + j dt_fine`` for ``j = -2..2`` by forward and backward steps."""
    prop = LinearPropagator(state.grid)
    fwd = [state]
    bwd = [state]
    for _ in range(2):
        fwd.append(step(fwd[-1], dt_fine, cfg, prop))
        bwd.append(step(bwd[-1], -dt_fine, cfg, prop))
    return [bwd[2], bwd[1], state, fwd[1], fwd[2]]


def centered_derivative(values: list, dt_fine: float):
    """Fourth-order five-point first derivative of ``values[0..4]`` at the centre."""
    f = values
    return (f[0] - 8 * f[1] + 8 * f[3] - f[4]) * (1.0 / (12.0 * dt_fine))
