"""Reference configurations: the standing-wave run and the dispersive packet runs."""

from __future__ import annotations

import math

import numpy as np

from .dirichlet_neumann import WaveState
from .evolution import SolverConfig
from .spectral_core import Grid, SpectralField, abs_deriv


def standing_wave(grid: Grid, eps: float) -> WaveState:
    """``h = eps (cos x + cos 2x / 2)``, ``psi = 0``."""
    return WaveState.from_functions(grid, lambda x: eps * (np.cos(x) + 0.5 * np.cos(2 * x)),
                                    lambda x: 0.0 * x)


def run_a_config(**kw) -> SolverConfig:
    base = dict(n_points=512, length=2 * math.pi, dt=0.1, t_final=100.0)
    base.update(kw)
    return SolverConfig(**base)


def _smooth_step(s):
    s = np.clip(s, 0.0, 1.0)
    f = lambda u: np.where(u > 0, np.exp(-1.0 / np.maximum(u, 1e-300)), 0.0)
    return f(s) / (f(s) + f(1.0 - s))


def band_limited_packet(grid: Grid, amplitude: float = 5e-3, center: float = 2.25, width: float = 0.5,
                        band=(0.5, 4.0), taper: float = 0.25) -> WaveState:
    """Standing Gaussian packet with spectrum exactly inside ``band``.

    The spectrum of ``h`` is a Gaussian of standard deviation ``width`` around
    ``+-center`` times smooth tapers of length ``taper`` at both band edges;
    ``psi = 0``.  ``amplitude`` is ``sup |h|``.
    """
    a = np.abs(grid.xi)
    lo, hi = band
    spectrum = np.exp(-((a - center) ** 2) / (2 * width**2))
    spectrum *= _smooth_step((a - lo) / taper) * _smooth_step((hi - a) / taper)
    h = SpectralField(grid, spectrum.astype(complex), True)
    h = h * (amplitude / np.max(np.abs(h.values)))
    return WaveState(h, SpectralField.zeros(grid), 0.0)


def run_bc_config(t_final: float = 200.0, nonlinear: bool = True, **kw) -> SolverConfig:
    base = dict(n_points=4096, length=1024.0, dt=0.1, t_final=t_final, nonlinear=nonlinear)
    base.update(kw)
    return SolverConfig(**base)


def monitored_modes(grid: Grid, xis=(1.5, 2.25, 3.0)) -> list:
    return [int(round(x / grid.dxi)) for x in xis]


def linear_U(state: WaveState, t: float) -> SpectralField:
    """Exact linear evolution of ``U = h + i |D|^{1/2} psi`` to time ``t``."""
    U = state.h.coeffs + 1j * abs_deriv(state.psi, 0.5).coeffs
    lam = np.sqrt(np.abs(state.grid.xi))
    return SpectralField(state.grid, np.exp(-1j * lam * (t - state.t)) * U, False)


def packet_study(cfg: SolverConfig, initial: WaveState, monitor, sample_every: int = 10,
                 variant: str = "complete"):
    """Run the packet, tracking the profile and scattering phase at ``monitor``.

    The phase integral is accumulated every step; sup-norms, profiles and
    phases are sampled every ``sample_every`` steps.  Returns a dict of arrays.
    """
    from .diagnostics import Diagnostics, modified_profile, sup_good_unknowns
    from .evolution import run
    from .transforms import SymbolTable, good_unknowns

    diag = Diagnostics(cfg.grid, st=SymbolTable(variant), monitor=monitor, energy=False)
    out = {"t": [], "sup": [], "fhat": [], "G": []}

    def observe(k, s):
        fh = diag.monitored_profile(good_unknowns(s), s.t) if cfg.nonlinear else _linear_profile(s, monitor)
        G = diag.phase.update(s.t, fh)
        if k % sample_every == 0:
            out["t"].append(s.t)
            out["sup"].append(sup_good_unknowns(s) if cfg.nonlinear else _sup_linear(s))
            out["fhat"].append(fh)
            out["G"].append(G.copy())

    cfg_run = SolverConfig(**{**cfg.__dict__, "output_stride": max(cfg.n_steps, 1)})
    run(cfg_run, initial, observer=observe)
    res = {k: np.array(v) for k, v in out.items()}
    res["g"] = modified_profile(res["fhat"], res["G"])
    res["worst_stride_variation"] = diag.phase.worst_variation
    return res


def _linear_profile(s: WaveState, monitor):
    idx = np.array(monitor, int) % s.grid.n_points
    V = s.h.coeffs[idx] + 1j * abs_deriv(s.psi, 0.5).coeffs[idx]
    return np.exp(1j * s.t * np.sqrt(np.abs(np.array(monitor) * s.grid.dxi))) * V


def _sup_linear(s: WaveState) -> float:
    return float(np.max(np.hypot(s.h.values, abs_deriv(s.psi, 0.5).values)))
