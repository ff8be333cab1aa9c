"""Weighted norms, modified energy, scaling field, decay fits and the
modified-scattering phase.

Norm conventions follow :mod:`gravlab.spectral_core`: ``||P_k f||_2`` is
evaluated by Parseval on the band ``psi_k(xi) f^(xi)`` and ``||P_k f||_inf``
on the physical grid.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .dirichlet_neumann import WaveState
from .evolution import Trajectory, hamiltonian, outer_mass_fraction, rhs
from .spectral_core import (
    SpectralField,
    abs_deriv,
    band_range,
    bilinear_at,
    ddx,
    psi_k,
    ssqrt,
)
from .transforms import (
    GoodUnknowns,
    SymbolTable,
    apply_normal_form,
    good_unknowns,
    normal_form_corrections,
    profile,
)


class LocalizationError(ValueError):
    pass


class DecayFitError(ValueError):
    pass


class StrideWarning(UserWarning):
    pass


class ShortWindowWarning(UserWarning):
    pass


@dataclass(frozen=True)
class NormParams:
    N0: float = 8.0
    N1: float = 1.0
    N2: float = 61.0 / 20.0
    p: float = 0.2
    p0: float = 1e-3

    def __post_init__(self):
        if not 0 <= self.p <= self.N0:
            raise ValueError(f"need 0 <= p <= N0, got p={self.p}, N0={self.N0}")
        if not self.p0 > 0:
            raise ValueError("p0 must be positive")

    @property
    def beta(self) -> float:
        return 0.75 - self.p0

    @property
    def gamma(self) -> float:
        return self.N2 + 2 * self.p0


# ------------------------------------------------------------------- norms


def _bands(f: SpectralField):
    k_lo, k_hi = band_range(f.grid)
    return range(k_lo, k_hi + 1)


def band_l2(f: SpectralField) -> dict:
    """``{k: ||P_k f||_2}`` over the resolvable bands."""
    L = f.grid.length
    xi = f.grid.xi
    return {k: math.sqrt(float(np.sum(np.abs(psi_k(xi, k) * f.coeffs) ** 2)) / L) for k in _bands(f)}


def band_linf(f: SpectralField) -> dict:
    g = f.grid
    out = {}
    for k in _bands(f):
        out[k] = float(np.max(np.abs(g.inverse(psi_k(g.xi, k) * f.coeffs))))
    return out


def outside_band_mass(f: SpectralField) -> float:
    """L2 mass of the mean mode, the only mode no band covers."""
    return abs(f.coeffs[0]) / math.sqrt(f.grid.length)


def sobolev_norm(f: SpectralField, N: float, p: float) -> float:
    """``[sum_k (2^{Nk} + 2^{pk})^2 ||P_k f||_2^2]^{1/2}``.

    The mean mode enters with the weight of the lowest band.
    """
    parts = band_l2(f)
    k_lo = min(parts)
    total = sum((2.0 ** (N * k) + 2.0 ** (p * k)) ** 2 * v * v for k, v in parts.items())
    total += (2.0 ** (N * k_lo) + 2.0 ** (p * k_lo)) ** 2 * outside_band_mass(f) ** 2
    return math.sqrt(total)


def w_norm(f: SpectralField, gamma: float | None = None, b: float | None = None,
           params: NormParams | None = None) -> float:
    """``sum_k (2^{gamma k+} + 2^{b k-}) ||P_k f||_inf``, or with ``b`` omitted
    ``sum_k (2^{gamma k} + 1) ||P_k f||_inf``."""
    params = params or NormParams()
    gamma = params.N2 if gamma is None else gamma
    parts = band_linf(f)
    if b is None:
        return sum((2.0 ** (gamma * k) + 1.0) * v for k, v in parts.items())
    return sum((2.0 ** (gamma * max(k, 0)) + 2.0 ** (b * min(k, 0))) * v for k, v in parts.items())


def z_norm(f: SpectralField, params: NormParams | None = None) -> float:
    """``sup_xi |xi|^beta (1 + |xi|^gamma) |f^(xi)|``."""
    params = params or NormParams()
    a = np.abs(f.grid.xi)
    w = a**params.beta * (1.0 + a**params.gamma)
    return float(np.max(w * np.abs(f.coeffs)))


# ----------------------------------------------------------- scaling field


def _times_x(f: SpectralField) -> SpectralField:
    g = f.grid
    return SpectralField.from_values(g, g.x * f.values, f.real)


def scaling_field(traj, index: int | None = None, dn_method: str = "taylor3",
                  outer_fraction: float = 0.1, tol: float = 1e-8):
    """``(S h, S psi)`` with ``S = t d_t + 2 x d_x``; ``d_t`` from the equations.

    ``traj`` is a Trajectory (with ``index``) or a single WaveState.
    """
    state = traj[index] if isinstance(traj, Trajectory) else traj
    frac = outer_mass_fraction(state, outer_fraction)
    if frac > tol:
        raise LocalizationError(f"outer-region mass fraction {frac:.3g} exceeds {tol:.3g}")
    ht, pt = rhs(state, dn_method)
    t = state.t
    Sh = ht * t + _times_x(ddx(state.h)) * 2.0
    Sp = pt * t + _times_x(ddx(state.psi)) * 2.0
    return Sh, Sp


# --------------------------------------------------------- modified energy


def _dp(f: SpectralField, p: float) -> SpectralField:
    return abs_deriv(f, p)


def quadratic_energy(gu: GoodUnknowns, p: float) -> float:
    """``1/2 int |D|^p U1|^2 + ||D|^p U2|^2``."""
    return 0.5 * (_dp(gu.U1, p).norm() ** 2 + _dp(gu.U2, p).norm() ** 2)


def modified_energy(gu: GoodUnknowns, st: SymbolTable, params: NormParams | None = None,
                    support_tol: float = 0.0) -> float:
    """Quadratic energy at level ``p`` plus the cubic normal-form corrections."""
    params = params or NormParams()
    p = params.p
    A, B = normal_form_corrections(gu, st, support_tol)
    e = quadratic_energy(gu, p)
    e += float(np.real(_dp(gu.U1, p).inner(_dp(A, p))))
    e += float(np.real(_dp(gu.U2, p).inner(_dp(B, p))))
    return e


# ----------------------------------------------------- scattering phase


class ScatteringPhase:
    """Accumulator for ``G(t, xi) = (|xi|^4/pi) int_0^t |f^|^2 ds/(1+s)``.

    Between samples ``|f^|^2`` is taken as the trapezoid mean and the weight
    ``1/(1+s)`` is integrated exactly, so a constant modulus gives the closed
    form at any stride.  One instance per trajectory consumer; ``update``
    must be called with increasing times.
    """

    def __init__(self, xi, warn_variation: float = 0.05):
        self.xi = np.asarray(xi, float)
        self.G = np.zeros(self.xi.shape)
        self.t = None
        self._last = None
        self.warn_variation = warn_variation
        self.worst_variation = 0.0

    def update(self, t: float, fhat) -> np.ndarray:
        val = np.abs(np.asarray(fhat)) ** 2
        if self.t is not None:
            if not t > self.t:
                raise ValueError("scattering-phase times must increase")
            with np.errstate(invalid="ignore", divide="ignore"):
                var = np.abs(val - self._last) / np.maximum(self._last, val)
            var = np.nan_to_num(var)
            j = int(np.argmax(var))
            self.worst_variation = max(self.worst_variation, float(var[j]))
            if var[j] > self.warn_variation:
                warnings.warn(
                    f"integrand varies {var[j]:.1%} between samples at xi={self.xi[j]:.6g}",
                    StrideWarning,
                    stacklevel=2,
                )
            w = math.log1p(t) - math.log1p(self.t)
            self.G = self.G + self.xi**4 / math.pi * 0.5 * w * (val + self._last)
        self.t = t
        self._last = val
        return self.G


def scattering_phase(times, fhat_series, xi) -> np.ndarray:
    """``G`` at every time of a series ``fhat_series[i, j] = f^(times[i], xi[j])``."""
    acc = ScatteringPhase(xi)
    return np.array([acc.update(t, f).copy() for t, f in zip(times, fhat_series)])


def modified_profile(fhat, G):
    """``g = e^{iG} f^``."""
    return np.exp(1j * np.asarray(G)) * np.asarray(fhat)


def dyadic_variation(times, series, t: float) -> float:
    """``sup_{xi} sup_{t1,t2 in [t, 2t]} |s(t2, xi) - s(t1, xi)|``."""
    times = np.asarray(times)
    sel = (times >= t * (1 - 1e-12)) & (times <= 2 * t * (1 + 1e-12))
    s = np.asarray(series)[sel]
    if s.shape[0] < 2:
        raise ValueError(f"fewer than two samples in [{t}, {2 * t}]")
    diff = np.abs(s[:, None, :] - s[None, :, :])
    return float(diff.max())


# -------------------------------------------------------------- decay fits


@dataclass
class DecayFit:
    exponent: float
    stderr: float
    window: tuple
    samples: int


def decay_fit_series(times, values, window) -> DecayFit:
    """Least-squares slope of ``log values`` against ``log(1+t)`` inside ``window``."""
    times = np.asarray(times, float)
    values = np.asarray(values, float)
    t0, t1 = window
    sel = (times >= t0) & (times <= t1)
    if sel.sum() < 3:
        raise DecayFitError("fewer than three samples in the fit window")
    v = values[sel]
    if not np.all(v > 0) or not np.all(np.isfinite(v)):
        raise DecayFitError("norm vanishes or is not finite inside the window; exponent undefined")
    if (1 + t1) / (1 + t0) < 10:
        warnings.warn(f"fit window [{t0}, {t1}] spans less than one decade", ShortWindowWarning,
                      stacklevel=2)
    r = stats.linregress(np.log1p(times[sel]), np.log(v))
    return DecayFit(float(r.slope), float(r.stderr), (t0, t1), int(sel.sum()))


def sup_U(state: WaveState) -> float:
    """``sup_x |(h, |D|^{1/2} psi)|``, the linear part of ``(U1, U2)``."""
    u = state.h.values + 1j * abs_deriv(state.psi, 0.5).values
    return float(np.max(np.abs(u)))


def sup_good_unknowns(state: WaveState) -> float:
    gu = good_unknowns(state)
    return float(np.max(np.hypot(gu.U1.values, gu.U2.values)))


NORM_TAGS = {"sup_U": sup_U, "sup_good": sup_good_unknowns}


def decay_fit(traj: Trajectory, norm: str = "sup_good", window=(5.0, 80.0)) -> DecayFit:
    fn = NORM_TAGS[norm]
    vals = [fn(s) for s in traj.states]
    return decay_fit_series(traj.times, vals, window)


# ------------------------------------------------------- stationary phase


def stationary_phase_prediction(fhat: SpectralField, t: float, x=None):
    """Predicted ``|u(t, x)|`` for ``u = e^{-it|D|^{1/2}} f``.

    ``xi_s = sign(x) t^2 / (4 x^2)`` solves ``Lambda'(xi_s) = x / t``;
    amplitude ``(1+t)^{-1/2} |f^(xi_s)| |Lambda''(xi_s)|^{-1/2} (2 pi)^{-1/2}``.
    Points whose ``xi_s`` leaves the resolved lattice are returned as NaN.
    """
    g = fhat.grid
    x = g.x if x is None else np.asarray(x, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        xs = np.sign(x) * t**2 / (4 * x**2)
    ok = np.isfinite(xs) & (np.abs(xs) >= g.dxi) & (np.abs(xs) < g.xi_nyquist)
    order = np.argsort(g.xi)
    amp = np.interp(xs, g.xi[order], np.abs(fhat.coeffs)[order])
    lam2 = 0.25 * np.abs(np.where(ok, xs, 1.0)) ** -1.5
    pred = (1 + t) ** -0.5 * amp / np.sqrt(lam2) / math.sqrt(2 * math.pi)
    return np.where(ok, pred, np.nan)


# ------------------------------------------------------------ per-record


@dataclass
class DiagnosticsRecord:
    t: float
    values: dict = field(default_factory=dict)

    def row(self, columns):
        return [self.t] + [self.values[c] for c in columns]


class Diagnostics:
    """Per-snapshot measurements for a single trajectory consumer.

    ``monitor`` lists integer Fourier modes whose profile and scattering phase
    are tracked.  The profile there uses the normal-formed variables when
    ``normal_form`` is set; the full-lattice normal form (needed for
    ``E_modi`` and the Z-norm) is evaluated only when ``energy`` is set.
    """

    def __init__(self, grid, params: NormParams | None = None, st: SymbolTable | None = None,
                 monitor=(), normal_form: bool = True, energy: bool = True, scaling: bool = False,
                 dn_method: str = "taylor3", support_tol: float = 0.0):
        self.grid = grid
        self.params = params or NormParams()
        self.st = st or SymbolTable("complete")
        self.monitor = [int(m) for m in monitor]
        self.normal_form = normal_form
        self.energy = energy
        self.scaling = scaling
        self.dn_method = dn_method
        self.support_tol = support_tol
        self.phase = ScatteringPhase(grid.dxi * np.array(self.monitor, float))
        self._last_t = None

    @property
    def columns(self):
        cols = ["steepness", "hamiltonian", "mass", "U_HN0p", "U_HN1p", "W_N2", "W_N2_prime",
                "Z_norm", "sup_U", "energy_p", "energy_N0"]
        if self.energy:
            cols.append("E_modi")
        if self.scaling:
            cols += ["SU_HN1p", "SU_HN0p"]
        cols += ["exclusions"]
        for m in self.monitor:
            cols += [f"fhat_abs_{m}", f"G_{m}", f"g_re_{m}", f"g_im_{m}"]
        return cols

    def monitored_profile(self, gu: GoodUnknowns, t: float) -> np.ndarray:
        modes = np.array(self.monitor, int)
        idx = modes % self.grid.n_points
        V = gu.U1.coeffs[idx] + 1j * gu.U2.coeffs[idx]
        if self.normal_form and len(modes):
            st = self.st
            U1, U2 = gu.U1, gu.U2
            V = V + bilinear_at(st["a1"], U1, U1, modes) + bilinear_at(st["a2"], U2, U2, modes)
            V = V + 1j * bilinear_at(st["b"], U1, U2, modes)
        return np.exp(1j * t * ssqrt(modes * self.grid.dxi)) * V

    def restore(self, row: dict):
        """Reload the accumulator from a written row so a resumed run continues it."""
        t = row["t"]
        self._last_t = t
        if self.monitor:
            self.phase.G = np.array([row[f"G_{m}"] for m in self.monitor])
            fa = np.array([row[f"fhat_abs_{m}"] for m in self.monitor])
            self.phase.t = t
            self.phase._last = fa**2

    def record(self, state: WaveState) -> DiagnosticsRecord:
        if self._last_t is not None and not state.t > self._last_t:
            raise ValueError("diagnostics records must have increasing times")
        self._last_t = state.t
        P = self.params
        before = self.st.exclusions
        gu = good_unknowns(state)
        v = {}
        v["steepness"] = state.steepness
        v["hamiltonian"] = hamiltonian(state, self.dn_method)
        v["mass"] = float(np.real(state.h.coeffs[0]))
        v["U_HN0p"] = math.hypot(sobolev_norm(gu.U1, P.N0, P.p), sobolev_norm(gu.U2, P.N0, P.p))
        v["U_HN1p"] = math.hypot(sobolev_norm(gu.U1, P.N1, P.p), sobolev_norm(gu.U2, P.N1, P.p))
        lin = (state.h, abs_deriv(state.psi, 0.5))
        v["W_N2"] = sum(w_norm(f, P.N2, params=P) for f in lin)
        v["W_N2_prime"] = sum(w_norm(f, P.N2, 0.25, P) for f in lin)
        v["sup_U"] = sup_U(state)
        v["energy_p"] = quadratic_energy(gu, P.p)
        v["energy_N0"] = quadratic_energy(gu, P.N0)
        if self.energy:
            nf = apply_normal_form(gu, self.st, self.support_tol)
            v["Z_norm"] = z_norm(profile(nf, state.t), P)
            v["E_modi"] = modified_energy(gu, self.st, P, self.support_tol)
        else:
            v["Z_norm"] = z_norm(profile(gu.U, state.t), P)
        if self.scaling:
            Sh, Sp = scaling_field(state, dn_method=self.dn_method)
            SU2 = abs_deriv(Sp, 0.5)
            v["SU_HN1p"] = math.hypot(sobolev_norm(Sh, P.N1, P.p), sobolev_norm(SU2, P.N1, P.p))
            v["SU_HN0p"] = math.hypot(sobolev_norm(Sh, P.N0, P.p), sobolev_norm(SU2, P.N0, P.p))
        if self.monitor:
            fh = self.monitored_profile(gu, state.t)
            G = self.phase.update(state.t, fh)
            g = modified_profile(fh, G)
            for j, m in enumerate(self.monitor):
                v[f"fhat_abs_{m}"] = float(abs(fh[j]))
                v[f"G_{m}"] = float(G[j])
                v[f"g_re_{m}"] = float(g[j].real)
                v[f"g_im_{m}"] = float(g[j].imag)
        v["exclusions"] = self.st.exclusions - before
        return DiagnosticsRecord(state.t, v)
