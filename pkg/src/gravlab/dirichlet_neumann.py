"""Dirichlet-Neumann operator for infinite depth.

Two constructions are provided.  ``dn_taylor3`` sums the expansion of
``G(h) psi`` through cubic order,

.. math::

    G\\psi \\approx |\\nabla|\\psi - |\\nabla|(h|\\nabla|\\psi) - \\partial_x(h\\partial_x\\psi)
    + |\\nabla|(h|\\nabla|(h|\\nabla|\\psi))
    + \\tfrac12\\big[|\\nabla|(h^2\\partial_x^2\\psi) + \\partial_x^2(h^2|\\nabla|\\psi)\\big],

and ``dn_fixed_point`` iterates the integral formulation of the flattened
Laplace problem on ``z in [-Z_max, 0]``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .spectral_core import (
    Grid,
    GridMismatchError,
    SpectralField,
    abs_deriv,
    ddx,
    fine_values,
    from_fine,
    product,
    pseudo,
)

STEEPNESS_LIMIT = 0.3


class SteepnessWarning(UserWarning):
    pass


class DNError(RuntimeError):
    pass


class ConvergenceError(DNError):
    def __init__(self, msg, history):
        super().__init__(msg)
        self.history = history


class TaylorSignError(DNError):
    pass


@dataclass
class WaveState:
    h: SpectralField
    psi: SpectralField
    t: float = 0.0

    def __post_init__(self):
        if not self.h.grid.same(self.psi.grid):
            raise GridMismatchError("h and psi live on different grids")
        if not (self.h.real and self.psi.real):
            raise ValueError("h and psi must be real fields")

    @property
    def grid(self) -> Grid:
        return self.h.grid

    @property
    def steepness(self) -> float:
        return ddx(self.h).sup()

    @classmethod
    def from_functions(cls, grid: Grid, h: Callable, psi: Callable, t: float = 0.0):
        return cls(SpectralField.from_function(grid, h, True), SpectralField.from_function(grid, psi, True), t)

    @classmethod
    def zero(cls, grid: Grid, t: float = 0.0):
        return cls(SpectralField.zeros(grid), SpectralField.zeros(grid), t)

    def scaled(self, eps: float) -> "WaveState":
        return WaveState(self.h * eps, self.psi * eps, self.t)


@dataclass
class VerticalProfile:
    zgrid: np.ndarray
    phi_x: np.ndarray  # (Nz+1, n) coefficients
    phi_z: np.ndarray
    grid: Grid
    residual_history: list = field(default_factory=list)

    def level(self, j: int) -> tuple[SpectralField, SpectralField]:
        return (
            SpectralField(self.grid, self.phi_x[j], True),
            SpectralField(self.grid, self.phi_z[j], True),
        )

    @property
    def top(self):
        return self.level(len(self.zgrid) - 1)


@dataclass
class DNResult:
    G_psi: SpectralField
    B: SpectralField
    V: SpectralField
    a: SpectralField | None
    alpha: SpectralField | None
    method: str
    orders: tuple | None = None
    flagged: bool = False
    info: dict = field(default_factory=dict)


# ------------------------------------------------------------- taylor3


def taylor_orders(h: SpectralField, psi: SpectralField):
    """Linear, quadratic and cubic parts of the expansion, grouped as written."""
    D = abs_deriv
    Dpsi = D(psi)
    lam1 = Dpsi
    lam2 = -D(product(h, Dpsi)) - ddx(product(h, ddx(psi)))
    lam3 = D(product(h, D(product(h, Dpsi)))) + 0.5 * (
        D(product(h, h, ddx(psi, 2))) + ddx(product(h, h, Dpsi), 2)
    )
    return lam1, lam2, lam3


def G_taylor3(h: SpectralField, psi: SpectralField) -> SpectralField:
    l1, l2, l3 = taylor_orders(h, psi)
    return l1 + l2 + l3


def _check_steep(state: WaveState, limit: float) -> bool:
    s = state.steepness
    if s > limit:
        warnings.warn(f"steepness {s:.3g} exceeds validity limit {limit}", SteepnessWarning, stacklevel=3)
        return True
    return False


def trace_quantities(G: SpectralField, state: WaveState):
    """``B = (G + h_x psi_x)/(1 + h_x^2)`` and ``V = psi_x - h_x B``."""
    if not G.grid.same(state.grid):
        raise GridMismatchError("G and state on different grids")
    hx = ddx(state.h)
    px = ddx(state.psi)
    B = pseudo(lambda g, a, b: (g + a * b) / (1.0 + a * a), G, hx, px)
    V = px - product(hx, B)
    return B, V


def taylor_coefficient(state: WaveState, B: SpectralField, V: SpectralField, G_of: Callable):
    """``a`` from the elliptic identity and ``alpha = sqrt(a) - 1``."""
    hx = ddx(state.h)
    Bx, Vx = ddx(B), ddx(V)
    rhs_data = product(V, V) + product(B, B) + 2.0 * state.h
    GW = G_of(rhs_data)

    def expr(hx_, v, bx, b, vx, gw):
        return (2.0 + 2.0 * v * bx - 2.0 * b * vx - gw) / (2.0 * (1.0 + hx_ * hx_))

    a = pseudo(expr, hx, V, Bx, B, Vx, GW)
    av = a.values
    if np.min(av) <= 0:
        j = int(np.argmin(av))
        raise TaylorSignError(f"Taylor coefficient a={av[j]:.3g} <= 0 at x={state.grid.x[j]:.6g}")
    alpha = pseudo(lambda v: np.sqrt(v) - 1.0, a, pad=2.0)
    return a, alpha


def dn_taylor3(state: WaveState, with_coefficient: bool = True, limit: float = STEEPNESS_LIMIT) -> DNResult:
    flagged = _check_steep(state, limit)
    orders = taylor_orders(state.h, state.psi)
    G = orders[0] + orders[1] + orders[2]
    B, V = trace_quantities(G, state)
    a = alpha = None
    if with_coefficient:
        a, alpha = taylor_coefficient(state, B, V, lambda w: G_taylor3(state.h, w))
    return DNResult(G, B, V, a, alpha, "taylor3", orders, flagged)


# ---------------------------------------------------------- fixed point


def zgrid(z_max: float, nz: int, stretch: float = 88.0) -> np.ndarray:
    """Levels clustered at ``z = 0``; geometric with ratio ``stretch^(1/nz)``.

    Returned in increasing order, ending exactly at 0.
    """
    if nz < 2 or z_max <= 0:
        raise ValueError("need nz >= 2 and z_max > 0")
    j = np.arange(nz + 1)
    if stretch == 1.0:
        depth = z_max * j / nz
    else:
        depth = z_max * (stretch ** (j / nz) - 1.0) / (stretch - 1.0)
    z = -depth[::-1]
    z[-1] = 0.0
    return z


@dataclass
class ZConfig:
    z_max: float = 8.0
    nz: int = 256
    max_iters: int = 200
    tol: float = 1e-13
    stretch: float = 88.0
    tail_tol: float = 1e-6


def _trapezoid_weights(z: np.ndarray) -> np.ndarray:
    w = np.zeros_like(z)
    dz = np.diff(z)
    w[:-1] += 0.5 * dz
    w[1:] += 0.5 * dz
    return w


def _products_M(hx_fine, px, pz, grid: Grid, pad_m: int):
    """Coefficients of ``m1 = d_x |D|^-1 (h_x phi_z)`` and ``m2 = -h_x phi_x + h_x^2 phi_z``."""
    n = grid.n_points
    vx = np.fft.ifft(_pad_rows(px, pad_m), axis=-1).real * pad_m
    vz = np.fft.ifft(_pad_rows(pz, pad_m), axis=-1).real * pad_m
    p1 = hx_fine * vz
    p2 = -hx_fine * vx + hx_fine * hx_fine * vz
    c1 = _trunc_rows(np.fft.fft(p1, axis=-1) / pad_m, n)
    c2 = _trunc_rows(np.fft.fft(p2, axis=-1) / pad_m, n)
    xi = grid.xi
    hilb = np.zeros_like(xi, dtype=complex)
    nz = xi != 0
    hilb[nz] = 1j * np.sign(xi[nz])
    hilb[grid.nyquist_index] = 0.0
    return c1 * hilb, c2


def _pad_rows(c, m):
    n = c.shape[-1]
    out = np.zeros(c.shape[:-1] + (m,), complex)
    h = n // 2
    out[..., :h] = c[..., :h]
    out[..., m - h + 1 :] = c[..., h + 1 :]
    return out


def _trunc_rows(c, n):
    m = c.shape[-1]
    out = np.zeros(c.shape[:-1] + (n,), complex)
    h = n // 2
    out[..., :h] = c[..., :h]
    out[..., h + 1 :] = c[..., m - h + 1 :]
    return out


def dn_fixed_point(state: WaveState, zcfg: ZConfig | None = None, with_coefficient: bool = True,
                   limit: float = STEEPNESS_LIMIT):
    """Picard iteration for ``(phi_x, phi_z)`` on the flattened strip.

    Returns ``(VerticalProfile, DNResult)``.
    """
    zcfg = zcfg or ZConfig()
    grid = state.grid
    steep = state.steepness
    if steep > limit:
        raise DNError(f"steepness {steep:.3g} exceeds contraction limit {limit}")
    xi = grid.xi
    axi = np.abs(xi)
    populated = (np.abs(state.psi.coeffs) > 0) | (np.abs(state.h.coeffs) > 0)
    populated[0] = False
    if populated.any():
        worst = float(np.min(axi[populated]))
        tail = math.exp(-2.0 * zcfg.z_max * worst)
        if tail > zcfg.tail_tol:
            raise DNError(
                f"Z_max={zcfg.z_max} too small: mode xi={worst:.6g} keeps tail {tail:.3g} > {zcfg.tail_tol}"
            )
    profile, G = _fixed_point_core(state.h, state.psi, zcfg)
    B, V = trace_quantities(G, state)
    a = alpha = None
    if with_coefficient:
        a, alpha = taylor_coefficient(
            state, B, V, lambda w: _fixed_point_core(state.h, w, zcfg)[1]
        )
    res = DNResult(G, B, V, a, alpha, "fixed_point", None, False,
                   {"iterations": len(profile.residual_history), "residuals": profile.residual_history})
    return profile, res


def _fixed_point_core(h: SpectralField, psi: SpectralField, zcfg: ZConfig):
    grid = h.grid
    n = grid.n_points
    xi = grid.xi
    axi = np.abs(xi)
    ixi = 1j * xi
    ixi[grid.nyquist_index] = 0.0
    z = zgrid(zcfg.z_max, zcfg.nz, zcfg.stretch)
    w = _trapezoid_weights(z)
    nzl = z.size
    # one-sided halves of the diagonal cell carry the one-sided sign
    dz = np.diff(z)
    w_lo = np.concatenate([[0.0], 0.5 * dz])
    w_hi = np.concatenate([0.5 * dz, [0.0]])
    pad_m = 2 * n
    hx = ddx(h)
    hx_fine = fine_values([hx], 2.0)[0]
    E = np.exp(np.outer(z, axi))  # e^{z|xi|}
    psi_c = psi.coeffs
    X0x = E * (ixi * psi_c)
    X0z = E * (axi * psi_c)
    # source levels weighted by e^{z'|xi|}
    Ew = E * w[:, None]
    px, pz = X0x.copy(), X0z.copy()
    history = []
    lam = 1.0
    if not np.any(hx.coeffs):
        return VerticalProfile(z, px, pz, grid, [0.0]), SpectralField(grid, pz[-1].copy(), True)
    prev_res = None
    for it in range(zcfg.max_iters):
        m1, m2 = _products_M(hx_fine, px, pz, grid, pad_m)
        msum = m1 + m2
        S = np.sum(Ew * msum, axis=0)
        Fx = X0x + 0.5 * E * (ixi * S)
        Fz = X0z + 0.5 * E * (axi * S)
        for i in range(nzl):
            d = z[i] - z
            Ei = np.exp(-np.abs(d)[:, None] * axi[None, :]) * w[:, None]
            s = np.sign(d)
            s[i] = (w_lo[i] - w_hi[i]) / w[i]
            s = s[:, None]
            Fx[i] += 0.5 * (-ixi) * np.sum(Ei * (m1 + s * m2), axis=0)
            Fz[i] += 0.5 * axi * np.sum(Ei * (s * m1 + m2), axis=0)
        # g1 = h_x phi_x - h_x^2 phi_z at each level
        Fz += -m2
        nx = (1 - lam) * px + lam * Fx
        nzv = (1 - lam) * pz + lam * Fz
        diff = math.sqrt(
            max(
                float(np.max(np.sum(np.abs(nx - px) ** 2, axis=1))),
                float(np.max(np.sum(np.abs(nzv - pz) ** 2, axis=1))),
            )
            / grid.length
        )
        history.append(diff)
        px, pz = nx, nzv
        if diff < zcfg.tol * max(1.0, math.sqrt(float(np.sum(np.abs(psi_c) ** 2)) / grid.length)):
            break
        if prev_res is not None and diff > 0.9 * prev_res and lam == 1.0:
            lam = 0.5
        prev_res = diff
    else:
        raise ConvergenceError(
            f"fixed point did not converge in {zcfg.max_iters} iterations (last {history[-1]:.3g})", history
        )
    prof = VerticalProfile(z, px, pz, grid, history)
    pz0 = SpectralField(grid, pz[-1].copy(), True)
    px0 = ddx(psi)
    G = pseudo(lambda a, b, c: (1.0 + a * a) * b - a * c, hx, pz0, px0)
    return prof, G
