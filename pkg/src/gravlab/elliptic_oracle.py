"""Brute-force Dirichlet-Neumann oracle on the flattened strip.

Solves

.. math::

    P\\phi = [(1+h_x^2)\\partial_z^2 + \\partial_x^2 - 2h_x\\partial_x\\partial_z
              - h_{xx}\\partial_z]\\phi = 0, \\qquad \\phi(0, x) = \\psi(x),

with second-order finite differences on the clustered z-levels and spectral
differentiation in x.  By default the harmonic extension ``e^{z|D|} psi`` is
subtracted first (``lifted``), so the finite-difference unknown is the
nonlinear correction only and flat cases are exact.  The linear system is
solved with GMRES preconditioned by the exact per-mode flat operator.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .dirichlet_neumann import (
    DNError,
    DNResult,
    STEEPNESS_LIMIT,
    VerticalProfile,
    WaveState,
    taylor_coefficient,
    trace_quantities,
    zgrid,
)
from .spectral_core import SpectralField, ddx, fine_values, pseudo


class OracleError(DNError):
    pass


@dataclass
class StripProblem:
    state: WaveState
    z_max: float = 8.0
    nz: int = 256
    bottom_bc: str = "decay"  # decay | neumann
    stretch: float = 88.0
    lifted: bool = True
    rtol: float = 1e-14
    max_sweeps: int = 60
    residual_tol: float = 1e-9

    def __post_init__(self):
        if self.z_max <= 0 or self.nz < 4:
            raise ValueError("z_max and nz must be positive (nz >= 4)")
        if self.bottom_bc not in ("decay", "neumann"):
            raise ValueError(f"unknown bottom_bc {self.bottom_bc!r}")
        if self.bottom_bc == "neumann" and self.lifted:
            # the lifted unknown would need an inhomogeneous bottom slope
            raise ValueError("neumann bottom requires lifted=False")

    def refined(self, factor: int = 2) -> "StripProblem":
        return dataclasses.replace(self, nz=self.nz * factor)


def _fd_coeffs(z):
    """Three-point first and second derivative weights at interior nodes."""
    hm = z[1:-1] - z[:-2]
    hp = z[2:] - z[1:-1]
    d1 = np.stack([-hp / (hm * (hm + hp)), (hp - hm) / (hm * hp), hm / (hp * (hm + hp))])
    d2 = np.stack([2 / (hm * (hm + hp)), -2 / (hm * hp), 2 / (hp * (hm + hp))])
    return d1, d2


def _top_derivative_weights(z):
    """Second-order one-sided first derivative at the last node."""
    h1 = z[-1] - z[-2]
    h2 = z[-1] - z[-3]
    # Lagrange derivative at z[-1] through nodes z[-3], z[-2], z[-1]
    w3 = h1 / (h2 * (h2 - h1))
    w2 = -h2 / (h1 * (h2 - h1))
    w1 = 1.0 / h1 + 1.0 / h2
    return w3, w2, w1


class _StripOperator:
    def __init__(self, p: StripProblem):
        st = p.state
        self.grid = g = st.grid
        self.n = g.n_points
        self.z = zgrid(p.z_max, p.nz, p.stretch)
        self.nl = self.z.size - 1  # unknown levels 0..nz-1
        self.bottom = p.bottom_bc
        xi = g.xi
        self.axi = np.abs(xi)
        ixi = 1j * xi
        ixi[g.nyquist_index] = 0.0
        self.ixi = ixi
        hx = ddx(st.h)
        hxx = ddx(st.h, 2)
        self.hx_f, self.hxx_f = fine_values([hx, hxx], 2.0)
        self.m = self.hx_f.size
        z = self.z
        self.d1, self.d2 = _fd_coeffs(z)
        self.h0 = z[1] - z[0]

    def _dz(self, u_full):
        """First and second z-derivatives of levels 0..nz-1 (rows) given all levels."""
        d1, d2 = self.d1, self.d2
        uz = np.empty((self.nl, self.n), complex)
        uzz = np.empty((self.nl, self.n), complex)
        uz[1:] = d1[0][:, None] * u_full[:-2] + d1[1][:, None] * u_full[1:-1] + d1[2][:, None] * u_full[2:]
        uzz[1:] = d2[0][:, None] * u_full[:-2] + d2[1][:, None] * u_full[1:-1] + d2[2][:, None] * u_full[2:]
        u0, u1 = u_full[0], u_full[1]
        h0 = self.h0
        if self.bottom == "decay":
            uz[0] = self.axi * u0
        else:
            uz[0] = 0.0
        # ghost node mirrored at distance h0 carries the boundary slope
        ghost = u1 - 2 * h0 * uz[0]
        uzz[0] = (u1 - 2 * u0 + ghost) / h0**2
        return uz, uzz

    def _products(self, uz, uzz):
        g = self.grid
        m = self.m
        n = self.n
        series = lambda c: np.fft.ifft(_pad(c / g.length, m), axis=-1) * m
        vzz = series(uzz).real
        vxz = series(self.ixi * uz).real
        vz = series(uz).real
        hx, hxx = self.hx_f, self.hxx_f
        prod = hx * hx * vzz - 2 * hx * vxz - hxx * vz
        return _trunc(np.fft.fft(prod, axis=-1) / m, n) * g.length

    def apply(self, u, top):
        """``P u`` at levels 0..nz-1 for unknown levels ``u`` and fixed top level."""
        u_full = np.vstack([u, top[None, :]])
        uz, uzz = self._dz(u_full)
        return uzz - (self.axi**2) * u + self._products(uz, uzz)

    def flat_solve(self, r):
        """Solve the flat operator ``(d_zz - xi^2) u = r`` with zero top value."""
        nl, n = self.nl, self.n
        d2 = self.d2
        xi2 = self.axi**2
        h0 = self.h0
        a = np.zeros(nl)
        c = np.zeros(nl)
        b = np.empty((nl, n))
        a[1:] = d2[0]
        b[1:] = d2[1][:, None] - xi2[None, :]
        c[1:] = d2[2]
        if self.bottom == "decay":
            b[0] = (-2 - 2 * h0 * self.axi) / h0**2 - xi2
        else:
            b[0] = -2 / h0**2 - xi2
        c[0] = 2 / h0**2
        # batched Thomas; the top neighbour (fixed level) drops out
        cp = np.empty((nl, n))
        dp = np.empty((nl, n), complex)
        cp[0] = c[0] / b[0]
        dp[0] = r[0] / b[0]
        for j in range(1, nl):
            den = b[j] - a[j] * cp[j - 1]
            cp[j] = c[j] / den
            dp[j] = (r[j] - a[j] * dp[j - 1]) / den
        x = np.empty((nl, n), complex)
        x[-1] = dp[-1]
        for j in range(nl - 2, -1, -1):
            x[j] = dp[j] - cp[j] * x[j + 1]
        return x


def _pad(c, m):
    n = c.shape[-1]
    out = np.zeros(c.shape[:-1] + (m,), complex)
    h = n // 2
    out[..., :h] = c[..., :h]
    out[..., m - h + 1 :] = c[..., h + 1 :]
    return out


def _trunc(c, n):
    m = c.shape[-1]
    out = np.zeros(c.shape[:-1] + (n,), complex)
    h = n // 2
    out[..., :h] = c[..., :h]
    out[..., h + 1 :] = c[..., m - h + 1 :]
    return out


def solve_strip(p: StripProblem) -> VerticalProfile:
    """Solve the strip problem; returns ``grad phi`` coefficients on the z-levels."""
    st = p.state
    steep = st.steepness
    if steep > STEEPNESS_LIMIT:
        raise OracleError(f"steepness {steep:.3g} exceeds {STEEPNESS_LIMIT}")
    op = _StripOperator(p)
    z = op.z
    nl, n = op.nl, op.n
    axi = op.axi
    psi = st.psi.coeffs
    E = np.exp(np.outer(z, axi))
    if p.lifted:
        # rhs is minus (P - Laplacian) applied to the harmonic extension
        phi0 = E * psi
        uz0 = axi * phi0
        uzz0 = axi**2 * phi0
        f = -op._products(uz0[:-1], uzz0[:-1])
        top = np.zeros(n, complex)
    else:
        f = np.zeros((nl, n), complex)
        top = psi.copy()
    zero_top = np.zeros(n, complex)
    # affine part from the fixed top level
    base = op.apply(np.zeros((nl, n), complex), top)
    rhs = (f - base).ravel()
    shape = (nl, n)

    A = LinearOperator((nl * n, nl * n), matvec=lambda v: op.apply(v.reshape(shape), zero_top).ravel(),
                       dtype=complex)
    M = LinearOperator((nl * n, nl * n), matvec=lambda v: op.flat_solve(v.reshape(shape)).ravel(),
                       dtype=complex)
    # defect correction with the flat inverse contracts at a rate set by the
    # steepness; GMRES takes over if it stalls
    sol = M.matvec(rhs)
    scale = max(np.linalg.norm(sol), 1e-300)
    prev = np.inf
    for _ in range(p.max_sweeps):
        upd = M.matvec(rhs - A.matvec(sol))
        sol = sol + upd
        du = np.linalg.norm(upd)
        # stop at tolerance or once round-off stalls the contraction
        if du <= p.rtol * scale or (du > 0.5 * prev and du <= 1e3 * p.rtol * scale):
            break
        prev = du
    else:
        sol, info = gmres(A, rhs, x0=sol, M=M, rtol=1e-12, restart=40, maxiter=20)
        if info < 0:
            raise OracleError(f"linear solver failure (info={info})")
    u = sol.reshape(shape)
    res = np.linalg.norm(op.apply(u, top).ravel() - f.ravel())
    rel_res = res / max(np.linalg.norm(f), np.linalg.norm(base), 1e-300)
    if not np.isfinite(rel_res) or rel_res > p.residual_tol:
        raise OracleError(f"residual {rel_res:.3g} above tolerance {p.residual_tol:.3g}")
    u_full = np.vstack([u, top[None, :]])
    uz, _ = op._dz(u_full)
    w3, w2, w1 = _top_derivative_weights(z)
    uz_top = w3 * u_full[-3] + w2 * u_full[-2] + w1 * u_full[-1]
    phi_z = np.vstack([uz, uz_top[None, :]])
    phi_x = op.ixi * u_full
    if p.lifted:
        phi_z = phi_z + axi * E * psi
        phi_x = phi_x + op.ixi * E * psi
    prof = VerticalProfile(z, phi_x, phi_z, st.grid, [float(rel_res)])
    return prof


def _G_from_profile(prof: VerticalProfile, st: WaveState) -> SpectralField:
    hx = ddx(st.h)
    pz0 = SpectralField(st.grid, prof.phi_z[-1].copy(), True)
    return pseudo(lambda a, b, c: (1.0 + a * a) * b - a * c, hx, pz0, ddx(st.psi))


def oracle_G(p: StripProblem, richardson: bool = True) -> SpectralField:
    """``G(h) psi`` from the strip solve; Richardson-extrapolated over ``nz, 2 nz``."""
    g1 = _G_from_profile(solve_strip(p), p.state)
    if not richardson:
        return g1
    g2 = _G_from_profile(solve_strip(p.refined(2)), p.state)
    return g2 + (g2 - g1) * (1.0 / 3.0)


def oracle_dn(p: StripProblem, richardson: bool = True, with_coefficient: bool = False) -> DNResult:
    st = p.state
    G = oracle_G(p, richardson)
    B, V = trace_quantities(G, st)
    a = alpha = None
    if with_coefficient:
        def G_of(w):
            q = dataclasses.replace(p, state=WaveState(st.h, w, st.t))
            return oracle_G(q, richardson)
        a, alpha = taylor_coefficient(st, B, V, G_of)
    return DNResult(G, B, V, a, alpha, "oracle", None, False, {"richardson": richardson})
