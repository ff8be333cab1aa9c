"""Good unknowns, quadratic symbols, normal form and profiles.

Every bilinear symbol takes ``(zeta, eta)`` with ``zeta = xi - eta``.  With
``U = U1 + i U2`` the system reads, up to cubic terms,

    dt U1 - |D|^{1/2} U2 = Q1(U1, U2)
    dt U2 + |D|^{1/2} U1 = Q2(U1, U1) + Q3(U2, U2)

and the normal form ``V1 = U1 + A1(U1,U1) + A2(U2,U2)``,
``V2 = U2 + B(U1,U2)`` removes the quadratic terms.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .dirichlet_neumann import DNResult, WaveState, dn_taylor3
from .spectral_core import (
    BilinearSymbol,
    Grid,
    SpectralField,
    abs_deriv,
    bilinear_apply,
    paraproduct,
    sgn_sqrt,
    ssqrt,
    theta,
    theta_tilde,
)

DELTA_SING = 1e-8


# ------------------------------------------------------- good unknowns


@dataclass
class GoodUnknowns:
    omega: SpectralField
    U1: SpectralField
    U2: SpectralField
    t: float = 0.0

    @property
    def U(self) -> SpectralField:
        return SpectralField(self.U1.grid, self.U1.coeffs + 1j * self.U2.coeffs, False)


def good_unknowns(state: WaveState, dn: DNResult | None = None) -> GoodUnknowns:
    """``omega = psi - T_B h``, ``U1 = h + T_alpha h``, ``U2 = |D|^{1/2} omega``."""
    if dn is None:
        dn = dn_taylor3(state)
    if dn.alpha is None:
        raise ValueError("DN result lacks the Taylor coefficient")
    omega = state.psi - paraproduct(dn.B, state.h)
    U1 = state.h + paraproduct(dn.alpha, state.h)
    U2 = abs_deriv(omega, 0.5)
    return GoodUnknowns(omega, U1, U2, state.t)


# ------------------------------------------------------ quadratic symbols


def q1_1(z, e):
    return (z * sgn_sqrt(e) + ssqrt(e) ** 3 / 2) * theta(e, z)


def q1_2(z, e):
    return -np.abs(z) * ssqrt(e) * theta(z, e) / 2


def q1_3(z, e):
    x = z + e
    return (-np.abs(x) * ssqrt(e) + x * sgn_sqrt(e)) * theta_tilde(e, z)


def q1(z, e):
    return q1_1(z, e) + q1_2(z, e) + q1_3(z, e)


def q2(z, e):
    return ssqrt(z + e) * np.abs(e) * theta(e, z) / 2


def q3_bare(z, e):
    return ssqrt(z + e) * sgn_sqrt(z) * sgn_sqrt(e) * theta(e, z)


def q3_high_high(z, e):
    """Comparable-frequency part of the ``U2 U2`` interaction.

    Comes from ``-R(psi_x, psi_x)/2 + R(|D|psi, |D|psi)/2`` in the psi
    equation; needed for the ``U2`` equation to hold through quadratic order.
    """
    return 0.5 * ssqrt(z + e) * (ssqrt(z) * ssqrt(e) + sgn_sqrt(z) * sgn_sqrt(e)) * theta_tilde(z, e)


def q3_complete(z, e):
    return q3_bare(z, e) + q3_high_high(z, e)


# ----------------------------------------------------------- symbol table


@dataclass
class SymbolTable:
    """Quadratic and normal-form symbols.

    ``variant='bare'`` uses ``q3`` without high-high terms; ``'complete'`` adds the
    comparable-frequency ``U2 U2`` term (see :func:`q3_high_high`).
    """

    variant: str = "bare"
    delta: float = DELTA_SING
    exclusions: int = 0
    symbols: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in ("bare", "complete"):
            raise ValueError(f"unknown symbol variant {self.variant!r}")
        q3 = q3_bare if self.variant == "bare" else q3_complete
        self._q3 = q3
        mk = lambda fn, name: BilinearSymbol(fn, name=name, hermitian=True)
        self.symbols = {
            "q1_1": mk(q1_1, "q1_1"),
            "q1_2": mk(q1_2, "q1_2"),
            "q1_3": mk(q1_3, "q1_3"),
            "q1": mk(q1, "q1"),
            "q2": mk(q2, "q2"),
            "q3": mk(q3, "q3"),
            "A": mk(self.A, "A"),
            "a1": mk(self.a1, "a1"),
            "a2": mk(self.a2, "a2"),
            "b": mk(self.b, "b"),
        }

    def __getitem__(self, name) -> BilinearSymbol:
        return self.symbols[name]

    @property
    def q3(self):
        return self._q3

    # intermediate combination driving b
    def A(self, z, e):
        x = z + e
        q3 = self._q3
        return ssqrt(x) * q1(z, e) - (q2(z, e) + q2(e, z)) * ssqrt(e) + (q3(z, e) + q3(e, z)) * ssqrt(z)

    def denominator(self, z, e):
        s = np.abs(z) + np.abs(e) - np.abs(z + e)
        return -s * s + 4 * np.abs(z) * np.abs(e)

    def excluded(self, z, e):
        z, e = np.broadcast_arrays(np.asarray(z, float), np.asarray(e, float))
        return np.abs(self.denominator(z, e)) <= self.delta * np.abs(z) * np.abs(e)

    def _b_raw(self, z, e, ok):
        s = np.abs(z) + np.abs(e) - np.abs(z + e)
        D = np.where(ok, self.denominator(z, e), 1.0)
        return np.where(ok, (s * self.A(z, e) - 2 * self.A(e, z) * ssqrt(z) * ssqrt(e)) / D, 0.0)

    def _guard(self, z, e):
        z, e = np.broadcast_arrays(np.asarray(z, float), np.asarray(e, float))
        bad = self.excluded(z, e)
        self.exclusions += int(np.count_nonzero(bad))
        return z, e, ~bad

    def b(self, z, e):
        z, e, ok = self._guard(z, e)
        return self._b_raw(z, e, ok)

    def a1(self, z, e):
        z, e, ok = self._guard(z, e)
        b1 = self._b_raw(z, e, ok)
        b2 = self._b_raw(e, z, ok)
        rx = np.where(ok, ssqrt(z + e), 1.0)
        val = (b1 * ssqrt(e) - q2(z, e) + b2 * ssqrt(z) - q2(e, z)) / (2 * rx)
        return np.where(ok, val, 0.0)

    def a2(self, z, e):
        z, e, ok = self._guard(z, e)
        q3 = self._q3
        b1 = self._b_raw(z, e, ok)
        b2 = self._b_raw(e, z, ok)
        rx = np.where(ok, ssqrt(z + e), 1.0)
        val = -(b1 * ssqrt(z) + q3(z, e) + b2 * ssqrt(e) + q3(e, z)) / (2 * rx)
        return np.where(ok, val, 0.0)

    def residuals(self, z, e):
        """Residuals of the three linear equations the normal-form symbols solve."""
        z = np.asarray(z, float)
        e = np.asarray(e, float)
        q3 = self._q3
        rz, re_, rx = ssqrt(z), ssqrt(e), ssqrt(z + e)
        a1, a2 = self.a1(z, e), self.a2(z, e)
        b1, b2 = self.b(z, e), self.b(e, z)
        t1 = [q1(z, e), 2 * re_ * a1, -2 * rz * a2, -rx * b1]
        t2 = [q2(z, e), -b1 * re_, q2(e, z), -b2 * rz, 2 * rx * a1]
        t3 = [q3(z, e), q3(e, z), b1 * rz, b2 * re_, 2 * rx * a2]
        r1, r2, r3 = (sum(t) for t in (t1, t2, t3))
        # relative to the size of the terms that cancel; 1 where everything vanishes
        scale = np.maximum.reduce([sum(np.abs(v) for v in t) for t in (t1, t2, t3)] + [np.full(z.shape, 1e-300)])
        scale = np.where(scale > 1e-300, scale, 1.0)
        return r1, r2, r3, scale

    def cache(self, grid: Grid, names=("q1", "q2", "q3", "a1", "a2", "b")):
        for n in names:
            self.symbols[n].cache(grid)
        return self

    def export_csv(self, path, grid: Grid, names=("q1", "q2", "q3", "a1", "a2", "b")):
        """Lattice dump with columns ``zeta, eta, <name>_re, <name>_im``."""
        m = grid.modes
        Z, E = np.meshgrid(grid.dxi * m, grid.dxi * m, indexing="ij")
        Z, E = Z.ravel(), E.ravel()
        cols = [np.asarray(self.symbols[n](Z, E), complex) for n in names]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            header = ["zeta", "eta"]
            for n in names:
                header += [f"{n}_re", f"{n}_im"]
            w.writerow(header)
            for i in range(Z.size):
                row = [f"{Z[i]:.17g}", f"{E[i]:.17g}"]
                for c in cols:
                    row += [f"{c[i].real:.17g}", f"{c[i].imag:.17g}"]
                w.writerow(row)


def build_normal_form_symbols(grid: Grid | None = None, variant: str = "bare", cache: bool = False) -> SymbolTable:
    st = SymbolTable(variant)
    if cache and grid is not None:
        st.cache(grid)
    return st


def quadratic_rhs(gu: GoodUnknowns, st: SymbolTable):
    """``(Q1(U1,U2), Q2(U1,U1) + Q3(U2,U2))``."""
    Q1 = bilinear_apply(st["q1"], gu.U1, gu.U2)
    Q23 = bilinear_apply(st["q2"], gu.U1, gu.U1) + bilinear_apply(st["q3"], gu.U2, gu.U2)
    return Q1, Q23


def _symmetrized(sym: BilinearSymbol, f: SpectralField) -> SpectralField:
    # for f = g the swap average reduces to the symmetric part of the symbol
    sw = BilinearSymbol(lambda z, e: 0.5 * (sym(z, e) + sym(e, z)), name=sym.name + "_sym",
                        hermitian=sym.hermitian)
    return bilinear_apply(sw, f, f)


# ------------------------------------------------------------ normal form


@dataclass
class NormalFormed:
    V1: SpectralField
    V2: SpectralField
    t: float = 0.0
    exclusions: int = 0

    @property
    def V(self) -> SpectralField:
        return SpectralField(self.V1.grid, self.V1.coeffs + 1j * self.V2.coeffs, False)


def _support_filter(f: SpectralField, tol: float) -> SpectralField:
    if tol <= 0:
        return f
    c = f.coeffs.copy()
    c[np.abs(c) < tol * np.max(np.abs(c), initial=0.0)] = 0.0
    return f.with_coeffs(c)


def normal_form_corrections(gu: GoodUnknowns, st: SymbolTable, support_tol: float = 0.0):
    """``(A1(U1,U1) + A2(U2,U2), B(U1,U2))``.

    ``support_tol`` drops input modes below that fraction of the peak before
    the quadratic sums (0 keeps every mode).
    """
    U1 = _support_filter(gu.U1, support_tol)
    U2 = _support_filter(gu.U2, support_tol)
    A = bilinear_apply(st["a1"], U1, U1) + bilinear_apply(st["a2"], U2, U2)
    B = bilinear_apply(st["b"], U1, U2)
    return A, B


def apply_normal_form(gu: GoodUnknowns, st: SymbolTable, support_tol: float = 0.0) -> NormalFormed:
    before = st.exclusions
    A, B = normal_form_corrections(gu, st, support_tol)
    return NormalFormed(gu.U1 + A, gu.U2 + B, gu.t, st.exclusions - before)


def profile(nf, t: float) -> SpectralField:
    """``f^ = e^{it|xi|^{1/2}} V^`` for a NormalFormed or a complex field."""
    V = nf.V if isinstance(nf, NormalFormed) else nf
    lam = ssqrt(V.grid.xi)
    return SpectralField(V.grid, np.exp(1j * t * lam) * V.coeffs, False)


# ----------------------------------------------------------------- phases


@dataclass(frozen=True)
class PhaseFunction:
    signs: tuple

    def __call__(self, xi, eta, sigma):
        i1, i2, i3 = self.signs
        return ssqrt(xi) - i1 * ssqrt(xi - eta) - i2 * ssqrt(eta - sigma) - i3 * ssqrt(sigma)


def _band_vec(rng, ks):
    """Random signs and magnitudes on the plateau ``[3/4, 5/4] 2^k`` of each band."""
    ks = np.asarray(ks, dtype=float)
    mag = 2.0**ks * rng.uniform(0.75, 1.25, ks.size)
    return mag * rng.choice([-1.0, 1.0], ks.size)


def _ratio_98(rng, n):
    """Four-wave phase with ``xi - eta`` below every other frequency by 2^10 or more."""
    a = _band_vec(rng, rng.integers(-10, 11, n))  # eta - sigma
    c = _band_vec(rng, rng.integers(-10, 11, n))  # sigma
    s0 = a + c
    small = np.minimum.reduce([np.abs(a), np.abs(c), np.abs(s0)])
    zeta = rng.uniform(0.0, 1.0, n) * 2.0**-11 * small * rng.choice([-1.0, 1.0], n)
    xi = s0 + zeta
    keep = (theta(zeta, a) == 1) & (theta(zeta, c) == 1) & (theta(zeta, xi) == 1) & (small > 0)
    xi, zeta, a, c = xi[keep], zeta[keep], a[keep], c[keep]
    bound = np.sqrt(np.minimum.reduce([np.abs(xi), np.abs(a), np.abs(c)]))
    worst = np.inf
    for mu in (1, -1):
        for nu in (1, -1):
            for mu2 in (1, -1):
                for nu2 in (1, -1):
                    val = mu * ssqrt(xi) - nu * ssqrt(zeta) - mu2 * ssqrt(a) - nu2 * ssqrt(c)
                    worst = min(worst, float(np.min(np.abs(val) / bound)))
    return worst


def _ratio_5400(rng, n):
    """``Phi^{++-}`` when ``min k_i`` sits 10 bands below the median and
    some leg is 20 bands away from the output band; bound ``2^{k~/2}``."""
    phi = PhaseFunction((1, 1, -1))
    out = []
    while sum(map(len, out)) < n:
        m = 4 * n
        ks = rng.integers(-14, 15, (3, m))
        legs = [_band_vec(rng, k) for k in ks]
        xi = legs[0] + legs[1] + legs[2]
        nz = xi != 0
        k = np.round(np.log2(np.abs(np.where(nz, xi, 1.0))))
        srt = np.sort(ks, axis=0)
        ok = nz & (srt[1] - srt[0] >= 10) & (np.max(np.abs(ks - k), axis=0) >= 20)
        eta = legs[1] + legs[2]
        val = np.abs(phi(xi, eta, legs[2]))
        ktil = np.minimum(k, srt[1])
        out.append((val / 2.0 ** (ktil / 2))[ok])
    return float(np.min(np.concatenate(out)[:n]))


def _ratio_9970(rng, n):
    """Sum of ``|Phi|`` over ``(+++), (+--), (---)`` against ``2^{med k_i / 2}``."""
    phis = [PhaseFunction(s) for s in ((1, 1, 1), (1, -1, -1), (-1, -1, -1))]
    ks = rng.integers(-10, 11, (3, n))
    a, b, c = (_band_vec(rng, k) for k in ks)
    xi = a + b + c
    tot = sum(np.abs(p(xi, b + c, c)) for p in phis)
    med = np.median(ks, axis=0)
    return float(np.min(tot / 2.0 ** (med / 2)))


@dataclass
class PhaseReport:
    minima: dict
    samples: int

    def as_dict(self):
        return {"samples": self.samples, **{k: float(v) for k, v in self.minima.items()}}


def phase_bound_check(samples: int = 20000, seed: int = 0) -> PhaseReport:
    """Monte-Carlo minima of ``|Phi| / bound`` for the three lower bounds."""
    rng = np.random.default_rng(seed)
    minima = {
        "phase_98": _ratio_98(rng, samples),
        "phase_5400": _ratio_5400(rng, samples),
        "phase_9970": _ratio_9970(rng, samples),
    }
    return PhaseReport(minima, samples)


# ------------------------------------------------------ symbol-bound empirics


def _combo_q1_1(z, e):
    return q1_1(z, e) + q1_1(-(z + e), e)


def _combo_q2(z, e):
    return q2(e, z) + q1_2(-z, z + e)


def _combo_q3(q3):
    return lambda z, e: q3(z, e) + q3(-(z + e), e)


@dataclass
class SymbolBoundReport:
    """Sup ratios of the S-infinity proxy against the dyadic bounds.

    ``C_q``: sum of ``q1, q2, q3`` against ``2^{min/2 + max}``;
    ``C_cancel``: the symmetrized combinations against ``2^{3 min / 2}``;
    ``C_nf``: ``a1, a2, b`` against ``2^{max}``.
    """

    constants: dict
    samples: int
    pairs: int

    def as_dict(self):
        return {"samples": self.samples, "pairs": self.pairs, **self.constants}


def _gap_pairs(k_range, min_gap):
    # every symbol here is homogeneous with scale-invariant cutoffs, so the
    # ratios depend on k1 - k2 only; one centred pair per gap and order
    lo_k, hi_k = k_range
    out = []
    for d in range(min_gap, hi_k - lo_k + 1):
        a = max(lo_k, -((d + 1) // 2))
        if a + d > hi_k:
            continue
        out += [(a + d, a), (a, a + d)]
    return out


def symbol_bound_constants(st: SymbolTable, samples: int = 12, k_range=(-10, 10),
                           min_gap: int = 5, pairs=None) -> SymbolBoundReport:
    """Empirical constants over band pairs ``|k1 - k2| >= min_gap``.

    ``samples`` is the lattice count per leg and sign, so doubling it
    quadruples the sampled points.
    """
    from .spectral_core import sinfty_proxy

    qs = [st["q1"], st["q2"], st["q3"]]
    combos = [_combo_q1_1, _combo_q2, _combo_q3(st.q3)]
    nfs = [st["a1"], st["a2"], st["b"]]
    c_q = c_cancel = c_nf = 0.0
    pairs = _gap_pairs(k_range, min_gap) if pairs is None else list(pairs)
    for k1, k2 in pairs:
        lo, hi = min(k1, k2), max(k1, k2)
        for k in (hi - 1, hi, hi + 1):
            prox = lambda syms: sum(sinfty_proxy(s, k, k1, k2, samples) for s in syms)
            c_q = max(c_q, prox(qs) / 2.0 ** (lo / 2 + hi))
            c_cancel = max(c_cancel, prox(combos) / 2.0 ** (1.5 * lo))
            c_nf = max(c_nf, prox(nfs) / 2.0**hi)
    return SymbolBoundReport({"C_q": c_q, "C_cancel": c_cancel, "C_nf": c_nf}, samples, len(pairs))
