"""Grid, Fourier transforms, Littlewood-Paley cutoffs and multiplier engine.

Fourier convention on the centered torus ``[-L/2, L/2)``::

    f^(xi_j) = dx * sum_m f(x_m) exp(-i x_m xi_j),   xi_j = 2 pi j / L

so that the continuum inversion ``f = (1/2pi) int e^{ix xi} f^ d xi`` becomes
``f(x) = (1/L) sum_j f^_j exp(i x xi_j)``.  A bilinear operator with symbol
``q(xi - eta, eta)`` acts as

.. math::

    \\widehat{Q(f, g)}(\\xi) = \\frac{1}{L} \\sum_\\eta \\hat f(\\xi-\\eta)\\,
    \\hat g(\\eta)\\, q(\\xi-\\eta, \\eta),

which reproduces the pointwise product for ``q = 1``.

Coefficient arrays are stored in numpy FFT order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "Grid",
    "SpectralField",
    "BilinearSymbol",
    "TrilinearSymbol",
    "GridMismatchError",
    "BandRangeError",
    "SymbolValueError",
    "smootherstep",
    "psi_tilde",
    "psi_k",
    "psi_leq",
    "psi_geq",
    "theta",
    "theta_tilde",
    "lp_project",
    "band_range",
    "apply_multiplier",
    "abs_deriv",
    "half_deriv",
    "ddx",
    "product",
    "pseudo",
    "paraproduct",
    "remainder_product",
    "bilinear_apply",
    "bilinear_direct",
    "bilinear_at",
    "trilinear_apply",
    "sinfty_proxy",
    "ssqrt",
    "sgn_sqrt",
]


class GridMismatchError(ValueError):
    pass


class BandRangeError(ValueError):
    pass


class SymbolValueError(ValueError):
    pass


# ---------------------------------------------------------------- grid


@dataclass(frozen=True)
class Grid:
    n_points: int
    length: float

    def __post_init__(self):
        n = self.n_points
        if n < 2 or n & (n - 1):
            raise ValueError(f"n_points must be a power of two, got {n}")
        if not (self.length > 0 and math.isfinite(self.length)):
            raise ValueError(f"length must be positive, got {self.length}")

    @property
    def dx(self) -> float:
        return self.length / self.n_points

    @property
    def x(self) -> np.ndarray:
        return -0.5 * self.length + self.dx * np.arange(self.n_points)

    @property
    def modes(self) -> np.ndarray:
        """Integer mode numbers in FFT order."""
        return np.fft.fftfreq(self.n_points, 1.0 / self.n_points).astype(np.int64)

    @property
    def dxi(self) -> float:
        return 2.0 * np.pi / self.length

    @property
    def xi(self) -> np.ndarray:
        return self.dxi * self.modes

    @property
    def xi_nyquist(self) -> float:
        return np.pi * self.n_points / self.length

    @property
    def xi_min(self) -> float:
        return self.dxi

    @property
    def nyquist_index(self) -> int:
        return self.n_points // 2

    def _phase(self) -> np.ndarray:
        # exp(-i x_0 xi_j) with x_0 = -L/2 gives (-1)^j
        return np.where(self.modes % 2 == 0, 1.0, -1.0)

    def forward(self, values: np.ndarray) -> np.ndarray:
        return self.dx * self._phase() * np.fft.fft(values, axis=-1)

    def inverse(self, coeffs: np.ndarray) -> np.ndarray:
        return np.fft.ifft(coeffs * self._phase(), axis=-1) / self.dx

    def same(self, other: "Grid") -> bool:
        return self.n_points == other.n_points and self.length == other.length


# --------------------------------------------------------------- fields


class SpectralField:
    """Periodic field held through its Fourier coefficients.

    ``real`` marks fields whose physical samples are real; their coefficients
    are kept Hermitian.
    """

    __slots__ = ("grid", "coeffs", "real")

    def __init__(self, grid: Grid, coeffs, real: bool = False):
        c = np.asarray(coeffs, dtype=np.complex128)
        if c.shape != (grid.n_points,):
            raise ValueError(f"coeffs must have shape ({grid.n_points},), got {c.shape}")
        self.grid = grid
        self.coeffs = c
        self.real = bool(real)

    @classmethod
    def from_values(cls, grid: Grid, values, real: bool | None = None) -> "SpectralField":
        v = np.asarray(values)
        if real is None:
            real = not np.iscomplexobj(v)
        out = cls(grid, grid.forward(v.astype(np.complex128)), real)
        if real:
            out.coeffs = _hermitian(out.coeffs)
        return out

    @classmethod
    def zeros(cls, grid: Grid, real: bool = True) -> "SpectralField":
        return cls(grid, np.zeros(grid.n_points, complex), real)

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable, real: bool | None = None):
        return cls.from_values(grid, fn(grid.x), real)

    @property
    def values(self) -> np.ndarray:
        v = self.grid.inverse(self.coeffs)
        return v.real.copy() if self.real else v

    @property
    def series(self) -> np.ndarray:
        """Fourier-series amplitudes ``coeffs / L``."""
        return self.coeffs / self.grid.length

    def copy(self) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs.copy(), self.real)

    def with_coeffs(self, coeffs, real: bool | None = None) -> "SpectralField":
        return SpectralField(self.grid, coeffs, self.real if real is None else real)

    def _check(self, other: "SpectralField"):
        if not self.grid.same(other.grid):
            raise GridMismatchError(f"grid mismatch: {self.grid} vs {other.grid}")

    def __add__(self, other):
        if isinstance(other, SpectralField):
            self._check(other)
            return SpectralField(self.grid, self.coeffs + other.coeffs, self.real and other.real)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, SpectralField):
            self._check(other)
            return SpectralField(self.grid, self.coeffs - other.coeffs, self.real and other.real)
        return NotImplemented

    def __neg__(self):
        return SpectralField(self.grid, -self.coeffs, self.real)

    def __mul__(self, c):
        if isinstance(c, SpectralField):
            return product(self, c)
        if np.isscalar(c):
            real = self.real and np.isrealobj(c)
            return SpectralField(self.grid, self.coeffs * c, real)
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self * (1.0 / c)

    def norm(self) -> float:
        """L^2 norm on the torus (Parseval)."""
        return float(np.sqrt(np.sum(np.abs(self.coeffs) ** 2) / self.grid.length))

    def inner(self, other: "SpectralField") -> complex:
        """``int f conj(g) dx``."""
        self._check(other)
        return complex(np.sum(self.coeffs * np.conj(other.coeffs)) / self.grid.length)

    def mean(self) -> complex:
        return self.coeffs[0] / self.grid.length

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def __repr__(self):
        return f"SpectralField(n={self.grid.n_points}, L={self.grid.length}, real={self.real})"


def _hermitian(c: np.ndarray) -> np.ndarray:
    n = c.size
    idx = (-np.arange(n)) % n
    out = 0.5 * (c + np.conj(c[idx]))
    return out


# -------------------------------------------------------------- cutoffs


def smootherstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * s * (s * (6.0 * s - 15.0) + 10.0)


def psi_tilde(x):
    """Even bump: 1 on ``[-5/4, 5/4]``, 0 outside ``[-3/2, 3/2]``."""
    ax = np.abs(np.asarray(x, dtype=float))
    return 1.0 - smootherstep((ax - 1.25) * 4.0)


def psi_leq(xi, k):
    return psi_tilde(np.asarray(xi, dtype=float) / 2.0**k)


def psi_k(xi, k):
    xi = np.asarray(xi, dtype=float)
    return psi_tilde(xi / 2.0**k) - psi_tilde(xi / 2.0 ** (k - 1))


def psi_geq(xi, k):
    return 1.0 - psi_leq(xi, k - 1)


def _phi(u):
    return 1.0 - smootherstep(np.asarray(u) + 10.0)


def theta(a, b):
    """Low-high cutoff, 1 when ``|a| <= 2^-10 |b|`` and 0 when ``|a| >= 2^-9 |b|``."""
    a = np.abs(np.asarray(a, dtype=float))
    b = np.abs(np.asarray(b, dtype=float))
    a, b = np.broadcast_arrays(a, b)
    out = np.zeros(a.shape)
    both = (a > 0) & (b > 0)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        u = np.log2(np.where(both, a, 1.0) / np.where(both, b, 1.0))
    out[both] = _phi(u[both])
    out[(a == 0) & (b > 0)] = 1.0
    return out if out.ndim else float(out)


def theta_tilde(a, b):
    return 1.0 - theta(a, b) - theta(b, a)


def band_range(grid: Grid) -> tuple[int, int]:
    """Dyadic bands whose support meets the nonzero lattice frequencies."""
    lo = math.floor(math.log2(grid.xi_min / 1.5)) + 1
    hi = math.ceil(math.log2(grid.xi_nyquist / 0.625)) - 1
    while 1.5 * 2.0**lo <= grid.xi_min:
        lo += 1
    while 0.625 * 2.0 ** (hi + 1) < grid.xi_nyquist:
        hi += 1
    return lo, hi


def lp_project(f: SpectralField, k: int) -> SpectralField:
    lo, hi = band_range(f.grid)
    if not lo <= k <= hi:
        raise BandRangeError(f"band k={k} outside resolvable range [{lo}, {hi}]")
    return f.with_coeffs(psi_k(f.grid.xi, k) * f.coeffs)


# ---------------------------------------------------------- multipliers


def apply_multiplier(f: SpectralField, m, real: bool | None = None) -> SpectralField:
    """Fourier multiplier; ``m`` is a callable of xi or an array on the lattice."""
    vals = m(f.grid.xi) if callable(m) else m
    vals = np.broadcast_to(np.asarray(vals), f.coeffs.shape)
    populated = f.coeffs != 0
    bad = populated & ~np.isfinite(vals)
    if bad.any():
        j = int(np.flatnonzero(bad)[0])
        raise SymbolValueError(f"multiplier not finite at mode xi={f.grid.xi[j]:.6g}")
    out = np.zeros(f.coeffs.shape, complex)
    out[populated] = vals[populated] * f.coeffs[populated]
    if real is None:
        real = f.real
    if real:
        out = _fix_nyquist(out)
    return SpectralField(f.grid, out, real)


def _fix_nyquist(c: np.ndarray) -> np.ndarray:
    c = c.copy()
    c[c.size // 2] = c[c.size // 2].real
    return c


def abs_deriv(f: SpectralField, power: float = 1.0) -> SpectralField:
    """``|D|^power``; the zero mode maps to zero."""
    xi = np.abs(f.grid.xi)
    m = np.zeros_like(xi)
    nz = xi > 0
    m[nz] = xi[nz] ** power
    return apply_multiplier(f, m)


def half_deriv(f: SpectralField) -> SpectralField:
    return abs_deriv(f, 0.5)


def ddx(f: SpectralField, order: int = 1) -> SpectralField:
    m = (1j * f.grid.xi) ** order
    if order % 2:
        m[f.grid.nyquist_index] = 0.0
    return apply_multiplier(f, m)


# --------------------------------------------------- dealiased products


def _pad(c: np.ndarray, m: int) -> np.ndarray:
    n = c.size
    out = np.zeros(c.shape[:-1] + (m,), complex)
    h = n // 2
    out[..., :h] = c[..., :h]
    out[..., m - h + 1 :] = c[..., h + 1 :]
    # Nyquist mode is dropped: it has no unambiguous partner on the fine grid
    return out


def _truncate(c: np.ndarray, n: int) -> np.ndarray:
    m = c.shape[-1]
    out = np.zeros(c.shape[:-1] + (n,), complex)
    h = n // 2
    out[..., :h] = c[..., :h]
    out[..., h + 1 :] = c[..., m - h + 1 :]
    return out


def fine_values(fields, pad: float = 2.0):
    """Physical samples of each field on a zero-padded grid."""
    n = fields[0].grid.n_points
    m = int(round(pad * n))
    out = []
    for f in fields:
        if not f.grid.same(fields[0].grid):
            raise GridMismatchError("grid mismatch in product")
        v = np.fft.ifft(_pad(f.series, m)) * m
        out.append(v.real if f.real else v)
    return out


def from_fine(values: np.ndarray, grid: Grid, real: bool) -> SpectralField:
    m = values.shape[-1]
    series = np.fft.fft(values, axis=-1) / m
    c = _truncate(series, grid.n_points) * grid.length
    return SpectralField(grid, c, real)


def pseudo(fn: Callable, *fields: SpectralField, pad: float = 2.0, real: bool | None = None):
    """Evaluate a pointwise expression on the padded grid and truncate back."""
    vals = fine_values(fields, pad)
    res = fn(*vals)
    if real is None:
        real = all(f.real for f in fields)
    if real:
        res = np.real(res)
    return from_fine(res, fields[0].grid, real)


def product(*fields: SpectralField, pad: float | None = None) -> SpectralField:
    """Dealiased product; padding ``(p+1)/2`` is alias free for ``p`` factors."""
    if pad is None:
        pad = max(1.5, (len(fields) + 1) / 2.0)

    def mul(*vs):
        out = vs[0]
        for v in vs[1:]:
            out = out * v
        return out

    return pseudo(mul, *fields, pad=pad)


# ---------------------------------------------------- bilinear symbols


@dataclass
class BilinearSymbol:
    """Symbol ``q(xi - eta, eta)`` with optional cached lattice samples.

    ``evaluator`` takes broadcastable arrays ``(zeta, eta)`` with
    ``zeta = xi - eta`` and returns values.  ``hermitian`` declares
    ``q(-zeta, -eta) = conj(q(zeta, eta))`` (real inputs give real output).
    """

    evaluator: Callable
    name: str = "q"
    hermitian: bool = True
    _cache: dict = field(default_factory=dict, repr=False)

    def __call__(self, zeta, eta):
        return self.evaluator(np.asarray(zeta, dtype=float), np.asarray(eta, dtype=float))

    def column(self, grid: Grid, m: int) -> np.ndarray:
        """Samples on the valid rows of column ``eta = m dxi`` (centered order)."""
        zeta = _column_zeta(grid, m)
        eta = np.full(zeta.shape, m * grid.dxi)
        return np.asarray(self(zeta, eta), dtype=complex)

    def cache(self, grid: Grid) -> "BilinearSymbol":
        key = (grid.n_points, grid.length)
        if key not in self._cache:
            n = grid.n_points
            self._cache[key] = {m: self.column(grid, m) for m in range(-n // 2, n // 2)}
        return self

    def cached_column(self, grid: Grid, m: int):
        tab = self._cache.get((grid.n_points, grid.length))
        return None if tab is None else tab[m]

    def clear_cache(self):
        self._cache.clear()


def _column_rows(n: int, m: int) -> tuple[slice, slice]:
    """Centered-index slices (zeta rows, xi rows) for column eta = m."""
    if m >= 0:
        return slice(0, n - m), slice(m, n)
    return slice(-m, n), slice(0, n + m)


def _column_zeta(grid: Grid, m: int) -> np.ndarray:
    n = grid.n_points
    zrows, _ = _column_rows(n, m)
    return grid.dxi * np.arange(-n // 2, n // 2)[zrows]


def _as_symbol(q) -> BilinearSymbol:
    if isinstance(q, BilinearSymbol):
        return q
    if callable(q):
        return BilinearSymbol(q, hermitian=False)
    raise TypeError("symbol must be a BilinearSymbol or callable")


def bilinear_apply(q, f: SpectralField, g: SpectralField, dense: bool = False) -> SpectralField:
    """Apply ``Q(f, g)`` by column accumulation over ``eta``.

    Columns are visited in increasing ``eta``; each column adds one term to
    each output row, so skipping columns with ``g^(eta) = 0`` (the default
    fast path) is bitwise identical to the dense sum (``dense=True``).
    Output modes that fall outside the lattice are dropped.
    """
    q = _as_symbol(q)
    f._check(g)
    grid = f.grid
    n = grid.n_points
    fc = np.fft.fftshift(f.coeffs)
    gc = np.fft.fftshift(g.coeffs)
    out = np.zeros(n, complex)
    ms = range(-n // 2, n // 2)
    if not dense:
        if not fc.any():
            ms = []
        else:
            ms = [m for m in ms if gc[m + n // 2] != 0]
    for m in ms:
        zrows, xrows = _column_rows(n, m)
        vals = q.cached_column(grid, m)
        if vals is None:
            vals = q.column(grid, m)
        fz = fc[zrows]
        populated = fz != 0
        if not np.all(np.isfinite(vals[populated])):
            j = np.flatnonzero(populated & ~np.isfinite(vals))[0]
            zeta = (j + zrows.start - n // 2) * grid.dxi
            raise SymbolValueError(
                f"symbol {q.name} not finite at (xi-eta, eta)=({zeta:.6g}, {m * grid.dxi:.6g})"
            )
        term = gc[m + n // 2] * fz * np.where(populated, vals, 0)
        out[xrows] += term
    out /= grid.length
    coeffs = np.fft.ifftshift(out)
    real = f.real and g.real and q.hermitian
    if real:
        coeffs = _fix_nyquist(coeffs)
    return SpectralField(grid, coeffs, real)


def bilinear_at(q, f: SpectralField, g: SpectralField, modes) -> np.ndarray:
    """Coefficients of ``Q(f, g)`` at the integer output ``modes`` only.

    Same sum as :func:`bilinear_apply`, at ``O(N)`` cost per requested mode.
    """
    q = _as_symbol(q)
    f._check(g)
    grid = f.grid
    n = grid.n_points
    fc = np.fft.fftshift(f.coeffs)
    gc = np.fft.fftshift(g.coeffs)
    eta_m = np.arange(-n // 2, n // 2)
    out = np.zeros(len(modes), complex)
    for i, j in enumerate(modes):
        z_m = int(j) - eta_m
        ok = (z_m >= -n // 2) & (z_m < n // 2) & (gc != 0)
        if not ok.any():
            continue
        fz = fc[z_m[ok] + n // 2]
        vals = np.asarray(q(z_m[ok] * grid.dxi, eta_m[ok] * grid.dxi), complex)
        out[i] = np.sum(fz * gc[ok] * np.where(fz != 0, vals, 0)) / grid.length
    return out


def bilinear_direct(q, f: SpectralField, g: SpectralField) -> SpectralField:
    """Reference ``O(N^2)`` double loop with scalar symbol calls and fsum."""
    q = _as_symbol(q)
    grid = f.grid
    n = grid.n_points
    fm = {int(m): c for m, c in zip(grid.modes, f.coeffs)}
    gm = {int(m): c for m, c in zip(grid.modes, g.coeffs)}
    out = np.zeros(n, complex)
    for j, xi_m in enumerate(grid.modes):
        re, im = [], []
        for eta_m in range(-n // 2, n // 2):
            z_m = int(xi_m) - eta_m
            if not -n // 2 <= z_m < n // 2:
                continue
            a, b = fm[z_m], gm[eta_m]
            if a == 0 or b == 0:
                continue
            val = complex(q(np.array(z_m * grid.dxi), np.array(eta_m * grid.dxi)))
            t = a * b * val
            re.append(t.real)
            im.append(t.imag)
        out[j] = complex(math.fsum(re), math.fsum(im)) / grid.length
    real = f.real and g.real and q.hermitian
    if real:
        # the Nyquist mode has no partner on the lattice; real outputs keep its real part
        out = _fix_nyquist(out)
    return SpectralField(grid, out, real)


def paraproduct(a: SpectralField, f: SpectralField) -> SpectralField:
    """``T_a f``: low frequencies of ``a`` times high frequencies of ``f``.

    ``theta(xi - eta, eta)`` vanishes unless ``|xi - eta| < 2^-9 |eta|``, so
    only a narrow band of offsets contributes; the sum runs over those.
    """
    a._check(f)
    grid = f.grid
    n = grid.n_points
    ac = np.fft.fftshift(a.coeffs)
    fc = np.fft.fftshift(f.coeffs)
    m = np.arange(-n // 2, n // 2)
    out = np.zeros(n, complex)
    reach = n // 1024 + 1
    for j in range(-reach, reach + 1):
        aj = ac[j + n // 2] if -n // 2 <= j < n // 2 else 0.0
        if aj == 0:
            continue
        ok = (m + j >= -n // 2) & (m + j < n // 2)
        w = theta(j * grid.dxi, m[ok] * grid.dxi)
        out[m[ok] + j + n // 2] += aj * fc[ok] * w
    out /= grid.length
    coeffs = np.fft.ifftshift(out)
    real = a.real and f.real
    if real:
        coeffs = _fix_nyquist(coeffs)
    return SpectralField(grid, coeffs, real)


def remainder_product(a: SpectralField, b: SpectralField) -> SpectralField:
    return bilinear_apply(THETA_TILDE, a, b)


THETA = BilinearSymbol(lambda z, e: theta(z, e), name="theta")
THETA_TILDE = BilinearSymbol(lambda z, e: theta_tilde(z, e), name="theta_tilde")


# --------------------------------------------------- trilinear symbols


@dataclass
class TrilinearSymbol:
    """Symbol ``c(xi - eta, eta - sigma, sigma)``."""

    evaluator: Callable
    name: str = "c"
    hermitian: bool = True

    def __call__(self, a, b, c):
        return self.evaluator(
            np.asarray(a, dtype=float), np.asarray(b, dtype=float), np.asarray(c, dtype=float)
        )


def trilinear_apply(c, f: SpectralField, g: SpectralField, h: SpectralField, dense: bool = False):
    """``(1/L^2) sum f^(xi-eta) g^(eta-sigma) h^(sigma) c`` accumulated over (sigma, tau)."""
    if not isinstance(c, TrilinearSymbol):
        c = TrilinearSymbol(c, hermitian=False)
    f._check(g)
    f._check(h)
    grid = f.grid
    n = grid.n_points
    half = n // 2
    fc = np.fft.fftshift(f.coeffs)
    gc = np.fft.fftshift(g.coeffs)
    hc = np.fft.fftshift(h.coeffs)
    allm = np.arange(-half, half)
    zeta_all = grid.dxi * allm
    out = np.zeros(n, complex)
    for s in range(-half, half):
        if not dense and hc[s + half] == 0:
            continue
        for tau in range(-half, half):
            if not dense and gc[tau + half] == 0:
                continue
            shift = s + tau
            # zeta and xi = zeta + shift must lie on the lattice
            lo = max(-half, -half - shift)
            hi = min(half, half - shift)
            if lo >= hi:
                continue
            zrows = slice(lo + half, hi + half)
            z = zeta_all[zrows]
            vals = np.asarray(c(z, np.full(z.shape, tau * grid.dxi), np.full(z.shape, s * grid.dxi)), complex)
            fz = fc[zrows]
            populated = fz != 0
            if not np.all(np.isfinite(vals[populated])):
                raise SymbolValueError(f"symbol {c.name} not finite on a populated triple")
            term = (hc[s + half] * gc[tau + half]) * fz * np.where(populated, vals, 0)
            out[lo + shift + half : hi + shift + half] += term
    out /= grid.length**2
    coeffs = np.fft.ifftshift(out)
    real = f.real and g.real and h.real and c.hermitian
    if real:
        coeffs = _fix_nyquist(coeffs)
    return SpectralField(grid, coeffs, real)


# --------------------------------------------------------- S-inf proxy


def _band_samples(k: int, n: int) -> np.ndarray:
    lo, hi = 0.625 * 2.0**k, 1.5 * 2.0**k
    # open interval: the cutoff vanishes at the endpoints
    s = lo + (hi - lo) * (np.arange(n) + 0.5) / n
    return np.concatenate([-s[::-1], s])


def sinfty_proxy(q, k: int, k1: int, k2: int, samples: int = 48, rel_step: float = 1e-3) -> float:
    """Upper-bound proxy for the ``S^infty_{k,k1,k2}`` norm of ``q``.

    ``sup|q| + sum_{m=1,2} sum_j 2^{m k_j} sup|d_j^m q|`` over a sample
    lattice of the band supports, with derivatives by centered differences
    of step ``rel_step * 2^{k_j}``.
    """
    q = _as_symbol(q)
    z = _band_samples(k1, samples)
    e = _band_samples(k2, samples)
    Z, E = np.meshgrid(z, e, indexing="ij")
    keep = psi_k(Z + E, k) > 0
    if not keep.any():
        return 0.0
    Z = Z[keep]
    E = E[keep]
    hz = rel_step * 2.0**k1
    he = rel_step * 2.0**k2
    q0 = np.asarray(q(Z, E), complex)
    qzp = np.asarray(q(Z + hz, E), complex)
    qzm = np.asarray(q(Z - hz, E), complex)
    qep = np.asarray(q(Z, E + he), complex)
    qem = np.asarray(q(Z, E - he), complex)
    total = np.max(np.abs(q0))
    d1z = np.max(np.abs(qzp - qzm)) / (2 * hz)
    d1e = np.max(np.abs(qep - qem)) / (2 * he)
    d2z = np.max(np.abs(qzp - 2 * q0 + qzm)) / hz**2
    d2e = np.max(np.abs(qep - 2 * q0 + qem)) / he**2
    total += 2.0**k1 * d1z + 2.0**k2 * d1e + 4.0**k1 * d2z + 4.0**k2 * d2e
    return float(total)


# ------------------------------------------------------------- helpers


def ssqrt(x):
    """``|x|^{1/2}``."""
    return np.sqrt(np.abs(x))


def sgn_sqrt(x):
    """``x |x|^{-1/2}`` continued by 0 at the origin."""
    return np.sign(x) * np.sqrt(np.abs(x))
