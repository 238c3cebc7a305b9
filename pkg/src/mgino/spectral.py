"""Discrete Fourier transforms on the tape, spectral convolution, Fourier derivatives.

Convention: the forward transform is unnormalised and the inverse carries
``1/N``::

    X[k] = sum_n x[n] exp(-2 pi i k n / N)
    x[n] = (1/N) sum_k X[k] exp(+2 pi i k n / N)

Complex values are carried as ``(re, im)`` pairs of real tensors, so the
autodiff rule set stays real.
"""

from __future__ import annotations

import math
import string
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .neural import Module, activate


@dataclass
class ComplexArray:
    re: Tensor
    im: Tensor

    def __post_init__(self):
        if self.re.shape != self.im.shape:
            raise ValueError("real and imaginary parts differ in shape")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.re.shape

    def numpy(self) -> np.ndarray:
        return self.re.data + 1j * self.im.data


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def fft_radix2(x: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Iterative radix-2 FFT along the last axis (unnormalised both ways)."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if not _is_pow2(n):
        raise ValueError(f"radix-2 FFT needs a power-of-two length, got {n}")
    bits = n.bit_length() - 1
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((np.arange(n) >> b) & 1) << (bits - 1 - b)
    y = x[..., rev]
    sign = 1.0 if inverse else -1.0
    m = 2
    lead = y.shape[:-1]
    while m <= n:
        half = m // 2
        tw = np.exp(sign * 2j * np.pi * np.arange(half) / m)
        blocks = y.reshape(lead + (n // m, m))
        even = blocks[..., :half]
        odd = blocks[..., half:] * tw
        y = np.concatenate([even + odd, even - odd], axis=-1).reshape(lead + (n,))
        m *= 2
    return y


def dft_direct(x: np.ndarray, axis: int = -1, inverse: bool = False) -> np.ndarray:
    """O(N^2) transform along one axis by explicit matrix product."""
    x = np.moveaxis(np.asarray(x, dtype=np.complex128), axis, -1)
    n = x.shape[-1]
    k = np.arange(n)
    sign = 1.0 if inverse else -1.0
    mat = np.exp(sign * 2j * np.pi * np.outer(k, k) / n)
    out = x @ mat
    return np.moveaxis(out, -1, axis)


def dft_array(x: np.ndarray, dims: Sequence[int], inverse: bool = False,
              fast: bool = True) -> np.ndarray:
    """Plain-array transform over ``dims`` (inverse includes ``1/N``)."""
    out = np.asarray(x, dtype=np.complex128)
    for d in dims:
        n = out.shape[d]
        if fast and _is_pow2(n):
            out = np.moveaxis(fft_radix2(np.moveaxis(out, d, -1), inverse), -1, d)
        else:
            out = dft_direct(out, axis=d, inverse=inverse)
        if inverse:
            out = out / n
    return out


# -- differentiable transforms -------------------------------------------

def _apply_along(x: Tensor, mat: np.ndarray, axis: int) -> Tensor:
    """Contract ``axis`` of ``x`` (length n) with constant ``mat[n, k]``."""
    axis = axis % x.ndim
    letters = string.ascii_lowercase[: x.ndim]
    src = letters
    out = letters[:axis] + "z" + letters[axis + 1:]
    return ad.einsum(f"{src},{letters[axis]}z->{out}", x, ad.constant(mat))


def _complex_along(re: Tensor, im: Tensor | None, c: np.ndarray, s: np.ndarray,
                   axis: int) -> tuple[Tensor, Tensor]:
    """(re + i im) contracted with (c + i s) along ``axis``."""
    rc = _apply_along(re, c, axis)
    rs = _apply_along(re, s, axis)
    if im is None:
        return rc, rs
    ic = _apply_along(im, c, axis)
    is_ = _apply_along(im, s, axis)
    return rc - is_, rs + ic


def dft(x, dims: Sequence[int]) -> ComplexArray:
    """Forward transform of a real tensor over ``dims``; differentiable."""
    x = ad.constant(x)
    re: Tensor = x
    im: Tensor | None = None
    for d in dims:
        n = x.shape[d]
        k = np.arange(n)
        ang = 2.0 * np.pi * np.outer(k, k) / n
        re, im = _complex_along(re, im, np.cos(ang), -np.sin(ang), d)
    if im is None:
        im = ad.constant(np.zeros(x.shape))
    return ComplexArray(re, im)


def idft(z: ComplexArray, dims: Sequence[int]) -> Tensor:
    """Inverse transform, returning the real part."""
    re, im = z.re, z.im
    for d in dims:
        n = re.shape[d]
        k = np.arange(n)
        ang = 2.0 * np.pi * np.outer(k, k) / n
        re, im = _complex_along(re, im, np.cos(ang) / n, np.sin(ang) / n, d)
    return re


# -- spectral convolution ------------------------------------------------

def retained_modes(n: int, modes: int, half: bool) -> np.ndarray:
    """Signed wavenumbers kept on an axis of extent ``n``.

    ``half`` keeps ``0..modes-1`` (real-input last axis); otherwise the
    symmetric set ``-(modes-1)..modes-1`` reduced modulo ``n``.
    """
    if modes < 1:
        raise ValueError("modes must be >= 1")
    if half:
        m = min(modes, n // 2 + 1)
        return np.arange(m)
    seen: dict[int, int] = {}
    # smallest |k| wins when wavenumbers alias on a short axis
    for k in sorted(range(-(modes - 1), modes), key=lambda k: (abs(k), -k)):
        seen.setdefault(k % n, k)
    ks = np.array(sorted(seen.values()))
    return ks


def _hermitian_factor(ks: np.ndarray, n: int) -> np.ndarray:
    f = np.full(ks.shape, 2.0)
    f[ks == 0] = 1.0
    if n % 2 == 0:
        f[ks == n // 2] = 1.0
    return f


class SpectralBlock(Module):
    """``sigma(W v + F^-1(R . trunc(F v)) + b)`` on a regular grid.

    Weights ``R`` have layout ``[k..., c_out, c_in]``; only non-negative
    wavenumbers are stored along the last grid axis.
    """

    def __init__(self, c_in: int, c_out: int, modes: Sequence[int],
                 activation: str = "gelu", rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.c_in = c_in
        self.c_out = c_out
        self.modes = tuple(int(m) for m in modes)
        self.activation = activation
        ndim = len(self.modes)
        if ndim not in (1, 2):
            raise ValueError("SpectralBlock supports 1-D and 2-D grids")
        # two-sided axes store 2m-1 modes, the last axis m
        shape = tuple(2 * m - 1 for m in self.modes[:-1]) + (self.modes[-1], c_out, c_in)
        scale = 1.0 / (c_in * c_out)
        self.weight_re = ad.tensor(scale * rng.uniform(-1, 1, size=shape), requires_grad=True)
        self.weight_im = ad.tensor(scale * rng.uniform(-1, 1, size=shape), requires_grad=True)
        bound = 1.0 / math.sqrt(c_in)
        self.pointwise = ad.tensor(rng.uniform(-bound, bound, size=(c_in, c_out)),
                                   requires_grad=True)
        self.bias = ad.tensor(np.zeros(c_out), requires_grad=True)

    def __call__(self, v: Tensor) -> Tensor:
        return spectral_block_forward(self, v)


def _weight_slice(blk: SpectralBlock, grid: tuple[int, ...]):
    """Mode sets for ``grid`` and the matching slice of the stored weights."""
    ks_all = []
    index = []
    for ax, (n, m) in enumerate(zip(grid, blk.modes)):
        half = ax == len(grid) - 1
        ks = retained_modes(n, m, half)
        if half:
            pos = ks
        else:
            # stored order is -(m-1)..(m-1); position = k + m - 1
            pos = ks + (m - 1)
        ks_all.append(ks)
        index.append(pos)
    return ks_all, np.ix_(*index)


def spectral_block_forward(blk: SpectralBlock, v) -> Tensor:
    v = ad.constant(v)
    ndim = len(blk.modes)
    if v.ndim != ndim + 1 or v.shape[-1] != blk.c_in:
        raise ValueError(f"SpectralBlock expects [grid..., {blk.c_in}], got {v.shape}")
    grid = v.shape[:-1]
    ks_all, widx = _weight_slice(blk, grid)

    # forward transform restricted to retained modes, last axis first
    re: Tensor = v
    im: Tensor | None = None
    for ax in reversed(range(ndim)):
        n = grid[ax]
        ang = 2.0 * np.pi * np.outer(np.arange(n), ks_all[ax]) / n
        re, im = _complex_along(re, im, np.cos(ang), -np.sin(ang), ax)

    w_re = ad.getitem(blk.weight_re, widx)
    w_im = ad.getitem(blk.weight_im, widx)
    g = string.ascii_lowercase[:ndim]
    spec = f"{g}oc,{g}c->{g}o"
    z_re = ad.einsum(spec, w_re, re) - ad.einsum(spec, w_im, im)
    z_im = ad.einsum(spec, w_re, im) + ad.einsum(spec, w_im, re)

    # inverse: two-sided axes as full complex sums, last axis Hermitian
    for ax in range(ndim - 1):
        n = grid[ax]
        ang = 2.0 * np.pi * np.outer(ks_all[ax], np.arange(n)) / n
        z_re, z_im = _complex_along(z_re, z_im, np.cos(ang) / n, np.sin(ang) / n, ax)
    ax = ndim - 1
    n = grid[ax]
    ks = ks_all[ax]
    fac = (_hermitian_factor(ks, n) / n)[:, None]
    ang = 2.0 * np.pi * np.outer(ks, np.arange(n)) / n
    conv = _apply_along(z_re, fac * np.cos(ang), ax) - _apply_along(z_im, fac * np.sin(ang), ax)

    pointwise = ad.einsum(f"{g}c,co->{g}o", v, blk.pointwise)
    return activate(pointwise + conv + blk.bias, blk.activation)


# -- Fourier differentiation back-end ------------------------------------

def _check_uniform(coords: np.ndarray, tol: float = 1e-9) -> float:
    coords = np.asarray(coords, dtype=np.float64)
    steps = np.diff(coords)
    h = steps.mean()
    if np.max(np.abs(steps - h)) > tol * max(abs(h), 1.0):
        raise ValueError("Fourier differentiation requires a uniform grid")
    return float(h)


def fourier_derivative(u: np.ndarray, order: int, dim: int = 0, length: float = 1.0,
                       coords: np.ndarray | None = None) -> np.ndarray:
    """Spectral derivative along ``dim`` of samples on a periodic uniform grid.

    ``coords``, when given, are the sample positions along ``dim`` and are
    checked for uniform spacing.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    u = np.asarray(u, dtype=np.float64)
    n = u.shape[dim]
    if coords is not None:
        if len(coords) != n:
            raise ValueError("coords length does not match the grid")
        _check_uniform(coords)
    k = np.fft.fftfreq(n, d=1.0 / n)
    mult = (2j * np.pi * k / length) ** order
    if order % 2 == 1 and n % 2 == 0:
        mult[n // 2] = 0.0
    shape = [1] * u.ndim
    shape[dim] = n
    coeffs = dft_array(u, [dim])
    out = dft_array(coeffs * mult.reshape(shape), [dim], inverse=True)
    return out.real
