"""Complex arithmetic and discrete Fourier transforms.

Complex data is kept planar: one float64 array for the real parts and one
for the imaginary parts. Transforms act on the last axis and broadcast over
any leading axes.

Power-of-two lengths go through an iterative radix-2 decimation-in-time FFT
(bit-reversal permutation followed by in-place butterflies). Other lengths use
the direct O(n^2) sum, which also serves as the reference oracle in tests.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numba
import numpy as np

from .errors import DimensionError, InvalidArgumentError

__all__ = [
    "ComplexVector",
    "ComplexMatrix",
    "is_power_of_two",
    "next_power_of_two",
    "naive_dft",
    "fft_planar",
    "transform",
    "dft",
    "idft",
    "cmul",
    "magnitude",
]


@dataclass(frozen=True)
class ComplexVector:
    re: np.ndarray
    im: np.ndarray

    _ndim = 1

    def __post_init__(self):
        re = np.asarray(self.re, dtype=np.float64)
        im = np.asarray(self.im, dtype=np.float64)
        if re.shape != im.shape:
            raise DimensionError(f"re shape {re.shape} != im shape {im.shape}")
        if re.ndim != self._ndim:
            raise DimensionError(f"{type(self).__name__} needs {self._ndim}-d data, got {re.ndim}-d")
        object.__setattr__(self, "re", re)
        object.__setattr__(self, "im", im)

    @classmethod
    def from_complex(cls, z):
        z = np.asarray(z, dtype=np.complex128)
        return cls(z.real.copy(), z.imag.copy())

    @classmethod
    def zeros(cls, shape):
        return cls(np.zeros(shape), np.zeros(shape))

    @property
    def shape(self):
        return self.re.shape

    def __len__(self):
        return self.re.shape[0]

    def to_complex(self) -> np.ndarray:
        return self.re + 1j * self.im


@dataclass(frozen=True)
class ComplexMatrix(ComplexVector):
    re: np.ndarray
    im: np.ndarray

    _ndim = 2


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def next_power_of_two(n: int) -> int:
    if n < 1:
        raise InvalidArgumentError(f"length must be >= 1, got {n}")
    return 1 << (int(n) - 1).bit_length()


@lru_cache(maxsize=64)
def _fft_tables(n: int, sign: float):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    k = np.arange(n // 2)
    angle = sign * 2.0 * np.pi * k / n
    return rev, np.cos(angle), np.sin(angle)


@numba.njit(cache=True)
def _radix2_rows(re, im, rev, cw, sw):
    rows, n = re.shape
    out_re = np.empty_like(re)
    out_im = np.empty_like(im)
    for r in range(rows):
        for i in range(n):
            out_re[r, rev[i]] = re[r, i]
            out_im[r, rev[i]] = im[r, i]
        size = 2
        while size <= n:
            half = size // 2
            stride = n // size
            for start in range(0, n, size):
                for k in range(half):
                    wr = cw[k * stride]
                    wi = sw[k * stride]
                    a = start + k
                    b = a + half
                    br = out_re[r, b]
                    bi = out_im[r, b]
                    tr = br * wr - bi * wi
                    ti = br * wi + bi * wr
                    ar = out_re[r, a]
                    ai = out_im[r, a]
                    out_re[r, b] = ar - tr
                    out_im[r, b] = ai - ti
                    out_re[r, a] = ar + tr
                    out_im[r, a] = ai + ti
            size *= 2
    return out_re, out_im


def _as_rows(re, im):
    re = np.ascontiguousarray(re, dtype=np.float64)
    im = np.ascontiguousarray(im, dtype=np.float64)
    if re.shape != im.shape:
        raise DimensionError(f"re shape {re.shape} != im shape {im.shape}")
    if re.ndim == 0 or re.shape[-1] == 0:
        raise InvalidArgumentError("transform input must be non-empty")
    lead = re.shape[:-1]
    n = re.shape[-1]
    return re.reshape(-1, n), im.reshape(-1, n), lead, n


def fft_planar(re, im, inverse: bool = False):
    """Radix-2 FFT along the last axis. The length must be a power of two.

    The inverse transform includes the 1/n factor.
    """
    re2, im2, lead, n = _as_rows(re, im)
    if not is_power_of_two(n):
        raise InvalidArgumentError(f"radix-2 FFT needs a power-of-two length, got {n}")
    rev, cw, sw = _fft_tables(n, 1.0 if inverse else -1.0)
    out_re, out_im = _radix2_rows(re2, im2, rev, cw, sw)
    if inverse:
        out_re /= n
        out_im /= n
    return out_re.reshape(*lead, n), out_im.reshape(*lead, n)


@lru_cache(maxsize=64)
def _dft_matrix(n: int, sign: float):
    f = np.arange(n)
    angle = sign * 2.0 * np.pi * np.outer(f, f) / n
    return np.cos(angle), np.sin(angle)


def naive_dft(re, im, inverse: bool = False):
    """Direct O(n^2) evaluation of the DFT sum along the last axis."""
    re2, im2, lead, n = _as_rows(re, im)
    c, s = _dft_matrix(n, 1.0 if inverse else -1.0)
    # (c + i s)(re + i im), matrices are symmetric
    out_re = re2 @ c - im2 @ s
    out_im = re2 @ s + im2 @ c
    if inverse:
        out_re /= n
        out_im /= n
    return out_re.reshape(*lead, n), out_im.reshape(*lead, n)


def transform(re, im, inverse: bool = False):
    """Forward or inverse DFT of planar data, picking the FFT when it applies."""
    n = np.shape(re)[-1] if np.ndim(re) else 0
    if n and is_power_of_two(n):
        return fft_planar(re, im, inverse)
    return naive_dft(re, im, inverse)


def _planar(x):
    if isinstance(x, ComplexVector):
        return x.re, x.im
    x = np.asarray(x)
    if np.iscomplexobj(x):
        return x.real, x.imag
    x = x.astype(np.float64)
    return x, np.zeros_like(x)


def _check_finite(re, im):
    if not (np.all(np.isfinite(re)) and np.all(np.isfinite(im))):
        raise InvalidArgumentError("input contains NaN or Inf")


def dft(x) -> ComplexVector:
    """X(f) = sum_n x(n) exp(-2 pi i f n / N) for a real or complex vector."""
    re, im = _planar(x)
    if re.ndim != 1 or re.size == 0:
        raise InvalidArgumentError("dft expects a non-empty 1-d vector")
    _check_finite(re, im)
    return ComplexVector(*transform(re, im))


def idft(X) -> ComplexVector:
    re, im = _planar(X)
    if re.ndim != 1 or re.size == 0:
        raise InvalidArgumentError("idft expects a non-empty 1-d vector")
    _check_finite(re, im)
    return ComplexVector(*transform(re, im, inverse=True))


def cmul(a: ComplexVector, b: ComplexVector) -> ComplexVector:
    if a.shape != b.shape:
        raise DimensionError(f"cmul shape mismatch: {a.shape} vs {b.shape}")
    return type(a)(a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re)


def magnitude(a: ComplexVector) -> np.ndarray:
    return np.hypot(a.re, a.im)
