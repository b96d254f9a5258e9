"""Sample grids on the unit sphere and exact FFT resampling between them.

A grid has ``n_theta`` half-cell-shifted polar samples ``(i + 1/2) pi / n_theta``
(no pole samples) and ``n_phi`` (even) azimuthal samples ``2 pi k / n_phi``.
Arrays are stored as ``(n_theta, n_phi)``: each theta index is a *column* of
``n_phi`` samples, and columns are the unit of distribution across ranks.

Resampling in theta uses the continuation ``f(2 pi - theta, phi) =
f(theta, phi + pi)``: folding turns the ``n_phi / 2`` great circles through
the poles into periodic sequences of ``2 n_theta`` samples, which are then
resampled with the same spectral zero-padding as the phi direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def truncation_order(box_diameter: float, k: float, digits: float) -> int:
    """Excess-bandwidth multipole truncation, floored at 4."""
    if not (box_diameter > 0 and digits > 0):
        raise ValueError("box diameter and digits must be positive")
    if k <= 0:
        raise ValueError("truncation order needs a Helmholtz wavenumber k > 0")
    kd = k * box_diameter
    # 1e-9 guards against 4.0000000001-style rounding of exact values
    return max(4, math.ceil(kd + 1.8 * digits ** (2 / 3) * kd ** (1 / 3) - 1e-9))


def sample_dims(trunc_order: int) -> tuple[int, int]:
    """(n_theta, n_phi) used for a truncation order.

    Both directions carry ``2 L + 2`` samples: enough for the uniform-theta
    quadrature to integrate products of two degree-``L`` patterns exactly.
    """
    n = 2 * trunc_order + 2
    return n, n


@dataclass(frozen=True)
class LevelSampling:
    level: int
    trunc_order: int
    n_theta: int
    n_phi: int

    def __post_init__(self):
        if self.n_theta < self.trunc_order + 1 or self.n_phi < 2 * self.trunc_order + 2:
            raise ValueError("grid too coarse for the truncation order")
        if self.n_phi % 2:
            raise ValueError("n_phi must be even")

    @property
    def dims(self) -> tuple[int, int]:
        return self.n_theta, self.n_phi

    @property
    def n_samples(self) -> int:
        return self.n_theta * self.n_phi

    @classmethod
    def for_box(cls, level: int, box_side: float, k: float, digits: float) -> "LevelSampling":
        # the box diameter is its diagonal
        lt = truncation_order(math.sqrt(3) * box_side, k, digits)
        return cls(level, lt, *sample_dims(lt))


def thetas(n_theta: int) -> np.ndarray:
    return (np.arange(n_theta) + 0.5) * math.pi / n_theta


def phis(n_phi: int) -> np.ndarray:
    return np.arange(n_phi) * 2 * math.pi / n_phi


def directions(n_theta: int, n_phi: int, columns: tuple[int, int] | None = None) -> np.ndarray:
    """Unit vectors ``(ncols, n_phi, 3)`` of the grid (or of a column range)."""
    th = thetas(n_theta)
    if columns is not None:
        th = th[columns[0]:columns[1]]
    ph = phis(n_phi)
    st, ct = np.sin(th)[:, None], np.cos(th)[:, None]
    return np.stack([st * np.cos(ph), st * np.sin(ph), np.broadcast_to(ct, (len(th), n_phi))], axis=-1)


def quadrature_weights(n_theta: int, n_phi: int) -> np.ndarray:
    """Weights for integrating over the unit sphere on the grid (sum 4 pi).

    Fejer's first rule in cos(theta) on the shifted theta nodes, uniform
    2 pi / n_phi in phi.
    """
    th = thetas(n_theta)
    kk = np.arange(1, n_theta // 2 + 1)
    w = (2.0 / n_theta) * (1 - 2 * (np.cos(2 * np.outer(th, kk)) / (4 * kk ** 2 - 1)).sum(axis=1))
    return np.repeat(w[:, None] * (2 * math.pi / n_phi), n_phi, axis=1)


@dataclass
class SphereGrid:
    samples: np.ndarray  # (n_theta, n_phi) complex

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=complex)
        if self.samples.ndim != 2 or min(self.samples.shape) < 1:
            raise ValueError("samples must be a nonempty 2-D array")
        if self.samples.shape[1] % 2:
            raise ValueError("n_phi must be even")

    @property
    def n_theta(self) -> int:
        return self.samples.shape[0]

    @property
    def n_phi(self) -> int:
        return self.samples.shape[1]

    @property
    def dims(self) -> tuple[int, int]:
        return self.samples.shape

    def to_json(self) -> list:
        return [[[z.real, z.imag] for z in row] for row in self.samples.tolist()]

    @classmethod
    def from_json(cls, data) -> "SphereGrid":
        arr = np.asarray(data, dtype=float)
        return cls(arr[..., 0] + 1j * arr[..., 1])


# ------------------------------------------------------------ 1-D kernels

def _signed_freqs(n: int) -> np.ndarray:
    return np.fft.fftfreq(n, 1.0 / n)


def _pad(c: np.ndarray, m: int, adjoint: bool = False) -> np.ndarray:
    """Zero-pad spectra (last axis) from n to m > n bins.

    An even-length input's Nyquist bin is split evenly between +n/2 and
    -n/2. ``adjoint`` gives the transpose map m -> n instead.
    """
    if adjoint:
        n, m = m, c.shape[-1]
        out = np.empty(c.shape[:-1] + (n,), dtype=complex)
        k = n // 2
        if n % 2 == 0:
            out[..., :k] = c[..., :k]
            out[..., k + 1:] = c[..., m - (k - 1):] if k > 1 else c[..., m:m]
            out[..., k] = (c[..., k] + c[..., m - k]) / 2
        else:
            out[..., :k + 1] = c[..., :k + 1]
            out[..., k + 1:] = c[..., m - k:] if k else c[..., m:m]
        return out
    n = c.shape[-1]
    out = np.zeros(c.shape[:-1] + (m,), dtype=complex)
    k = n // 2
    if n % 2 == 0:
        out[..., :k] = c[..., :k]
        if k > 1:
            out[..., m - (k - 1):] = c[..., k + 1:]
        out[..., k] = c[..., k] / 2
        out[..., m - k] += c[..., k] / 2
    else:
        out[..., :k + 1] = c[..., :k + 1]
        if k:
            out[..., m - k:] = c[..., n - k:]
    return out


def _truncate(c: np.ndarray, m: int) -> np.ndarray:
    """Keep the m lowest bins; an even m folds both +-m/2 bins together."""
    n = c.shape[-1]
    out = np.empty(c.shape[:-1] + (m,), dtype=complex)
    k = m // 2
    if m % 2 == 0:
        out[..., :k] = c[..., :k]
        if k > 1:
            out[..., k + 1:] = c[..., n - (k - 1):]
        out[..., k] = c[..., k] + c[..., n - k]
    else:
        out[..., :k + 1] = c[..., :k + 1]
        if k:
            out[..., m - k:] = c[..., n - k:]
    return out


def _shift_phase(size: int, n_from: int, n_to: int) -> np.ndarray:
    # re-centres half-cell-shifted samples from spacing 2pi/n_from to 2pi/n_to
    f = _signed_freqs(size)
    return np.exp(1j * f * (math.pi / n_to - math.pi / n_from))


def resample(x: np.ndarray, m: int, shifted: bool = False) -> np.ndarray:
    """Trigonometric resampling of periodic rows (last axis) to ``m`` samples.

    Upsampling is exact for band-limited rows; downsampling truncates the
    spectrum. ``shifted`` selects samples at ``(j + 1/2) * 2 pi / n``.
    """
    n = x.shape[-1]
    if m == n:
        return np.array(x, dtype=complex, copy=True)
    c = np.fft.fft(x, axis=-1) / n
    if m > n:
        c = _pad(c, m)
        if shifted:
            c *= _shift_phase(m, n, m)
    else:
        if shifted:
            c *= _shift_phase(n, n, m)
        c = _truncate(c, m)
    return np.fft.ifft(c, axis=-1) * m


def resample_adjoint(y: np.ndarray, n: int, shifted: bool = False) -> np.ndarray:
    """Adjoint (conjugate transpose) of ``resample(., m)`` for m > n."""
    m = y.shape[-1]
    if m == n:
        return np.array(y, dtype=complex, copy=True)
    if m < n:
        raise ValueError("adjoint is only provided for upsampling")
    c = np.fft.fft(y, axis=-1)
    if shifted:
        c *= np.conj(_shift_phase(m, n, m))
    return np.fft.ifft(_pad(c, n, adjoint=True), axis=-1)


def fft_flops(n: int) -> int:
    return int(round(5 * n * math.log2(n))) if n > 1 else 0


def resample_flops(n: int, m: int, rows: int) -> int:
    """Counted real flops for resampling ``rows`` sequences n -> m."""
    if n == m or rows == 0:
        return 0
    return rows * (fft_flops(n) + fft_flops(m) + 6 * max(n, m))


def grid_resample_flops(src: tuple[int, int], dst: tuple[int, int], columns: int | None = None,
                        circles: int | None = None) -> int:
    """Flops of the phi stage on ``columns`` columns plus the theta stage on
    ``circles`` great circles (defaults: the whole grid)."""
    (nt, nph), (mt, mph) = src, dst
    up = mt >= nt
    big_phi = max(nph, mph)
    if columns is None:
        columns = nt if up else mt
    if circles is None:
        circles = big_phi // 2
    return resample_flops(nph, mph, columns) + resample_flops(2 * nt, 2 * mt, circles)


# ------------------------------------------------------- fold / transpose

def fold_transpose(samples) -> np.ndarray:
    """(..., n_theta, n_phi) grids -> (..., n_phi/2, 2 n_theta) great circles.

    Row ``k`` runs over the full circle through ``phi_k`` and ``phi_k + pi``:
    entry ``i < n_theta`` is ``f(theta_i, phi_k)`` and entry ``2 n_theta - 1 - i``
    is ``f(theta_i, phi_k + pi)``.
    """
    a = samples.samples if isinstance(samples, SphereGrid) else np.asarray(samples)
    nt, nph = a.shape[-2:]
    if nph % 2:
        raise ValueError("folding needs an even n_phi")
    h = nph // 2
    ext = np.empty(a.shape[:-2] + (h, 2 * nt), dtype=complex)
    ext[..., :nt] = np.swapaxes(a[..., :, :h], -1, -2)
    ext[..., nt:] = np.swapaxes(a[..., ::-1, h:], -1, -2)
    return ext


def unfold(ext: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fold_transpose`."""
    h, two_nt = ext.shape[-2:]
    if two_nt % 2:
        raise ValueError("circle length must be even")
    nt = two_nt // 2
    a = np.empty(ext.shape[:-2] + (nt, 2 * h), dtype=complex)
    a[..., :, :h] = np.swapaxes(ext[..., :nt], -1, -2)
    a[..., :, h:] = np.swapaxes(ext[..., nt:], -1, -2)[..., ::-1, :]
    return a


def _check_dims(src, dst, up: bool):
    (nt, nph), (mt, mph) = src, dst
    if min(nt, nph, mt, mph) < 1 or nph % 2 or mph % 2:
        raise ValueError("grid dimensions must be positive with even n_phi")
    if up and (mt < nt or mph < nph):
        raise ValueError(f"cannot interpolate {src} to the smaller grid {dst}")
    if not up and (mt > nt or mph > nph):
        raise ValueError(f"cannot anterpolate {src} to the larger grid {dst}")


def _as_array(grid) -> np.ndarray:
    return grid.samples if isinstance(grid, SphereGrid) else np.asarray(grid, dtype=complex)


def interpolate_array(a: np.ndarray, dst_dims: tuple[int, int]) -> np.ndarray:
    """:func:`fft_interpolate` on a stack ``(..., n_theta, n_phi)``."""
    _check_dims(a.shape[-2:], dst_dims, up=True)
    mt, mph = dst_dims
    a = resample(a, mph)
    return unfold(resample(fold_transpose(a), 2 * mt, shifted=True))


def anterpolate_array(a: np.ndarray, dst_dims: tuple[int, int]) -> np.ndarray:
    """:func:`fft_anterpolate` on a stack ``(..., n_theta, n_phi)``."""
    _check_dims(a.shape[-2:], dst_dims, up=False)
    nt, nph = dst_dims
    ext = resample(fold_transpose(a), 2 * nt, shifted=True)
    return resample(unfold(ext), nph)


def fft_interpolate(src, dst_dims: tuple[int, int]) -> SphereGrid:
    """Exact trigonometric interpolation onto a finer grid."""
    return SphereGrid(interpolate_array(_as_array(src), dst_dims))


def fft_anterpolate(src, dst_dims: tuple[int, int]) -> SphereGrid:
    """Spectral truncation onto a coarser grid (the reverse of interpolation)."""
    return SphereGrid(anterpolate_array(_as_array(src), dst_dims))


def fft_interpolate_adjoint(fine, dst_dims: tuple[int, int]) -> SphereGrid:
    """Conjugate transpose of :func:`fft_interpolate` (Euclidean inner product)."""
    return SphereGrid(interpolate_adjoint_array(_as_array(fine), dst_dims))


def interpolate_adjoint_array(y: np.ndarray, dst_dims: tuple[int, int]) -> np.ndarray:
    _check_dims(dst_dims, y.shape[-2:], up=True)
    nt, nph = dst_dims
    ext = resample_adjoint(fold_transpose(y), 2 * nt, shifted=True)
    return resample_adjoint(unfold(ext), nph)


def weighted_anterpolate_array(a: np.ndarray, dst_dims: tuple[int, int]) -> np.ndarray:
    """Quadrature-consistent coarsening ``W_c^-1 I^T W_f``.

    Exact for integrals against any pattern band-limited to the coarse grid:
    ``sum_c w_c out g = sum_f w_f a (I g)``. The theta weights are constant
    along a column, so the weighting is local to whoever holds the column.
    """
    wf = quadrature_weights(*a.shape[-2:])
    wc = quadrature_weights(*dst_dims)
    return interpolate_adjoint_array(a * wf, dst_dims) / wc


def resample_grid(src, dst_dims: tuple[int, int]) -> SphereGrid:
    a = _as_array(src)
    if tuple(dst_dims) == a.shape:
        return SphereGrid(a.copy())
    if dst_dims[0] >= a.shape[0] and dst_dims[1] >= a.shape[1]:
        return fft_interpolate(a, dst_dims)
    return fft_anterpolate(a, dst_dims)


# ----------------------------------------------- fine-grained parallel form

def circle_layout(users, n_circles: int) -> dict[int, tuple[int, int]]:
    """Equal contiguous split of the great circles among sorted users."""
    from .tree import split_evenly
    users = sorted(users)
    return dict(zip(users, split_evenly(n_circles, len(users))))


def parallel_resample(comm, users, block: np.ndarray, src_layout: dict, dst_layout: dict,
                      src_dims: tuple[int, int], dst_dims: tuple[int, int], tag,
                      phase: str = "m2m", adjoint: bool = False) -> np.ndarray:
    """Collective resampling of a grid whose columns are spread over ``users``.

    ``block`` holds this rank's columns ``src_layout[rank]`` of the source
    grid; the return value holds columns ``dst_layout[rank]`` of the result.
    Phi resampling is local (first when upsampling, last when downsampling);
    theta resampling happens on whole great circles after an all-to-all,
    and a second all-to-all returns the samples to their column owners.
    Every user must call this with identical layouts. ``adjoint`` (down
    only) applies the transpose of interpolation instead of truncation.
    """
    rank = comm.rank
    users = sorted(users)
    (nt, nph), (mt, mph) = src_dims, dst_dims
    up = mt >= nt and mph >= nph
    _check_dims(src_dims, dst_dims, up=up)
    if adjoint and up:
        raise ValueError("the adjoint form only coarsens")

    def rs(x, n, shifted=False):
        return resample_adjoint(x, n, shifted) if adjoint else resample(x, n, shifted)

    big_phi = max(nph, mph)
    h = big_phi // 2
    circles = circle_layout(users, h)
    a0, b0 = src_layout.get(rank, (0, 0))
    block = np.asarray(block, dtype=complex).reshape(b0 - a0, nph)
    flops = 0
    if up and mph != nph:
        block = resample(block, mph)
        flops += resample_flops(nph, mph, b0 - a0)

    # fold + all-to-all: circle owners gather their circles' theta samples
    for s in users:
        c0, c1 = circles[s]
        if s == rank or b0 == a0 or c1 == c0:
            continue
        payload = np.stack([block[:, c0:c1], block[:, c0 + h:c1 + h]])
        comm.isend(s, (tag, 0), payload, phase=phase)
    c0, c1 = circles[rank]
    ext = np.empty((c1 - c0, 2 * nt), dtype=complex)
    for r in users:
        a, b = src_layout.get(r, (0, 0))
        if b == a or c1 == c0:
            continue
        if r == rank:
            p0, p1 = block[:, c0:c1], block[:, c0 + h:c1 + h]
        else:
            p0, p1 = comm.recv(r, (tag, 0))
        ext[:, a:b] = p0.T
        ext[:, 2 * nt - b:2 * nt - a] = p1[::-1].T
    ext = rs(ext, 2 * mt, shifted=True)
    flops += resample_flops(2 * nt, 2 * mt, c1 - c0)

    # unfold + all-to-all back to the destination column owners
    for t in users:
        a, b = dst_layout.get(t, (0, 0))
        if t == rank or b == a or c1 == c0:
            continue
        payload = np.stack([ext[:, a:b], ext[:, 2 * mt - b:2 * mt - a][:, ::-1]])
        comm.isend(t, (tag, 1), payload, phase=phase)
    a1, b1 = dst_layout.get(rank, (0, 0))
    out = np.empty((b1 - a1, big_phi), dtype=complex)
    for s in users:
        d0, d1 = circles[s]
        if d1 == d0 or b1 == a1:
            continue
        if s == rank:
            p0 = ext[:, a1:b1]
            p1 = ext[:, 2 * mt - b1:2 * mt - a1][:, ::-1]
        else:
            p0, p1 = comm.recv(s, (tag, 1))
        out[:, d0:d1] = p0.T
        out[:, d0 + h:d1 + h] = p1.T
    if not up and mph != nph:
        out = rs(out, mph)
        flops += resample_flops(nph, mph, b1 - a1)
    comm.record(phase, flops=flops)
    return out


def parallel_interpolate(comm, users, block: np.ndarray, src_layout: dict, dst_layout: dict,
                         src_dims: tuple[int, int], dst_dims: tuple[int, int],
                         tag="interp", phase: str = "m2m") -> np.ndarray:
    """Upsampling case of :func:`parallel_resample`."""
    if dst_dims[0] < src_dims[0] or dst_dims[1] < src_dims[1]:
        raise ValueError("parallel_interpolate only refines")
    return parallel_resample(comm, users, block, src_layout, dst_layout, src_dims, dst_dims,
                             tag, phase)
