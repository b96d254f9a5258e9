"""Diagonal plane-wave operators: radiation patterns (C2M), centre shifts,
translation (M2L), quadrature (L2O) and the near-field block.

Conventions, chosen so the chain reproduces ``green``::

    g(r_o - r_s) = norm * sum_k w(k) e^{-jk k.(r_o - c_o)} T(k; c_o - c_s) e^{+jk k.(r_s - c_s)}

with ``norm = -jk / (16 pi^2)`` and ``T`` the truncated Hankel-Legendre series.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import spherical_jn, spherical_yn

from .kernel import pair_potential
from .sphere import SphereGrid, directions, quadrature_weights

# counted real flops per complex sample operation
CMUL_ADD = 8
EXP_FLOPS = 20
PAIR_FLOPS = 30  # one kernel evaluation in the near field


class FarFieldError(ValueError):
    """Translation requested between boxes that are too close."""


def _dirs(dims, columns=None) -> np.ndarray:
    return directions(dims[0], dims[1], columns)


def c2m(positions: np.ndarray, intensities: np.ndarray, center, dims: tuple[int, int],
        k: float, columns: tuple[int, int] | None = None) -> np.ndarray:
    """Radiation pattern sum_n u_n exp(+jk k.(r_n - c)) on the grid (or columns)."""
    pos = np.asarray(positions, dtype=float).reshape(-1, 3) - np.asarray(center, dtype=float)
    u = np.asarray(intensities, dtype=complex).reshape(-1)
    d = _dirs(dims, columns)
    shape = d.shape[:2]
    if len(pos) == 0:
        return np.zeros(shape, dtype=complex)
    phase = pos @ d.reshape(-1, 3).T
    return (u @ np.exp(1j * k * phase)).reshape(shape)


def c2m_batch(rel: np.ndarray, intensities: np.ndarray, seg_starts: np.ndarray,
              dims: tuple[int, int], k: float, chunk: int = 4096) -> np.ndarray:
    """Patterns of many leaves at once.

    ``rel`` holds particle offsets from their leaf centres, grouped by leaf;
    ``seg_starts`` marks where each leaf's particles begin.
    """
    d = _dirs(dims).reshape(-1, 3).T
    n_leaves = len(seg_starts)
    ends = np.append(seg_starts[1:], len(rel))
    out = np.empty((n_leaves, d.shape[1]), dtype=complex)
    for a in range(0, n_leaves, chunk):
        b = min(a + chunk, n_leaves)
        p0, p1 = seg_starts[a], ends[b - 1]
        terms = intensities[p0:p1, None] * np.exp(1j * k * (rel[p0:p1] @ d))
        out[a:b] = np.add.reduceat(terms, seg_starts[a:b] - p0, axis=0)
    return out.reshape(n_leaves, *dims)


def c2m_flops(n_particles: int, n_samples: int) -> int:
    return n_particles * n_samples * (CMUL_ADD + EXP_FLOPS)


def shift_factor(displacement, dims: tuple[int, int], k: float,
                 columns: tuple[int, int] | None = None) -> np.ndarray:
    return np.exp(1j * k * (_dirs(dims, columns) @ np.asarray(displacement, dtype=float)))


def shift_expansion(grid, displacement, k: float, columns: tuple[int, int] | None = None,
                    n_theta: int | None = None):
    """Pointwise multiply by exp(+jk k.displacement).

    A column block of a larger grid needs ``columns`` and the full ``n_theta``.
    """
    a = grid.samples if isinstance(grid, SphereGrid) else np.asarray(grid, dtype=complex)
    nph = a.shape[-1]
    dims = (a.shape[-2] if columns is None else n_theta, nph)
    out = a * shift_factor(displacement, dims, k, columns)
    return SphereGrid(out) if isinstance(grid, SphereGrid) else out


# ---------------------------------------------------------------- M2L

def hankel2(l: np.ndarray, x: float) -> np.ndarray:
    return spherical_jn(l, x) - 1j * spherical_yn(l, x)


def translation_samples(D, dims: tuple[int, int], k: float, trunc_order: int,
                        columns: tuple[int, int] | None = None) -> np.ndarray:
    """sum_{l<=L} (-j)^l (2l+1) h_l^(2)(k|D|) P_l(k.D^) on the grid."""
    D = np.asarray(D, dtype=float)
    dist = float(np.linalg.norm(D))
    if dist == 0:
        raise FarFieldError("zero translation offset")
    x = _dirs(dims, columns) @ (D / dist)
    ls = np.arange(trunc_order + 1)
    coef = (-1j) ** ls * (2 * ls + 1) * hankel2(ls, k * dist)
    out = np.full(x.shape, coef[0], dtype=complex)
    p_prev, p = np.ones_like(x), x
    for l in range(1, trunc_order + 1):
        out += coef[l] * p
        p_prev, p = p, ((2 * l + 1) * x * p - l * p_prev) / (l + 1)
    return out


@dataclass
class TranslationOperator:
    level: int
    offset: tuple[int, int, int]
    D: np.ndarray
    columns: tuple[int, int]
    samples: np.ndarray

    @property
    def nbytes(self) -> int:
        return self.samples.nbytes


def translation_operator(level: int, D, dims: tuple[int, int], k: float, trunc_order: int,
                         box_side: float, offset=None, columns=None) -> TranslationOperator:
    """Operator for centre offset ``D = c_obs - c_src``; the pair must be at
    least two box sides apart (the far-field region of the series)."""
    D = np.asarray(D, dtype=float)
    if np.linalg.norm(D) < 2 * box_side * (1 - 1e-12):
        raise FarFieldError(f"|D| = {np.linalg.norm(D):.4g} is below 2 box sides")
    cols = (0, dims[0]) if columns is None else tuple(columns)
    samples = translation_samples(D, dims, k, trunc_order, cols)
    off = tuple(int(round(v)) for v in D / box_side) if offset is None else tuple(offset)
    return TranslationOperator(level, off, D, cols, samples)


class OperatorCache:
    """Translation operators keyed by (level, integer offset), each holding
    only the column range some local observer needs."""

    def __init__(self, k: float):
        self.k = k
        self._ops: dict[tuple[int, tuple[int, int, int]], TranslationOperator] = {}

    def build(self, needs, samplings, box_sides) -> None:
        """``needs`` maps (level, offset) to the needed column hull (a, b)."""
        for (level, off), (a, b) in sorted(needs.items()):
            s = samplings[level]
            D = np.asarray(off, dtype=float) * box_sides[level]
            self._ops[(level, off)] = translation_operator(
                level, D, s.dims, self.k, s.trunc_order, box_sides[level], off, (a, b))

    def get(self, level: int, offset, columns: tuple[int, int]) -> np.ndarray:
        op = self._ops[(level, tuple(offset))]
        a, b = op.columns
        if columns[0] < a or columns[1] > b:
            raise KeyError(f"operator {(level, offset)} lacks columns {columns}")
        return op.samples[columns[0] - a:columns[1] - a]

    def stack(self, level: int, offsets) -> tuple[np.ndarray, dict]:
        """Full-grid operators of a level stacked, with an offset -> row map."""
        keys = sorted(o for (lv, o) in self._ops if lv == level)
        index = {o: i for i, o in enumerate(keys)}
        return np.stack([self._ops[(level, o)].samples for o in keys]), index

    def __contains__(self, key) -> bool:
        return (key[0], tuple(key[1])) in self._ops

    def __len__(self) -> int:
        return len(self._ops)

    def keys(self):
        return list(self._ops)

    @property
    def nbytes(self) -> int:
        return sum(op.nbytes for op in self._ops.values())


def m2l_apply(source: np.ndarray, op: np.ndarray, acc: np.ndarray) -> int:
    """acc += source * op in place; returns the flops spent (8 per sample)."""
    if source.shape != op.shape or acc.shape != op.shape:
        raise ValueError(f"misaligned slices: {source.shape}, {op.shape}, {acc.shape}")
    acc += source * op
    return CMUL_ADD * op.size


# ---------------------------------------------------------------- L2O

@dataclass
class QuadratureRule:
    dims: tuple[int, int]
    weights: np.ndarray = field(init=False)

    def __post_init__(self):
        self.weights = quadrature_weights(*self.dims)
        if abs(self.weights.sum() - 4 * math.pi) > 1e-10 or not np.isfinite(self.weights).all():
            raise ValueError("bad quadrature weights")


def l2o_norm(k: float) -> complex:
    return -1j * k / (16 * math.pi ** 2)


def l2o(local, center, observers, rule: QuadratureRule, k: float) -> np.ndarray:
    """Potential at ``observers`` from a local expansion about ``center``."""
    a = local.samples if isinstance(local, SphereGrid) else np.asarray(local, dtype=complex)
    obs = np.asarray(observers, dtype=float).reshape(-1, 3) - np.asarray(center, dtype=float)
    d = _dirs(rule.dims).reshape(-1, 3)
    wl = (rule.weights * a).reshape(-1)
    return l2o_norm(k) * (np.exp(-1j * k * (obs @ d.T)) @ wl)


def l2o_batch(locals_: np.ndarray, rel: np.ndarray, seg_starts: np.ndarray,
              rule: QuadratureRule, k: float) -> np.ndarray:
    """Potentials for particles grouped by leaf (see :func:`c2m_batch`)."""
    d = _dirs(rule.dims).reshape(-1, 3).T
    wl = (locals_ * rule.weights).reshape(len(locals_), -1)
    leaf_of = np.repeat(np.arange(len(seg_starts)), np.diff(np.append(seg_starts, len(rel))))
    out = np.empty(len(rel), dtype=complex)
    step = 4096
    for a in range(0, len(rel), step):
        e = np.exp(-1j * k * (rel[a:a + step] @ d))
        out[a:a + step] = np.einsum("ps,ps->p", e, wl[leaf_of[a:a + step]])
    return l2o_norm(k) * out


def near_field(obs_positions, src_positions, src_intensities, k: float) -> np.ndarray:
    """Exact direct sum of a near-field block, coincident pairs skipped."""
    return pair_potential(k, np.asarray(obs_positions, dtype=float).reshape(-1, 3),
                          np.asarray(src_positions, dtype=float).reshape(-1, 3),
                          np.asarray(src_intensities, dtype=complex), skip_coincident=True)
