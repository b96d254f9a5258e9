"""Closed-form cost estimates for the parallel tree traversal and the
least-squares comparison of measured counters against them.

Levels here count from the leaves: level 1 is the leaf level and ``N_L`` the
root, the reverse of :mod:`helmfmm.tree`. :func:`model_level` converts.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np


def model_level(tree_level: int, n_levels: int) -> int:
    """Tree level (root = 1) to model level (leaf = 1); the map is an involution."""
    if not 1 <= tree_level <= n_levels:
        raise ValueError(f"level {tree_level} outside 1..{n_levels}")
    return n_levels + 1 - tree_level


tree_level = model_level


@dataclass(frozen=True)
class ComplexityParams:
    N_s: int
    P: int
    d: int
    C_k: float = 1.0
    M_S: float = math.inf  # buffer cap in samples-squared units of K(l)^2

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError("d must be 2 or 3")
        if self.N_s <= 0 or self.P <= 0 or self.C_k <= 0 or self.M_S <= 0:
            raise ValueError("parameters must be positive")

    @property
    def I_max(self) -> int:
        return 6 ** self.d - 3 ** self.d


def groups_per_level(N_s: float, d: int, l: int) -> float:
    if l < 1:
        raise ValueError("levels start at 1")
    return N_s / (2 ** d) ** (l - 1)


def samples_per_level(C_k: float, l: int) -> float:
    if l < 1:
        raise ValueError("levels start at 1")
    return 2 ** (l - 1) * C_k


def plural_level(params: ComplexityParams, n_levels: int | None = None) -> int:
    """First level at which nodes are shared: smallest l with G(l) <= P.

    A single process shares nothing, so P = 1 never qualifies and the
    result lies past any finite tree (the search stops one level beyond).
    """
    limit = n_levels if n_levels is not None else 1 + math.ceil(
        math.log(params.N_s, 2 ** params.d)) + 1
    l = 1
    while l <= limit and (params.P == 1 or groups_per_level(params.N_s, params.d, l) > params.P):
        l += 1
    return l


def plural_fraction(params: ComplexityParams, l: int,
                    n_levels: int | None = None) -> tuple[int, float]:
    """(P_L, P_N(l)) with P_N = P / G(l)."""
    return (plural_level(params, n_levels),
            params.P / groups_per_level(params.N_s, params.d, l))


def surface_nodes(params: ComplexityParams, l: int) -> float:
    """S_N: per-process count of boundary nodes whose far field crosses ranks."""
    return (groups_per_level(params.N_s, params.d, l) / params.P) ** ((params.d - 1) / params.d)


@dataclass
class PhaseCost:
    C: float
    M: float
    B: float
    components: dict = field(default_factory=dict)
    asymptotic: dict = field(default_factory=dict)


@dataclass
class CostPrediction:
    params: ComplexityParams
    n_levels: int
    P_L: int
    S_N: dict
    m2m: PhaseCost
    m2l: PhaseCost
    l2l: PhaseCost

    def to_json(self) -> dict:
        def clean(v):
            if isinstance(v, float) and math.isinf(v):
                return "inf"
            return v
        out = {"params": {k: clean(v) for k, v in asdict(self.params).items()},
               "n_levels": self.n_levels, "P_L": self.P_L,
               "S_N": {str(k): v for k, v in self.S_N.items()}}
        for name in ("m2m", "m2l", "l2l"):
            out[name] = asdict(getattr(self, name))
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True)


def predict_costs(params: ComplexityParams, n_levels: int) -> CostPrediction:
    """Finite level sums of the cost estimates (constants of proportionality
    set to one), with the matching asymptotic labels."""
    if n_levels < 1:
        raise ValueError("need at least one level")
    N, P, d = params.N_s, params.P, params.d
    levels = range(1, n_levels + 1)
    G = {l: groups_per_level(N, d, l) for l in levels}
    K = {l: samples_per_level(params.C_k, l) for l in levels}
    P_L = plural_level(params, n_levels)
    upper = [l for l in levels if l >= P_L]
    lower = [l for l in levels if l < P_L]

    c_m2m = sum(G[l] * K[l] ** 2 * math.log2(K[l]) ** 2 for l in levels)
    b_m2m = sum(G[l] * K[l] ** 2 for l in levels)
    # aggregation into level l+1 plus the two all-to-alls of parallel FFTs
    m_agg = sum(G[l] * P / G[l + 1] for l in upper if l + 1 <= n_levels)
    m_fft = sum(G[l] * (P / G[l]) ** 2 for l in upper)
    surface = d == 2
    m2m = PhaseCost(
        C=c_m2m, M=m_agg + m_fft, B=b_m2m,
        components={"M_aggregation": m_agg, "M_fft": m_fft},
        asymptotic={"C": "N_s log^2 N_s" if surface else "N_s",
                    "M": "P^2 + P log N_s",
                    "B": "N_s log N_s" if surface else "N_s"})

    I = params.I_max
    c_m2l = sum(K[l] ** 2 * I * G[l] for l in levels)
    m_hi = sum(P * I * K[l] ** 2 / ((P / G[l]) * params.M_S) for l in upper)
    low_vol = sum(K[l] ** 2 * G[l] / P for l in lower)
    m_lo = P * I * (math.ceil(low_vol / params.M_S) if low_vol and math.isfinite(params.M_S)
                    else (1 if low_vol else 0))
    s_n = {l: surface_nodes(params, l) for l in lower}
    b_hi = sum(K[l] ** 2 * G[l] * I for l in upper)
    b_lo = sum(P * K[l] ** 2 * s_n[l] for l in lower)
    m2l = PhaseCost(
        C=c_m2l, M=m_hi + m_lo, B=b_hi + b_lo,
        components={"M_at_or_above_P_L": m_hi, "M_below_P_L": m_lo,
                    "B_at_or_above_P_L": b_hi, "B_below_P_L": b_lo},
        asymptotic={"C": "N_s log N_s" if surface else "N_s",
                    "M": "N_s log N_s + N_s" if surface else "N_s",
                    "B_below_P_L": "N_s" if surface else "N_s^(2/3)"})

    # anterpolation mirrors interpolation; traffic is the same reversed
    l2l = PhaseCost(C=m2m.C, M=m2m.M, B=m2m.B, components=dict(m2m.components),
                    asymptotic=dict(m2m.asymptotic))
    return CostPrediction(params, n_levels, P_L, s_n, m2m, m2l, l2l)


# ------------------------------------------------------------ model fits

ASYMPTOTIC_FORMS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "N": lambda n: n,
    "N log N": lambda n: n * np.log2(n),
    "N log^2 N": lambda n: n * np.log2(n) ** 2,
    "N^(2/3)": lambda n: n ** (2 / 3),
    "P^2": lambda p: p ** 2,
}


def r_squared(y: np.ndarray, fit: np.ndarray) -> float:
    ss_res = float(((y - fit) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0:
        return 1.0 if ss_res == 0 else 0.0
    return 1.0 - ss_res / ss_tot


def fit_and_compare(x: Sequence[float], cost: Sequence[float],
                    model: str | Callable = "N log^2 N") -> tuple[float, float]:
    """Scale ``model(x)`` to ``cost`` by one-parameter least squares; returns
    (scale, R^2)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(cost, dtype=float)
    if len(x) < 3 or len(x) != len(y):
        raise ValueError("need at least three (x, cost) points")
    f = ASYMPTOTIC_FORMS[model] if isinstance(model, str) else model
    m = np.asarray(f(x), dtype=float)
    if not np.any(y) or not np.any(m):
        raise ValueError("degenerate all-zero series")
    scale = float(m @ y / (m @ m))
    return scale, r_squared(y, scale * m)


def fit_affine(x: Sequence[float], cost: Sequence[float],
               model: str | Callable = "P^2") -> tuple[float, float, float]:
    """Two-parameter fit ``a + b * model(x)``; returns (a, b, R^2)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(cost, dtype=float)
    if len(x) < 3 or len(x) != len(y):
        raise ValueError("need at least three (x, cost) points")
    f = ASYMPTOTIC_FORMS[model] if isinstance(model, str) else model
    A = np.stack([np.ones_like(x), np.asarray(f(x), dtype=float)], axis=1)
    (a, b), *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(a), float(b), r_squared(y, A @ np.array([a, b]))
