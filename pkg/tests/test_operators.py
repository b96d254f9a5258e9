import math

import numpy as np
import pytest

from helmfmm.kernel import Particles, direct_potential, green
from helmfmm.operators import (FarFieldError, OperatorCache, QuadratureRule, c2m, hankel2, l2o,
                               l2o_norm, m2l_apply, near_field, shift_expansion,
                               translation_operator, translation_samples)
from helmfmm.sphere import LevelSampling

K = 2 * math.pi
DIMS = (12, 12)


def test_c2m_basics():
    assert np.allclose(c2m([[0, 0, 0]], [1], np.zeros(3), DIMS, K), 1)
    one = c2m([[0.1, 0, 0]], [2 - 1j], np.zeros(3), DIMS, K)
    assert np.allclose(np.abs(one), abs(2 - 1j))
    two = c2m([[0.1, 0, 0], [0, -0.05, 0.02]], [2 - 1j, 0.5], np.zeros(3), DIMS, K)
    assert np.allclose(two, one + c2m([[0, -0.05, 0.02]], [0.5], np.zeros(3), DIMS, K))


def test_shift_properties():
    g = c2m([[0.1, 0.2, 0]], [1], np.zeros(3), DIMS, K)
    assert np.allclose(shift_expansion(g, np.zeros(3), K), g)
    v, w = np.array([0.3, -0.1, 0.2]), np.array([-0.05, 0.4, 0.1])
    assert np.allclose(shift_expansion(shift_expansion(g, v, K), -v, K), g, atol=1e-14)
    assert np.allclose(shift_expansion(shift_expansion(g, v, K), w, K),
                       shift_expansion(g, v + w, K), atol=1e-14)
    # a column block of the grid shifts like the whole
    full = shift_expansion(g, v, K)
    assert np.allclose(shift_expansion(g[3:7], v, K, columns=(3, 7), n_theta=12), full[3:7])


def test_translation_single_term_and_parity():
    D = np.array([1.3, -0.4, 0.7])
    x = K * np.linalg.norm(D)
    t0 = translation_samples(D, DIMS, K, 0)
    assert np.allclose(t0, 1j * np.exp(-1j * x) / x)
    assert hankel2(np.array([0]), x)[0] == pytest.approx(1j * np.exp(-1j * x) / x)
    t = translation_samples(D, DIMS, K, 9)
    tm = translation_samples(-D, DIMS, K, 9)
    nt, nph = DIMS
    flipped = t[::-1][:, (np.arange(nph) + nph // 2) % nph]
    assert np.allclose(tm, flipped)


def test_translation_guard():
    with pytest.raises(FarFieldError):
        translation_operator(4, [1.0, 0, 0], DIMS, K, 5, box_side=1.0)
    op = translation_operator(4, [2.0, 0, 0], DIMS, K, 5, box_side=1.0)
    assert op.offset == (2, 0, 0) and np.isfinite(op.samples).all()


def test_two_box_pipeline_matches_green():
    side = 0.5
    s = LevelSampling.for_box(5, side, K, 4)
    rule = QuadratureRule(s.dims)
    rng = np.random.default_rng(3)
    for off in ([2, 0, 0], [2, 3, -2], [0, -3, 3]):
        c_obs = np.array(off, dtype=float) * side
        src = rng.uniform(-0.5, 0.5, 3) * side
        obs = c_obs + rng.uniform(-0.5, 0.5, 3) * side
        m = c2m([src], [1], np.zeros(3), s.dims, K)
        op = translation_operator(5, c_obs, s.dims, K, s.trunc_order, side)
        loc = np.zeros(s.dims, dtype=complex)
        m2l_apply(m, op.samples, loc)
        v = l2o(loc, c_obs, [obs], rule, K)[0]
        g = green(K, obs - src)
        assert abs(v - g) / abs(g) < 1e-4


def test_m2l_apply_slices():
    rng = np.random.default_rng(4)
    src, op = rng.normal(size=(2, 8, 6)) + 1j
    whole = np.zeros((8, 6), dtype=complex)
    assert m2l_apply(src, op, whole) == 8 * 48
    parts = np.zeros((8, 6), dtype=complex)
    for a, b in ((0, 3), (3, 4), (4, 8)):
        m2l_apply(src[a:b], op[a:b], parts[a:b])
    assert np.allclose(whole, parts)
    acc = whole.copy()
    m2l_apply(np.zeros_like(src), op, acc)
    assert np.array_equal(acc, whole)
    with pytest.raises(ValueError):
        m2l_apply(src[:3], op[:4], parts[:3])


def test_l2o_simple_cases():
    rule = QuadratureRule((6, 8))
    assert np.allclose(l2o(np.zeros((6, 8)), np.zeros(3), [[0.1, 0, 0]], rule, K), 0)
    v = l2o(np.full((6, 8), 2.0), np.zeros(3), [[0, 0, 0]], rule, K)[0]
    assert v == pytest.approx(4 * math.pi * 2.0 * l2o_norm(K))


def test_operator_cache_stores_each_offset_once():
    s = {3: LevelSampling.for_box(3, 1.0, K, 3)}
    cache = OperatorCache(K)
    cache.build({(3, (2, 0, 0)): (0, 4), (3, (0, 3, 0)): (2, 6)}, s, {3: 1.0})
    assert len(cache) == 2
    assert cache.get(3, (2, 0, 0), (1, 3)).shape == (2, s[3].n_phi)
    with pytest.raises(KeyError):
        cache.get(3, (0, 3, 0), (0, 4))
    assert cache.nbytes == (4 + 4) * s[3].n_phi * 16


def test_near_field_is_direct_sum():
    rng = np.random.default_rng(5)
    p = Particles(rng.uniform(size=(20, 3)), rng.normal(size=20) + 0j)
    assert np.allclose(near_field(p.positions, p.positions, p.intensities, K),
                       direct_potential(p, p.positions, K))
    assert np.allclose(near_field(p.positions, np.zeros((0, 3)), np.zeros(0), K), 0)


def test_quadrature_rule_sum():
    assert QuadratureRule((7, 10)).weights.sum() == pytest.approx(4 * math.pi)
