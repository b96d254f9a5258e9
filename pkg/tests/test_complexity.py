import math

import numpy as np
import pytest

from helmfmm.complexity import (ComplexityParams, fit_affine, fit_and_compare, groups_per_level,
                                model_level, plural_fraction, predict_costs, samples_per_level,
                                tree_level)


def test_groups_and_samples():
    assert groups_per_level(1000, 2, 1) == 1000
    assert groups_per_level(4_194_304, 2, 11) == 4
    assert groups_per_level(8192, 3, 3) == groups_per_level(8192, 3, 2) / 8
    assert samples_per_level(1, 1) == 1 and samples_per_level(1, 3) == 4
    assert samples_per_level(2.5, 6) / samples_per_level(2.5, 5) == 2


def test_plural_level():
    assert plural_fraction(ComplexityParams(4_194_304, 2048, 2), 7) == (7, 2.0)
    assert plural_fraction(ComplexityParams(4096, 4096, 2), 1)[0] == 1
    p_l, p_n = plural_fraction(ComplexityParams(4096, 1, 2), 7, n_levels=7)
    assert p_l > 7
    assert all(plural_fraction(ComplexityParams(4096, 1, 2), l)[1] <= 1 for l in range(1, 8))


def test_level_conversion():
    assert model_level(1, 7) == 7 and model_level(7, 7) == 1
    assert all(tree_level(model_level(l, 9), 9) == l for l in range(1, 10))
    with pytest.raises(ValueError):
        model_level(0, 5)


def test_finite_sums_match_hand_values():
    pred = predict_costs(ComplexityParams(4096, 4, 2, 1.0), 7)
    # sum_l 4096 * (l-1)^2, sum_l 4096, and 27 * the latter
    assert pred.m2m.C == 4096 * 91 == 372736
    assert pred.m2m.B == 28672
    assert pred.m2l.C == 774144
    assert (pred.l2l.M, pred.l2l.B) == (pred.m2m.M, pred.m2m.B)


def test_prediction_scaling():
    c = [predict_costs(ComplexityParams(8 ** n, 4, 3), n + 1).m2m.C for n in (4, 5, 6)]
    assert 1.5 < c[1] / c[0] < 12 and 1.5 < c[2] / c[1] < 12
    m = {P: predict_costs(ComplexityParams(2 ** 20, P, 2), 11).m2m.components["M_fft"]
         for P in (256, 512)}
    assert m[512] / m[256] == pytest.approx(4)
    a = predict_costs(ComplexityParams(4096, 8, 3, 2.0, 100), 5)
    b = predict_costs(ComplexityParams(4096, 8, 3, 2.0, 100), 5)
    assert a.dumps() == b.dumps()
    assert a.m2l.asymptotic["B_below_P_L"] == "N_s^(2/3)"


def test_surface_ratio_slowly_varying():
    ratios = []
    for n in range(5, 10):
        N = 4 ** n
        c = predict_costs(ComplexityParams(N, 16, 2), n + 1).m2m.C
        ratios.append(c / (N * math.log2(N) ** 2))
    assert max(ratios) / min(ratios) < 4
    assert all(b >= a for a, b in zip(ratios, ratios[1:]))


def test_fit_and_compare():
    x = np.array([64, 256, 1024, 4096])
    model = x * np.log2(x) ** 2
    assert fit_and_compare(x, 2 * model) == pytest.approx((2.0, 1.0))
    noisy = model * (1 + 1e-3 * np.random.default_rng(0).normal(size=4))
    assert fit_and_compare(x, noisy)[1] > 0.99
    with pytest.raises(ValueError):
        fit_and_compare(x, np.zeros(4))
    with pytest.raises(ValueError):
        fit_and_compare(x[:2], model[:2])
    a, b, r2 = fit_affine([4, 8, 16, 32], [3 + 2 * p * p for p in (4, 8, 16, 32)])
    assert (a, b, r2) == pytest.approx((3, 2, 1))


def test_params_validation():
    with pytest.raises(ValueError):
        ComplexityParams(100, 2, 4)
    with pytest.raises(ValueError):
        ComplexityParams(0, 2, 2)
    assert ComplexityParams(10, 2, 3).I_max == 189
