import math

import numpy as np
import pytest

from helmfmm.runtime import World
from helmfmm.sphere import (LevelSampling, SphereGrid, anterpolate_array, directions,
                            fft_anterpolate, fft_interpolate, fft_interpolate_adjoint, fold_transpose,
                            parallel_interpolate, parallel_resample, quadrature_weights,
                            truncation_order, unfold, weighted_anterpolate_array)

rng = np.random.default_rng(11)


def cgrid(nt, nph):
    return rng.normal(size=(nt, nph)) + 1j * rng.normal(size=(nt, nph))


def poly(dirs):
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    return 1 + 2 * x - 1j * y * z + x * x * y + 0.5 * z ** 3


def test_truncation_order():
    assert truncation_order(1.0, 1.0, 3) == 5
    assert truncation_order(0.01, 1.0, 3) == 4
    assert truncation_order(2.0, 5.0, 6) > truncation_order(2.0, 5.0, 3)
    prev = 0
    for d in np.linspace(0.1, 10, 40):
        cur = truncation_order(d, 2 * math.pi, 3)
        assert cur >= prev
        prev = cur
    with pytest.raises(ValueError):
        truncation_order(1.0, 0.0, 3)


def test_level_sampling_dims():
    s = LevelSampling.for_box(3, 1.0, 2 * math.pi, 3)
    assert s.n_theta >= s.trunc_order + 1 and s.n_phi >= 2 * s.trunc_order + 2
    with pytest.raises(ValueError):
        LevelSampling(1, 5, 3, 12)


def test_interpolation_shapes_and_constants():
    out = fft_interpolate(np.full((3, 4), 2.5 + 1j), (5, 6))
    assert out.dims == (5, 6)
    assert np.allclose(out.samples, 2.5 + 1j)
    assert np.allclose(fft_anterpolate(np.full((9, 10), 3.0), (4, 6)).samples, 3.0)
    with pytest.raises(ValueError):
        fft_interpolate(cgrid(5, 6), (3, 6))
    with pytest.raises(ValueError):
        fft_anterpolate(cgrid(3, 4), (5, 6))


def test_interpolation_exact_on_band_limited_functions():
    coarse = poly(directions(6, 8))
    fine = fft_interpolate(coarse, (11, 14)).samples
    assert np.abs(fine - poly(directions(11, 14))).max() < 1e-12


def test_round_trip_and_adjoint():
    for _ in range(20):
        nt, nph = int(rng.integers(1, 9)), 2 * int(rng.integers(1, 7))
        mt, mph = nt + int(rng.integers(0, 6)), nph + 2 * int(rng.integers(0, 4))
        x, y = cgrid(nt, nph), cgrid(mt, mph)
        up = fft_interpolate(x, (mt, mph)).samples
        assert np.linalg.norm(fft_anterpolate(up, (nt, nph)).samples - x) <= 1e-12 * np.linalg.norm(x)
        lhs = np.vdot(y, up)
        rhs = np.vdot(fft_interpolate_adjoint(y, (nt, nph)).samples, x)
        assert abs(lhs - rhs) <= 1e-10 * abs(lhs)


def test_weighted_anterpolation_is_quadrature_adjoint():
    x, y = cgrid(6, 8), cgrid(10, 12)
    wc, wf = quadrature_weights(6, 8), quadrature_weights(10, 12)
    lhs = np.sum(wf * fft_interpolate(x, (10, 12)).samples * y)
    rhs = np.sum(wc * x * weighted_anterpolate_array(y, (6, 8)))
    assert abs(lhs - rhs) <= 1e-10 * abs(lhs)


def test_batched_arrays_match_single():
    stack = np.stack([cgrid(9, 10) for _ in range(3)])
    out = anterpolate_array(stack, (5, 6))
    for a, b in zip(stack, out):
        assert np.allclose(fft_anterpolate(a, (5, 6)).samples, b)


def test_fold_transpose_layout():
    g = np.arange(12).reshape(3, 4).astype(complex)
    ext = fold_transpose(g)
    assert ext.shape == (2, 6)
    # circle j: theta going down along phi_j, then back up along phi_j + pi
    assert np.array_equal(ext[0], [0, 4, 8, 10, 6, 2])
    assert np.array_equal(ext[1], [1, 5, 9, 11, 7, 3])
    assert np.array_equal(unfold(ext), g)
    with pytest.raises(ValueError):
        fold_transpose(np.zeros((3, 5)))


def test_quadrature_integrates_polynomials():
    w = quadrature_weights(10, 12)
    d = directions(10, 12)
    assert w.sum() == pytest.approx(4 * math.pi, abs=1e-10)
    assert (w * d[..., 2] ** 2).sum() == pytest.approx(4 * math.pi / 3, abs=1e-10)
    assert abs((w * d[..., 0] * d[..., 1]).sum()) < 1e-12


def test_sphere_grid_json_round_trip():
    g = SphereGrid(cgrid(3, 4))
    assert np.array_equal(SphereGrid.from_json(g.to_json()).samples, g.samples)
    with pytest.raises(ValueError):
        SphereGrid(np.zeros((3, 3)))


def _run(R, src, src_layout, dst_layout, dst_dims, adjoint=False, scheduler="deterministic"):
    def prog(comm):
        a, b = src_layout[comm.rank]
        return parallel_resample(comm, range(R), src[a:b], src_layout, dst_layout, src.shape,
                                 dst_dims, "t", adjoint=adjoint)
    world = World(R, scheduler, 1)
    return np.concatenate(world.run(prog)), world


@pytest.mark.parametrize("R", [1, 2, 4, 7])
def test_parallel_interpolate_matches_serial(R):
    x = cgrid(8, 10)
    cuts = np.sort(rng.integers(0, 9, R - 1))
    b = np.concatenate([[0], cuts, [8]])
    lay = {r: (int(b[r]), int(b[r + 1])) for r in range(R)}
    cuts = np.sort(rng.integers(0, 14, R - 1))
    b = np.concatenate([[0], cuts, [13]])
    dst = {r: (int(b[r]), int(b[r + 1])) for r in range(R)}
    out, world = _run(R, x, lay, dst, (13, 16), scheduler="random")
    assert np.allclose(out, fft_interpolate(x, (13, 16)).samples, atol=1e-12, rtol=0)
    assert world.ledger.total("m2m").messages <= 2 * R * (R - 1)


def test_parallel_adjoint_matches_serial():
    y = cgrid(12, 14)
    src = {0: (0, 5), 1: (5, 9), 2: (9, 12)}
    dst = {0: (0, 2), 1: (2, 3), 2: (3, 7)}
    out, _ = _run(3, y, src, dst, (7, 8), adjoint=True)
    assert np.allclose(out, fft_interpolate_adjoint(y, (7, 8)).samples, atol=1e-12)


def test_parallel_interpolate_refuses_coarsening():
    with pytest.raises(ValueError):
        parallel_interpolate(None, [0], np.zeros((4, 4)), {0: (0, 4)}, {0: (0, 2)}, (4, 4), (2, 4))
