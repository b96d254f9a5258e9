import math

import numpy as np
import pytest

from helmfmm.kernel import (GeometrySpec, Particles, SingularityError, Wavenumber, direct_potential,
                            generate_geometry, green, read_particles, write_particles)


def test_green_values():
    k = Wavenumber.from_wavelength(1.0)
    assert green(k, [1.0, 0, 0]) == pytest.approx(1 / (4 * math.pi))
    assert abs(green(k, [0.25, 0, 0])) == pytest.approx(1 / math.pi)
    assert green(0.0, [2.0, 0, 0]) == pytest.approx(1 / (8 * math.pi))
    with pytest.raises(SingularityError):
        green(k, [0, 0, 0])


def test_green_is_symmetric_and_radial():
    rng = np.random.default_rng(0)
    for _ in range(20):
        r = rng.normal(size=3)
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        assert green(3.0, r) == pytest.approx(green(3.0, -r))
        assert green(3.0, r) == pytest.approx(green(3.0, q @ r))


def test_wavenumber_validation():
    with pytest.raises(ValueError):
        Wavenumber(-1.0)
    with pytest.raises(ValueError):
        Wavenumber(1.0, 1.0)
    assert Wavenumber(0.0).wavelength is None


def test_direct_potential_two_points():
    p = Particles([[0, 0, 0], [1, 0, 0]], [1, 2])
    k = 2 * math.pi
    pot = direct_potential(p, p.positions, k)
    assert pot[0] == pytest.approx(2 * green(k, [1, 0, 0]))
    assert pot[1] == pytest.approx(green(k, [1, 0, 0]))
    with pytest.raises(SingularityError):
        direct_potential(p, p.positions, k, skip_coincident=False)


def test_direct_potential_is_linear():
    rng = np.random.default_rng(1)
    pos = rng.uniform(size=(30, 3))
    u, v = rng.normal(size=30) + 0j, rng.normal(size=30) + 1j
    a = direct_potential(Particles(pos, u), pos, 5.0)
    b = direct_potential(Particles(pos, v), pos, 5.0)
    c = direct_potential(Particles(pos, 2 * u - v), pos, 5.0)
    assert np.allclose(c, 2 * a - b)


@pytest.mark.parametrize("kind,extent,count", [("planar-grid", 8, 1024),
                                               ("cubic-volume", 2, 512)])
def test_geometry_counts(kind, extent, count):
    p = generate_geometry(GeometrySpec(kind, extent, 0.25))
    assert len(p) == count
    assert np.allclose(p.positions.mean(axis=0), 0)


def test_sphere_geometry_radius():
    p = generate_geometry(GeometrySpec("sphere-surface", 4, 0.25))
    assert len(p) == GeometrySpec("sphere-surface", 4, 0.25).expected_count()
    assert np.allclose(np.linalg.norm(p.positions, axis=1), 2.0)


def test_geometry_rejects_fractional_lattice():
    with pytest.raises(ValueError):
        GeometrySpec("planar-grid", 1.0, 0.3)


def test_seeded_intensities_repeat():
    spec = GeometrySpec("planar-grid", 2, 0.25)
    a = generate_geometry(spec, intensity_rule="random-seeded", seed=4)
    b = generate_geometry(spec, intensity_rule="random-seeded", seed=4)
    assert np.array_equal(a.intensities, b.intensities)


def test_particle_file_round_trip(tmp_path):
    p = generate_geometry(GeometrySpec("planar-grid", 2, 0.25), intensity_rule="random-seeded")
    write_particles(tmp_path / "p.txt", p, ["hello"])
    q = read_particles(tmp_path / "p.txt")
    assert np.array_equal(p.positions, q.positions)
    assert np.array_equal(p.intensities, q.intensities)
    (tmp_path / "bad.txt").write_text("1 2 3\n")
    with pytest.raises(ValueError):
        read_particles(tmp_path / "bad.txt")
