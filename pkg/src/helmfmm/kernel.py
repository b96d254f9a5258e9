"""Helmholtz kernel, particle sets, test geometries and the direct-sum oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable

import numpy as np


class SingularityError(ValueError):
    """Raised when the kernel is evaluated at zero separation."""


@dataclass(frozen=True)
class Wavenumber:
    """Wavenumber ``k`` (rad/m) paired with its wavelength (m).

    ``k == 0`` is the Laplace limit; the wavelength is then ``None``.
    """

    k: float
    wavelength: float | None = None

    def __post_init__(self):
        if not math.isfinite(self.k) or self.k < 0:
            raise ValueError(f"wavenumber must be finite and >= 0, got {self.k}")
        if self.k == 0:
            if self.wavelength is not None:
                raise ValueError("k = 0 has no wavelength")
            return
        if self.wavelength is None:
            object.__setattr__(self, "wavelength", 2 * math.pi / self.k)
        elif abs(self.k * self.wavelength - 2 * math.pi) > 1e-12 * 2 * math.pi:
            raise ValueError("k * wavelength must equal 2*pi")

    @classmethod
    def from_wavelength(cls, wavelength: float) -> "Wavenumber":
        if not wavelength > 0:
            raise ValueError("wavelength must be positive")
        return cls(2 * math.pi / wavelength, wavelength)


@dataclass
class Particles:
    """A set of point sources: ``positions`` (N, 3) in meters and complex
    ``intensities`` (N,)."""

    positions: np.ndarray
    intensities: np.ndarray

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=float).reshape(-1, 3)
        self.intensities = np.ascontiguousarray(self.intensities, dtype=complex).reshape(-1)
        if len(self.positions) != len(self.intensities):
            raise ValueError("positions and intensities differ in length")
        if not (np.isfinite(self.positions).all() and np.isfinite(self.intensities).all()):
            raise ValueError("particle data must be finite")

    def __len__(self):
        return len(self.positions)

    def subset(self, index) -> "Particles":
        return Particles(self.positions[index], self.intensities[index])

    def with_intensities(self, intensities) -> "Particles":
        return Particles(self.positions, intensities)


def green(k: Wavenumber | float, r) -> complex:
    """exp(-j k |r|) / (4 pi |r|)."""
    kk = k.k if isinstance(k, Wavenumber) else float(k)
    dist = float(np.linalg.norm(np.asarray(r, dtype=float)))
    if dist == 0.0:
        raise SingularityError("green's function evaluated at zero separation")
    if kk == 0:
        return complex(1.0 / (4 * math.pi * dist))
    return complex(np.exp(-1j * kk * dist) / (4 * math.pi * dist))


def pair_potential(k: float, obs: np.ndarray, src: np.ndarray, u: np.ndarray,
                   skip_coincident: bool = True) -> np.ndarray:
    """Potential at ``obs`` (M, 3) from sources ``src`` (N, 3), one row per
    observer with a fixed source order, so results are reproducible.

    Coincident source/observer pairs are dropped when ``skip_coincident``;
    otherwise they raise :class:`SingularityError`.
    """
    out = np.zeros(len(obs), dtype=complex)
    if len(obs) == 0 or len(src) == 0:
        return out
    # blocked to bound the (M, N) temporaries
    step = max(1, 2_000_000 // max(len(src), 1))
    for start in range(0, len(obs), step):
        o = obs[start:start + step]
        diff = o[:, None, :] - src[None, :, :]
        dist = np.sqrt(np.einsum("mnk,mnk->mn", diff, diff))
        zero = dist == 0.0
        if zero.any():
            if not skip_coincident:
                m, n = np.argwhere(zero)[0]
                raise SingularityError(
                    f"observer {start + m} coincides with source {n}")
            dist = np.where(zero, 1.0, dist)
        g = np.exp(-1j * k * dist) / (4 * math.pi * dist)
        g[zero] = 0.0
        out[start:start + step] = g @ u
    return out


def direct_potential(sources: Particles, observers, k: Wavenumber | float,
                     skip_coincident: bool = True) -> np.ndarray:
    """O(N^2) ground truth: sum_n g(r_m - r_n) u_n for every observer m.

    Source/observer pairs at the same position are skipped (the self term of
    evaluating at the sources). Pass ``skip_coincident=False`` to have such a
    pair raise instead.
    """
    kk = k.k if isinstance(k, Wavenumber) else float(k)
    obs = np.asarray(observers, dtype=float).reshape(-1, 3)
    return pair_potential(kk, obs, sources.positions, sources.intensities,
                          skip_coincident)


class GeometryKind(str, Enum):
    PLANAR_GRID = "planar-grid"
    SPHERE_SURFACE = "sphere-surface"
    CUBIC_VOLUME = "cubic-volume"


@dataclass(frozen=True)
class GeometrySpec:
    """Test geometry. ``extent`` (side length, or diameter for the sphere) and
    ``spacing`` are both in wavelengths."""

    kind: GeometryKind
    extent: float
    spacing: float

    def __post_init__(self):
        object.__setattr__(self, "kind", GeometryKind(self.kind))
        if not (self.extent > 0 and self.spacing > 0):
            raise ValueError("extent and spacing must be positive")
        if self.kind is not GeometryKind.SPHERE_SURFACE:
            n = self.extent / self.spacing
            if abs(n - round(n)) > 1e-9 or round(n) < 1:
                raise ValueError(
                    f"extent/spacing must be a positive integer, got {n}")

    @property
    def points_per_axis(self) -> int:
        return int(round(self.extent / self.spacing))

    def expected_count(self) -> int:
        n = self.points_per_axis
        if self.kind is GeometryKind.PLANAR_GRID:
            return n * n
        if self.kind is GeometryKind.CUBIC_VOLUME:
            return n ** 3
        return sphere_point_count(self.extent, self.spacing)


def sphere_point_count(diameter: float, spacing: float) -> int:
    # one point per spacing**2 of surface area
    return max(1, int(round(math.pi * diameter ** 2 / spacing ** 2)))


def fibonacci_sphere(n: int, radius: float) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    rho = np.sqrt(np.clip(1 - z * z, 0, None))
    phi = math.pi * (3 - math.sqrt(5)) * i
    return radius * np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])


def generate_geometry(spec: GeometrySpec, wavelength: float = 1.0,
                      intensity_rule: str = "unit", seed: int = 0) -> Particles:
    """Particles for a test geometry, in meters.

    Lattices are cell-centred so each ``spacing``-sized cell holds exactly one
    point; the planar grid lies in the z = 0 plane and both lattices are
    centred on the origin. Sphere points follow a Fibonacci lattice.
    """
    h = spec.spacing * wavelength
    if spec.kind is GeometryKind.SPHERE_SURFACE:
        pos = fibonacci_sphere(spec.expected_count(), spec.extent * wavelength / 2)
    else:
        n = spec.points_per_axis
        axis = (np.arange(n) + 0.5) * h - n * h / 2
        if spec.kind is GeometryKind.PLANAR_GRID:
            y, x = np.meshgrid(axis, axis, indexing="ij")
            pos = np.column_stack([x.ravel(), y.ravel(), np.zeros(n * n)])
        else:
            z, y, x = np.meshgrid(axis, axis, axis, indexing="ij")
            pos = np.column_stack([x.ravel(), y.ravel(), z.ravel()])
    if intensity_rule == "unit":
        u = np.ones(len(pos), dtype=complex)
    elif intensity_rule == "random-seeded":
        rng = np.random.default_rng(seed)
        u = rng.uniform(-1, 1, len(pos)) + 1j * rng.uniform(-1, 1, len(pos))
    else:
        raise ValueError(f"unknown intensity rule {intensity_rule!r}")
    return Particles(pos, u)


def write_particles(path, particles: Particles, header: Iterable[str] = ()) -> None:
    """Write ``x y z re im`` lines; ``header`` lines become ``#`` comments."""
    lines = [f"# {h}" for h in header]
    for (x, y, z), u in zip(particles.positions.tolist(), particles.intensities.tolist()):
        lines.append(f"{x!r} {y!r} {z!r} {u.real!r} {u.imag!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_particles(path) -> Particles:
    rows = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 5:
            raise ValueError(f"{path}:{lineno}: expected 5 fields, got {len(fields)}")
        rows.append([float(f) for f in fields])
    data = np.array(rows, dtype=float).reshape(-1, 5)
    return Particles(data[:, :3], data[:, 3] + 1j * data[:, 4])
