"""Distributed-memory multilevel fast multipole evaluation of Helmholtz
potentials on a simulated message-passing machine."""

from .kernel import (GeometryKind, GeometrySpec, Particles, Wavenumber, direct_potential,
                     generate_geometry, green, read_particles, write_particles)
from .ledger import CostLedger
from .runtime import World, spawn_world
from .traversal import RunConfig, evaluate_potential, run_evaluation

__all__ = ["CostLedger", "GeometryKind", "GeometrySpec", "Particles", "RunConfig", "Wavenumber",
           "World", "direct_potential", "evaluate_potential", "generate_geometry", "green",
           "read_particles", "run_evaluation", "spawn_world", "write_particles"]
__version__ = "0.1.0"
