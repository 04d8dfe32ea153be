"""Forward models: plane-stress cross, material-point paths, synthetic data."""
from __future__ import annotations

from .data import (
    NoiseSpec,
    PointObservation,
    material_point_path,
    read_observations,
    synthesize_data,
    write_observations,
)
from .mesh import CruciformGeometry, CruciformMesh, build_cruciform_mesh
from .solver import FieldObservation, LoadPath, PlaneStressModel, simulate_tree, solve_load_path, solve_steps

__all__ = [
    "CruciformGeometry",
    "CruciformMesh",
    "FieldObservation",
    "LoadPath",
    "NoiseSpec",
    "PlaneStressModel",
    "PointObservation",
    "build_cruciform_mesh",
    "material_point_path",
    "read_observations",
    "simulate_tree",
    "solve_load_path",
    "solve_steps",
    "synthesize_data",
    "write_observations",
]
