"""Material-point path model, synthetic noise and observation CSV files."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ..errors import InvalidArgumentError
from ..material import MaterialParams, MaterialState, Tolerances, plane_stress_update
from .mesh import CruciformMesh
from .solver import FieldObservation, LoadPath

log = logging.getLogger(__name__)

OBS_CSV_VERSION = 1


@dataclass(frozen=True)
class NoiseSpec:
    """Observation noise variances (mm^2 and N^2) and the RNG seed."""

    psi2_disp: float = 4e-6
    psi2_load: float = 582.11
    seed: int = 0

    def __post_init__(self):
        if not (self.psi2_disp > 0 and self.psi2_load > 0):
            raise InvalidArgumentError(f"noise variances must be positive: {self}")
        if not np.isfinite(self.psi2_disp) or not np.isfinite(self.psi2_load):
            raise InvalidArgumentError("noise variances must be finite")


@dataclass(frozen=True)
class PointObservation:
    """In-plane stress (xx, yy, xy) in MPa and kappa after one path step."""

    step: int
    stress: np.ndarray
    kappa: float
    plastic: bool


def material_point_path(params: MaterialParams, path: LoadPath, strain_increment: float = 0.005,
                        tol: Tolerances = Tolerances()) -> list[PointObservation]:
    """Drive one plane-stress material point through a load path.

    Axis A adds ``strain_increment`` to the xx strain and axis B to the yy
    strain; the other normal strain is held and the shear strain stays zero.
    """
    if not strain_increment > 0:
        raise InvalidArgumentError("strain increment must be positive")
    state = MaterialState.virgin()
    out = []
    for t, axis in enumerate(path.axes, start=1):
        d = np.array([strain_increment, 0.0, 0.0]) if axis == "A" else np.array([0.0, strain_increment, 0.0])
        res = plane_stress_update(d, state, params, tol)
        state = res.state
        out.append(PointObservation(t, res.stress.copy(), state.kappa, res.plastic_flag))
    return out


def synthesize_data(observations, noise: NoiseSpec) -> list[FieldObservation]:
    """Add i.i.d. Gaussian noise to displacements and loads.

    Draws come from one generator seeded with ``noise.seed`` in a fixed order
    (per observation: x displacements, y displacements, load x, load y), so
    the output is bit-identical for a fixed seed.
    """
    rng = np.random.default_rng(noise.seed)
    sd_u, sd_f = np.sqrt(noise.psi2_disp), np.sqrt(noise.psi2_load)
    out = []
    for ob in observations:
        if ob.noisy:
            raise InvalidArgumentError("observations already carry noise")
        nx = rng.standard_normal(ob.displacement_x.size)
        ny = rng.standard_normal(ob.displacement_y.size)
        fl = rng.standard_normal(2)
        out.append(replace(ob, displacement_x=ob.displacement_x + sd_u * nx,
                           displacement_y=ob.displacement_y + sd_u * ny,
                           load_x=ob.load_x + sd_f * fl[0], load_y=ob.load_y + sd_f * fl[1], noisy=True))
    return out


def write_observations(directory, stem: str, observations, mesh: CruciformMesh) -> tuple[Path, Path]:
    """Write ``<stem>_fields.csv`` (one row per gauge node and step) and ``<stem>_loads.csv``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    fpath, lpath = d / f"{stem}_fields.csv", d / f"{stem}_loads.csv"
    xy = mesh.nodes[mesh.gauge]
    with open(fpath, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "tree_node", "node_id", "x", "y", "disp_x", "disp_y"])
        for ob in observations:
            for k, nid in enumerate(mesh.gauge):
                w.writerow([ob.step, ob.node_id, int(nid), repr(float(xy[k, 0])), repr(float(xy[k, 1])),
                            repr(float(ob.displacement_x[k])), repr(float(ob.displacement_y[k]))])
    with open(lpath, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "tree_node", "load_x", "load_y", "noisy", f"version={OBS_CSV_VERSION}"])
        for ob in observations:
            w.writerow([ob.step, ob.node_id, repr(float(ob.load_x)), repr(float(ob.load_y)), int(ob.noisy), ""])
    return fpath, lpath


def read_observations(directory, stem: str) -> list[FieldObservation]:
    """Inverse of :func:`write_observations`; floats round-trip exactly."""
    d = Path(directory)
    fields: dict[int, list] = {}
    with open(d / f"{stem}_fields.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            fields.setdefault(int(row["step"]), []).append((float(row["disp_x"]), float(row["disp_y"])))
    out = []
    with open(d / f"{stem}_loads.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            t = int(row["step"])
            arr = np.array(fields[t])
            out.append(FieldObservation(step=t, displacement_x=arr[:, 0].copy(), displacement_y=arr[:, 1].copy(),
                                        load_x=float(row["load_x"]), load_y=float(row["load_y"]),
                                        noisy=bool(int(row["noisy"])), node_id=row["tree_node"]))
    return out
