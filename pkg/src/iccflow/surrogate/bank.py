"""Surrogate bank: forward-model sampling, per-node PCA and per-channel GPs.

Directory layout (format version ``BANK_VERSION``)::

    <bank>/manifest.json                   config, config hash, seed, counts
    <bank>/samples/sample_NNNN.npy         raw tree outputs of one Halton point
    <bank>/<node>/pca_<X|Y>.basis          PCA basis of the gauge displacements
    <bank>/<node>/<X|Y>/dispPCA_<k>.gp     GP of score k of that component
    <bank>/<node>/<X|Y>/load.gp            GP of the resultant load on that axis

A sample file holds one row per tree node in depth-first order:
``[disp_x (v), disp_y (v), load_x, load_y]``.
"""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import InvalidArgumentError, SolverError, TrainingError
from ..material import MaterialParams
from ..pathtree import LoadPathTree
from ..reduce import PcaBasis, ReducedObservation, fit_pca, load_basis, project, reconstruct, save_basis
from ..structure import CruciformGeometry, PlaneStressModel, build_cruciform_mesh, simulate_tree
from .design import ParameterBounds, halton_samples
from .gp import GpModel, GpSettings, load_gp, multi_channel_mean, read_gp_meta, save_gp, train_gp

log = logging.getLogger(__name__)

BANK_VERSION = 1
COMPONENTS = ("X", "Y")


@dataclass(frozen=True)
class BankConfig:
    """Everything that determines the bank contents; hashed into every file."""

    geometry: CruciformGeometry = field(default_factory=CruciformGeometry)
    refinement: int = 0
    E: float = 68300.0
    nu: float = 0.33
    bounds: ParameterBounds = field(default_factory=ParameterBounds)
    sample_count: int = 400
    heldout_count: int = 20
    p: int = 5
    depth: int = 5
    first_fixed: str = "A"
    increment: float = 0.25
    gp: GpSettings = field(default_factory=GpSettings)

    def __post_init__(self):
        if self.sample_count < 1 or self.heldout_count < 0:
            raise InvalidArgumentError("sample counts must be positive")
        if self.p < 1 or self.p > self.sample_count:
            raise InvalidArgumentError("need 1 <= p <= sample_count")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gp"]["log_ls_bounds"] = list(self.gp.log_ls_bounds)
        d["gp"]["start_box"] = list(self.gp.start_box)
        d["bounds"] = {"lower": list(self.bounds.lower), "upper": list(self.bounds.upper)}
        return d

    @property
    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=float).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @property
    def nodes(self) -> list[str]:
        return LoadPathTree(self.depth).nodes(self.first_fixed)

    def material(self, theta) -> MaterialParams:
        s, A, n, a = (float(t) for t in theta)
        return MaterialParams(self.E, self.nu, s, A, n, a)


def _sample_path(bank_dir: Path, k: int) -> Path:
    return bank_dir / "samples" / f"sample_{k:04d}.npy"


def run_samples(config: BankConfig, bank_dir, indices=None, mesh=None) -> np.ndarray:
    """Solve the subtree for Halton points ``indices``; existing sample files are reused.

    Returns the stacked array (n_indices, n_nodes, 2v + 2).
    """
    bank_dir = Path(bank_dir)
    (bank_dir / "samples").mkdir(parents=True, exist_ok=True)
    total = config.sample_count + config.heldout_count
    indices = range(total) if indices is None else indices
    thetas = halton_samples(total, config.bounds)
    mesh = mesh or build_cruciform_mesh(config.geometry, config.refinement)
    model = None
    out = []
    t0, done = time.perf_counter(), 0
    for k in indices:
        path = _sample_path(bank_dir, k)
        if path.exists():
            out.append(np.load(path))
            continue
        params = config.material(thetas[k])
        if model is None:
            model = PlaneStressModel(mesh, params)
        try:
            obs = simulate_tree(mesh, params, config.depth, config.first_fixed, config.increment, model=model)
        except SolverError as exc:
            raise SolverError(f"sample {k} (theta={thetas[k].tolist()}): {exc}", step=exc.step,
                              sample=k, **exc.diagnostics) from exc
        rows = np.stack([np.concatenate([o.displacement_x, o.displacement_y, [o.load_x, o.load_y]])
                         for o in obs.values()])
        np.save(path, rows)
        out.append(rows)
        done += 1
        if done % 50 == 0:
            log.info("forward samples: %d solved (%.1f s)", done, time.perf_counter() - t0)
    return np.stack(out)


def _channel_files(bank_dir: Path, node: str, p: int) -> list[Path]:
    files = []
    for comp in COMPONENTS:
        files += [bank_dir / node / comp / f"dispPCA_{k}.gp" for k in range(p)]
    files += [bank_dir / node / comp / "load.gp" for comp in COMPONENTS]
    return files


def build_bank(config: BankConfig, bank_dir, mesh=None) -> "SurrogateBank":
    """Sample, reduce, train and persist; resumes from whatever already exists.

    GP files whose header carries the current config hash are not retrained.
    """
    bank_dir = Path(bank_dir)
    bank_dir.mkdir(parents=True, exist_ok=True)
    _check_manifest(config, bank_dir)
    t0 = time.perf_counter()
    data = run_samples(config, bank_dir, range(config.sample_count), mesh=mesh)
    t_fe = time.perf_counter() - t0
    thetas = halton_samples(config.sample_count, config.bounds)
    nodes = config.nodes
    v = (data.shape[2] - 2) // 2
    trained = skipped = 0
    for i, node in enumerate(nodes):
        rows = data[:, i, :]
        targets = []
        for c, comp in enumerate(COMPONENTS):
            basis = fit_pca(rows[:, c * v:(c + 1) * v], config.p, node_id=node, component=comp)
            (bank_dir / node / comp).mkdir(parents=True, exist_ok=True)
            save_basis(basis, bank_dir / node / f"pca_{comp}.basis")
            targets += list(project(basis, rows[:, c * v:(c + 1) * v]).T)
        targets += [rows[:, 2 * v], rows[:, 2 * v + 1]]
        for path, y in zip(_channel_files(bank_dir, node, config.p), targets):
            if path.exists() and read_gp_meta(path).get("config_hash") == config.hash:
                skipped += 1
                continue
            try:
                model = train_gp(thetas, y, config.bounds.lb, config.bounds.ub, config.gp)
            except TrainingError as exc:
                raise TrainingError(f"node {node!r} channel {path.name} ({path.parent.name}): {exc}") from exc
            save_gp(model, path, {"config_hash": config.hash, "node": node or "root",
                                  "component": path.parent.name, "channel": path.stem})
            trained += 1
    t_gp = time.perf_counter() - t0 - t_fe
    log.info("bank: %d GPs trained, %d reused; FE %.1f s, GP %.1f s", trained, skipped, t_fe, t_gp)
    timing = _previous_timing(config, bank_dir)
    timing["fe_seconds"] += t_fe
    timing["gp_seconds"] += t_gp
    _write_manifest(config, bank_dir, {"gp_models": len(nodes) * 2 * (config.p + 1),
                                       "nodes": len(nodes), "trained": trained, "reused": skipped}, timing)
    return SurrogateBank.load(bank_dir)


def _check_manifest(config: BankConfig, bank_dir: Path):
    man = bank_dir / "manifest.json"
    if man.exists():
        old = json.loads(man.read_text())
        if old.get("config_hash") != config.hash:
            log.warning("bank %s was built with a different config; stale channels will be retrained",
                        bank_dir)
            # raw samples depend on geometry, material and design only
            if old.get("sample_key") != _sample_key(config):
                for f in (bank_dir / "samples").glob("sample_*.npy"):
                    f.unlink()


def _sample_key(config: BankConfig) -> str:
    d = config.to_dict()
    keep = {k: d[k] for k in ("geometry", "refinement", "E", "nu", "bounds", "depth", "first_fixed", "increment")}
    return hashlib.sha256(json.dumps(keep, sort_keys=True).encode()).hexdigest()[:16]


def _previous_timing(config: BankConfig, bank_dir: Path) -> dict:
    """Build time already spent on this directory's current samples by earlier runs."""
    man = bank_dir / "manifest.json"
    if man.exists():
        old = json.loads(man.read_text())
        t = old.get("timing", {}) if old.get("sample_key") == _sample_key(config) else {}
        return {"fe_seconds": float(t.get("fe_seconds", 0.0)), "gp_seconds": float(t.get("gp_seconds", 0.0))}
    return {"fe_seconds": 0.0, "gp_seconds": 0.0}


def _write_manifest(config: BankConfig, bank_dir: Path, counts: dict, timing: dict):
    man = {"format": "iccflow-bank", "version": BANK_VERSION, "config_hash": config.hash,
           "sample_key": _sample_key(config), "seed": config.gp.seed, "counts": counts,
           "nodes": config.nodes, "config": config.to_dict(), "timing": timing}
    (bank_dir / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")


@dataclass
class _NodeModels:
    bases: dict[str, PcaBasis]
    models: list[GpModel]
    inv_ls: np.ndarray
    alpha: np.ndarray
    y_mean: np.ndarray
    y_scale: np.ndarray


class SurrogateBank:
    """Read-only collection of node surrogates; prediction is thread-safe."""

    def __init__(self, nodes: dict[str, _NodeModels], bounds: ParameterBounds, p: int, inputs: np.ndarray,
                 meta: dict | None = None):
        self._nodes = nodes
        self.bounds = bounds
        self.p = p
        self.inputs = np.ascontiguousarray(inputs)
        self.meta = meta or {}

    @property
    def nodes(self) -> list[str]:
        return list(self._nodes)

    @property
    def n_channels(self) -> int:
        return 2 * (self.p + 1)

    def __contains__(self, node: str) -> bool:
        return node in self._nodes

    def basis(self, node: str, component: str) -> PcaBasis:
        return self._node(node).bases[component]

    def models(self, node: str) -> list[GpModel]:
        return self._node(node).models

    def _node(self, node: str) -> _NodeModels:
        try:
            return self._nodes[node]
        except KeyError:
            raise InvalidArgumentError(f"node {node!r} is not in the surrogate bank") from None

    @classmethod
    def load(cls, bank_dir) -> "SurrogateBank":
        bank_dir = Path(bank_dir)
        man = json.loads((bank_dir / "manifest.json").read_text())
        if man.get("version") != BANK_VERSION:
            raise InvalidArgumentError(f"unsupported bank version {man.get('version')}")
        cfg = man["config"]
        p = int(cfg["p"])
        bounds = ParameterBounds(tuple(cfg["bounds"]["lower"]), tuple(cfg["bounds"]["upper"]))
        nodes = {}
        inputs = None
        for node in man["nodes"]:
            models = [load_gp(f) for f in _channel_files(bank_dir, node, p)]
            bases = {c: load_basis(bank_dir / node / f"pca_{c}.basis") for c in COMPONENTS}
            nodes[node] = _stack(models, bases)
            inputs = models[0].inputs if inputs is None else inputs
        return cls(nodes, bounds, p, inputs, man)

    @classmethod
    def from_models(cls, node_models: dict[str, tuple[dict[str, PcaBasis], list[GpModel]]],
                    bounds: ParameterBounds, p: int) -> "SurrogateBank":
        """Assemble a bank in memory (all models must share training inputs)."""
        nodes = {k: _stack(m, b) for k, (b, m) in node_models.items()}
        first = next(iter(node_models.values()))[1][0]
        return cls(nodes, bounds, p, first.inputs)

    def predict(self, node: str, theta) -> np.ndarray:
        """Channel means at one or many theta, shape (..., 2p + 2).

        Channel order: x scores, y scores, load x, load y.
        """
        nm = self._node(node)
        th = np.asarray(theta, float)
        flat = np.ascontiguousarray(self.bounds.to_unit(th.reshape(-1, th.shape[-1])))
        out = np.empty((flat.shape[0], nm.alpha.shape[0]))
        multi_channel_mean(flat, self.inputs, nm.inv_ls, nm.alpha, nm.y_mean, nm.y_scale, out)
        return out.reshape(th.shape[:-1] + (out.shape[1],))

    def predict_variance(self, node: str, theta) -> np.ndarray:
        from .gp import gp_predict_var
        th = np.atleast_2d(np.asarray(theta, float))
        return np.stack([gp_predict_var(m, th) for m in self.models(node)], axis=-1)

    def reconstruct_fields(self, node: str, prediction: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        p = self.p
        return (reconstruct(self.basis(node, "X"), prediction[..., :p]),
                reconstruct(self.basis(node, "Y"), prediction[..., p:2 * p]))


def _stack(models: list[GpModel], bases: dict[str, PcaBasis]) -> _NodeModels:
    return _NodeModels(
        bases=bases, models=models,
        inv_ls=np.ascontiguousarray(np.stack([1.0 / m.lengthscales for m in models])),
        alpha=np.ascontiguousarray(np.stack([m.alpha for m in models])),
        y_mean=np.array([m.y_mean for m in models]),
        y_scale=np.array([m.y_scale for m in models]))


def bank_predict(bank: SurrogateBank, node: str, theta) -> ReducedObservation:
    """Surrogate scores and loads at one parameter vector."""
    th = np.asarray(theta, float)
    if th.shape != (bank.bounds.dim,):
        raise InvalidArgumentError(f"theta must have shape ({bank.bounds.dim},)")
    if not bank.bounds.contains(th):
        log.warning("bank prediction outside the training box at %s", th.tolist())
    y = bank.predict(node, th)
    p = bank.p
    return ReducedObservation(y[:p].copy(), y[p:2 * p].copy(), float(y[2 * p]), float(y[2 * p + 1]), node)


def reduce_observation(bank: SurrogateBank, obs) -> ReducedObservation:
    """Project a FieldObservation onto its node's bases."""
    node = obs.node_id
    return ReducedObservation(project(bank.basis(node, "X"), obs.displacement_x),
                              project(bank.basis(node, "Y"), obs.displacement_y),
                              float(obs.load_x), float(obs.load_y), node)


def heldout_errors(bank: SurrogateBank, config: BankConfig, bank_dir, psi2_disp: float, psi2_load: float,
                   mesh=None) -> dict:
    """Held-out surrogate errors per (node, channel) against direct model runs.

    Returns arrays keyed by ``mae``, ``range``, ``noise_sd`` (n_nodes, C) and
    ``field_rel`` (n_nodes, 2): maximum absolute reconstruction error over
    held-out points relative to the training field range.
    """
    idx = range(config.sample_count, config.sample_count + config.heldout_count)
    if config.heldout_count < 1:
        raise InvalidArgumentError("bank config has no held-out points")
    data = run_samples(config, bank_dir, idx, mesh=mesh)
    train = run_samples(config, bank_dir, range(config.sample_count), mesh=mesh)
    thetas = halton_samples(config.heldout_count, config.bounds, start=config.sample_count)
    v = (data.shape[2] - 2) // 2
    p = bank.p
    nodes = config.nodes
    mae = np.zeros((len(nodes), 2 * p + 2))
    rng_ = np.zeros_like(mae)
    field_rel = np.zeros((len(nodes), 2))
    for i, node in enumerate(nodes):
        pred = bank.predict(node, thetas)
        truth = np.concatenate([project(bank.basis(node, "X"), data[:, i, :v]),
                                project(bank.basis(node, "Y"), data[:, i, v:2 * v]),
                                data[:, i, 2 * v:]], axis=1)
        ttrain = np.concatenate([project(bank.basis(node, "X"), train[:, i, :v]),
                                 project(bank.basis(node, "Y"), train[:, i, v:2 * v]),
                                 train[:, i, 2 * v:]], axis=1)
        mae[i] = np.mean(np.abs(pred - truth), axis=0)
        rng_[i] = ttrain.max(0) - ttrain.min(0)
        fx, fy = bank.reconstruct_fields(node, pred)
        for c, (f, direct) in enumerate(((fx, data[:, i, :v]), (fy, data[:, i, v:2 * v]))):
            span = train[:, i, c * v:(c + 1) * v].max() - train[:, i, c * v:(c + 1) * v].min()
            field_rel[i, c] = np.abs(f - direct).max() / span
    noise_sd = np.concatenate([np.full(2 * p, np.sqrt(psi2_disp)), np.full(2, np.sqrt(psi2_load))])
    return {"nodes": nodes, "mae": mae, "range": rng_, "noise_sd": np.broadcast_to(noise_sd, mae.shape).copy(),
            "field_rel": field_rel}
