"""Command-line front end: one YAML config drives truth generation, training, ICC and validation."""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .boed import EigSettings, LinearGaussianBank, estimate_eig, run_icc
from .errors import InvalidArgumentError
from .infer import (
    QOI_GROUPS,
    GaussianPosterior,
    LaplaceSettings,
    MapSettings,
    McmcSettings,
    NoiseModel,
    PriorSpec,
    laplace_posterior,
    mcmc_sample,
    summarize,
)
from .pathtree import LoadPathTree, enumerate_paths, node_to_index, prefixes
from .report import (
    bflpd,
    credible_band,
    emit_reports,
    posterior_predictive,
    save_bflpd,
    save_calibration,
    save_icc,
    save_validation,
)
from .rng import derived_seed
from .structure import (
    CruciformGeometry,
    NoiseSpec,
    build_cruciform_mesh,
    read_observations,
    simulate_tree,
    synthesize_data,
    write_observations,
)
from .surrogate import BankConfig, ParameterBounds, SurrogateBank, build_bank, heldout_errors, reduce_observation
from .surrogate.design import KSI, PARAM_NAMES
from .surrogate.gp import GpSettings

log = logging.getLogger(__name__)

THETA_TRUE = (293.1, 94.0, 14.35, 11.19)


def _plain(v):
    """Nested tuples and numpy scalars as YAML-safe lists and Python numbers."""
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_plain(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


@dataclass(frozen=True)
class RunConfig:
    """Every knob of a run; serialized into each output manifest."""

    out: str = "runs/default"
    seed: int = 0
    geometry: CruciformGeometry = field(default_factory=CruciformGeometry)
    refinement: int = 0
    E: float = 68300.0
    nu: float = 0.33
    truth: tuple[float, ...] = THETA_TRUE
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    bounds: ParameterBounds = field(default_factory=ParameterBounds)
    prior_mu: tuple[float, ...] = (40.0 * KSI, 10.0 * KSI, 10.0, 10.0)
    prior_delta2: tuple[float, ...] = (225.0 * KSI**2, 225.0 * KSI**2, 225.0, 225.0)
    depth: int = 5
    increment: float = 0.25
    first_step: str = "A"
    p: int = 5
    sample_count: int = 400
    heldout_count: int = 20
    gp: GpSettings = field(default_factory=GpSettings)
    eig_N: int = 2000
    eig_M: int = 500
    underflow_nats: float = 700.0
    fallback: str = "auto"
    map_starts: int = 16
    mcmc: McmcSettings = field(default_factory=McmcSettings)
    predictive_draws: int = 200
    validate_calibration: str = "AAAAA"
    validate_prediction: str = "ABBBA"
    bank_dir: str | None = None

    def __post_init__(self):
        if self.first_step not in ("A", "B"):
            raise InvalidArgumentError("first_step must be A or B")
        if len(self.truth) != self.bounds.dim:
            raise InvalidArgumentError("truth must have one value per parameter")
        if not self.bounds.contains(np.array(self.truth)):
            raise InvalidArgumentError(f"truth {self.truth} lies outside the bounds")
        for path in (self.validate_calibration, self.validate_prediction):
            if len(path) != self.depth or path[0] != self.first_step or set(path) - {"A", "B"}:
                raise InvalidArgumentError(f"validation path {path!r} is not a full path of the tree")
        # constructing the nested specs validates them
        self.bank_config(), self.prior(), self.eig_settings(), self.laplace_settings()

    # -- derived specs --------------------------------------------------------
    def bank_config(self) -> BankConfig:
        return BankConfig(self.geometry, self.refinement, self.E, self.nu, self.bounds, self.sample_count,
                          self.heldout_count, self.p, self.depth, self.first_step, self.increment, self.gp)

    def prior(self) -> PriorSpec:
        return PriorSpec(tuple(self.prior_mu), tuple(self.prior_delta2), self.bounds)

    def eig_settings(self) -> EigSettings:
        return EigSettings(self.eig_N, self.eig_M, self.seed, self.underflow_nats, self.fallback)

    def laplace_settings(self) -> LaplaceSettings:
        return LaplaceSettings(map=MapSettings(n_starts=self.map_starts, seed=self.seed))

    def tree(self) -> LoadPathTree:
        return LoadPathTree(self.depth)

    def paths(self) -> list[str]:
        return enumerate_paths(self.depth, self.first_step)

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    @property
    def bank_path(self) -> Path:
        return Path(self.bank_dir) if self.bank_dir else self.out_dir / "bank"

    def with_full_budgets(self) -> "RunConfig":
        e = EigSettings.full()
        return dataclasses.replace(self, eig_N=e.N, eig_M=e.M, mcmc=McmcSettings.full(self.mcmc.seed))

    # -- serialization -------------------------------------------------------
    def to_dict(self) -> dict:
        d = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, ParameterBounds):
                v = {"lower": v.lower, "upper": v.upper}
            elif dataclasses.is_dataclass(v):
                v = dataclasses.asdict(v)
            d[f.name] = _plain(v)
        return d

    @property
    def hash(self) -> str:
        d = self.to_dict()
        d.pop("out")
        return hashlib.sha256(json.dumps(d, sort_keys=True, default=float).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d or {})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidArgumentError(f"unknown config keys: {sorted(unknown)}")
        nested = {"geometry": CruciformGeometry, "noise": NoiseSpec, "gp": GpSettings, "mcmc": McmcSettings}
        for key, typ in nested.items():
            if key in d and isinstance(d[key], dict):
                sub = {k: tuple(v) if isinstance(v, list) else v for k, v in d[key].items()}
                d[key] = typ(**sub)
        if "bounds" in d and isinstance(d["bounds"], dict):
            d["bounds"] = ParameterBounds(tuple(d["bounds"]["lower"]), tuple(d["bounds"]["upper"]))
        for key in ("truth", "prior_mu", "prior_delta2"):
            if key in d:
                d[key] = tuple(float(x) for x in d[key])
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidArgumentError(f"bad config: {exc}") from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def dump(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(yaml.safe_dump(self.to_dict(), sort_keys=True))
        return path


def _manifest(cfg: RunConfig, command: str, outputs: dict) -> Path:
    """Record the command in ``<out>/manifest.json`` keyed by the config hash."""
    path = cfg.out_dir / "manifest.json"
    man = json.loads(path.read_text()) if path.exists() else {}
    if man.get("config_hash") not in (None, cfg.hash):
        log.warning("config changed since the last command in %s", cfg.out_dir)
    man.update({"config_hash": cfg.hash, "config": cfg.to_dict()})
    man.setdefault("commands", {})[command] = outputs
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(man, indent=1, sort_keys=True, default=str) + "\n")
    cfg.dump(cfg.out_dir / "config.yaml")
    return path


# -- truth -------------------------------------------------------------------
def cmd_generate_truth(cfg: RunConfig) -> Path:
    """Solve the whole tree under the true parameters and write every path's data."""
    mesh = build_cruciform_mesh(cfg.geometry, cfg.refinement)
    params = cfg.bank_config().material(cfg.truth)
    t0 = time.perf_counter()
    clean = simulate_tree(mesh, params, cfg.depth, cfg.first_step, cfg.increment)
    noisy = {}
    for node, ob in clean.items():
        spec = dataclasses.replace(cfg.noise, seed=derived_seed(cfg.seed, "truth-noise", *node_to_index(node)))
        noisy[node] = synthesize_data([ob], spec)[0]
    out = cfg.out_dir / "truth"
    for path in cfg.paths():
        nodes = prefixes(path)
        write_observations(out, f"{path}_noiseless", [clean[n] for n in nodes], mesh)
        write_observations(out, f"{path}_noisy", [noisy[n] for n in nodes], mesh)
    log.info("truth data for %d paths written to %s (%.1f s)", len(cfg.paths()), out, time.perf_counter() - t0)
    _manifest(cfg, "generate-truth", {"dir": str(out), "paths": cfg.paths()})
    return out


def load_truth(cfg: RunConfig, noisy: bool = True) -> dict:
    """Map every tree node to its stored FieldObservation."""
    out = {}
    tag = "noisy" if noisy else "noiseless"
    d = cfg.out_dir / "truth"
    for path in cfg.paths():
        try:
            obs = read_observations(d, f"{path}_{tag}")
        except FileNotFoundError as exc:
            raise FileNotFoundError(f"truth data missing ({exc.filename}); run generate-truth first") from exc
        for ob in obs:
            out.setdefault(ob.node_id, ob)
    return out


# -- surrogates --------------------------------------------------------------
def cmd_train_surrogates(cfg: RunConfig) -> SurrogateBank:
    """Build (or resume) the bank, then report held-out errors against direct solves."""
    bc = cfg.bank_config()
    bank = build_bank(bc, cfg.bank_path)
    err = heldout_errors(bank, bc, cfg.bank_path, cfg.noise.psi2_disp, cfg.noise.psi2_load)
    rows = ["node,channel,mae,range,noise_sd,mae_over_range,mae_over_noise_sd"]
    labels = [f"dispPCA_X_{k}" for k in range(bc.p)] + [f"dispPCA_Y_{k}" for k in range(bc.p)] + ["load_X", "load_Y"]
    for i, node in enumerate(err["nodes"]):
        for c, lab in enumerate(labels):
            m, r, s = err["mae"][i, c], err["range"][i, c], err["noise_sd"][i, c]
            rows.append(f"{node},{lab},{m!r},{r!r},{s!r},{m / r!r},{m / s!r}")
    report = cfg.bank_path / "heldout_errors.csv"
    report.write_text("\n".join(rows) + "\n")
    _manifest(cfg, "train-surrogates", {"bank": str(cfg.bank_path), "heldout": str(report),
                                        "max_mae_over_noise_sd": float((err["mae"] / err["noise_sd"]).max())})
    return bank


def _bank_and_noise(cfg: RunConfig, qois=QOI_GROUPS):
    bank = SurrogateBank.load(cfg.bank_path)
    return bank, NoiseModel.from_bank(bank, cfg.noise.psi2_disp, cfg.noise.psi2_load, tuple(qois))


def _reduced_truth(cfg: RunConfig, bank) -> dict:
    return {node: reduce_observation(bank, ob) for node, ob in load_truth(cfg).items()}


# -- calibration -------------------------------------------------------------
def calibrate(cfg: RunConfig, path: str, bank, noise, truth=None) -> GaussianPosterior:
    truth = truth if truth is not None else _reduced_truth(cfg, bank)
    return laplace_posterior([truth[n] for n in prefixes(path)], cfg.prior(), bank, noise, cfg.laplace_settings())


def cmd_run_icc(cfg: RunConfig):
    """Run the ICC loop against the stored truth data and emit reports."""
    bank, noise = _bank_and_noise(cfg)
    truth = _reduced_truth(cfg, bank)
    result = run_icc(truth, cfg.tree(), bank, cfg.prior(), noise, cfg.eig_settings(), cfg.laplace_settings(),
                     cfg.first_step)
    save_icc(cfg.out_dir, result)
    save_calibration(cfg.out_dir, result.path, result.steps[-1].posterior)
    emit_reports(cfg.out_dir)
    _manifest(cfg, "run-icc", {"path": result.path, "seconds": [s.seconds for s in result.steps]})
    log.info("ICC chose %s; final mean %s", result.path, np.round(result.final.mean, 3).tolist())
    return result


def cmd_sweep_paths(cfg: RunConfig) -> list[tuple[str, float]]:
    """Laplace-calibrate every path; rows sorted by generalized variance."""
    bank, noise = _bank_and_noise(cfg)
    truth = _reduced_truth(cfg, bank)
    dets = []
    for path in cfg.paths():
        post = calibrate(cfg, path, bank, noise, truth)
        save_calibration(cfg.out_dir, path, post)
        dets.append((path, summarize(post).generalized_variance))
    dets.sort(key=lambda r: r[1])
    lines = ["rank,path,det_Sigma"] + [f"{i + 1},{p},{d!r}" for i, (p, d) in enumerate(dets)]
    (cfg.out_dir / "sweep_ordering.csv").write_text("\n".join(lines) + "\n")
    emit_reports(cfg.out_dir)
    _manifest(cfg, "sweep-paths", {"ordering": [p for p, _ in dets]})
    return dets


def cmd_calibrate_path(cfg: RunConfig, path: str, qois=QOI_GROUPS, mcmc: bool = False) -> dict:
    """Calibrate one path with a chosen QoI subset; optionally add an MCMC check."""
    bank, noise = _bank_and_noise(cfg, qois)
    truth = _reduced_truth(cfg, bank)
    data = [truth[n] for n in prefixes(path)]
    post = laplace_posterior(data, cfg.prior(), bank, noise, cfg.laplace_settings())
    save_calibration(cfg.out_dir, path, post, qois)
    out = {"laplace": summarize(post)}
    if mcmc:
        chain = mcmc_sample(data, cfg.prior(), bank, noise, cfg.mcmc, start=post.mean, initial_cov=post.covariance)
        out["mcmc"] = summarize(chain)
        out["acceptance_rate"] = chain.acceptance_rate
        np.save(cfg.out_dir / "calibrations" / f"{path}__mcmc.npy", chain.samples)
    emit_reports(cfg.out_dir)
    _manifest(cfg, f"calibrate-path:{path}:{'+'.join(qois)}", {"mean": out["laplace"].mean.tolist()})
    return out


def cmd_validate(cfg: RunConfig, calibration: str | None = None, prediction: str | None = None) -> dict:
    """Posterior predictive bands for one pair plus the BFLPD row of the calibration."""
    calibration = calibration or cfg.validate_calibration
    prediction = prediction or cfg.validate_prediction
    bank, noise = _bank_and_noise(cfg)
    truth = _reduced_truth(cfg, bank)
    raw = load_truth(cfg)
    post = calibrate(cfg, calibration, bank, noise, truth)
    save_calibration(cfg.out_dir, calibration, post)
    ens = posterior_predictive(post, prediction, bank, noise, cfg.predictive_draws, cfg.seed)
    band = credible_band(ens)
    nodes = prefixes(prediction)
    observed = [truth[n] for n in nodes]
    score = bflpd(observed, post.mean, bank, noise)
    mesh = build_cruciform_mesh(cfg.geometry, cfg.refinement)
    save_validation(cfg.out_dir, calibration, prediction, band, observed,
                    [(raw[n].displacement_x, raw[n].displacement_y) for n in nodes], mesh, score)
    row = {p: bflpd([truth[n] for n in prefixes(p)], post.mean, bank, noise) for p in cfg.paths()}
    save_bflpd(cfg.out_dir, calibration, row)
    loads = np.array([[o.load_x, o.load_y] for o in observed])
    covered = bool(np.all((loads >= band.load_lower) & (loads <= band.load_upper)))
    emit_reports(cfg.out_dir)
    _manifest(cfg, f"validate:{calibration}:{prediction}", {"loads_covered": covered, "bflpd": score})
    return {"loads_covered": covered, "bflpd": score, "bflpd_row": row, "band": band}


# -- EIG oracle ----------------------------------------------------------------
def eig_oracle_checks(seed: int = 0, N: int = 2000, M: int = 500) -> list[tuple[str, bool, str]]:
    """Closed-form Gaussian EIG comparisons on a 1-D linear stub.

    The stub observes ``theta + noise`` on one load channel; all other
    channels are switched off through the QoI selection.
    """
    tau = psi = 1.0
    prior = PriorSpec((0.0,), (tau**2,), ParameterBounds((-50.0 * tau,), (50.0 * tau,)))
    bank = LinearGaussianBank({"A": (np.array([[1.0], [0.0]]), np.zeros(2)),
                               "B": (np.zeros((2, 1)), np.array([3.0, -2.0]))}, p=0)
    noise = NoiseModel(1.0, psi**2, qois=("load_X",))
    s = EigSettings(N=N, M=M, seed=seed)
    out = []
    exact = 0.5 * np.log(2.0)
    e = estimate_eig(prior, "A", bank, noise, s)
    out.append(("half-ln2", abs(e.value - exact) <= 3 * e.standard_error,
                f"EIG {e.value:.5f} +- {e.standard_error:.5f}, exact {exact:.5f}"))
    z = estimate_eig(prior, "B", bank, noise, s)
    out.append(("zero-information", abs(z.value) <= 3 * z.standard_error + 1e-12,
                f"EIG {z.value:.3g} +- {z.standard_error:.3g}"))
    vals = []
    for m in (50, 1000):
        r = estimate_eig(prior, "A", bank, noise, EigSettings(N=N, M=m, seed=seed))
        vals.append(r)
    lo, hi = vals
    ok = hi.value >= lo.value - 3 * np.hypot(lo.standard_error, hi.standard_error)
    out.append(("M-bias", ok, f"M=50 {lo.value:.5f}, M=1000 {hi.value:.5f}"))
    return out


def cmd_eig_oracle(cfg: RunConfig) -> bool:
    checks = eig_oracle_checks(cfg.seed, cfg.eig_N, cfg.eig_M)
    for name, ok, msg in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {msg}")
    return all(ok for _, ok, _ in checks)


# -- entry point -------------------------------------------------------------
def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="iccflow", description=__doc__)
    ap.add_argument("--config", type=Path, help="YAML run configuration (defaults are built in)")
    ap.add_argument("--out", help="output directory (overrides the config)")
    ap.add_argument("--seed", type=int, help="master seed (overrides the config)")
    ap.add_argument("--paper-budgets", action="store_true", help="use the full EIG and MCMC budgets")
    ap.add_argument("--threads", type=int, help="numba worker threads")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("generate-truth", help="solve all paths under the true parameters")
    sub.add_parser("train-surrogates", help="build or resume the surrogate bank")
    sub.add_parser("run-icc", help="run the calibration loop with EIG step selection")
    sub.add_parser("sweep-paths", help="calibrate every path and rank by det(Sigma)")
    cp = sub.add_parser("calibrate-path", help="calibrate one path")
    cp.add_argument("path")
    cp.add_argument("--qois", default=",".join(QOI_GROUPS), help="comma-separated QoI groups")
    cp.add_argument("--mcmc", action="store_true", help="also run adaptive Metropolis")
    va = sub.add_parser("validate", help="posterior predictive check and BFLPD")
    va.add_argument("--calibration")
    va.add_argument("--prediction")
    sub.add_parser("eig-oracle", help="closed-form EIG checks on a conjugate stub")
    sub.add_parser("report", help="regenerate report files from stored artifacts")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        over = {k: v for k, v in (("out", args.out), ("seed", args.seed)) if v is not None}
        cfg = dataclasses.replace(cfg, **over) if over else cfg
        if args.paper_budgets:
            cfg = cfg.with_full_budgets()
        if args.threads:
            import numba
            numba.set_num_threads(args.threads)
        cmd = args.command
        if cmd == "generate-truth":
            cmd_generate_truth(cfg)
        elif cmd == "train-surrogates":
            cmd_train_surrogates(cfg)
        elif cmd == "run-icc":
            r = cmd_run_icc(cfg)
            print(f"chosen path {r.path}")
            for name, m, z in zip(PARAM_NAMES, r.final.mean, r.final.zeta):
                print(f"  {name:8s} {m:12.5g} +- {z:.3g}")
        elif cmd == "sweep-paths":
            for path, det in cmd_sweep_paths(cfg):
                print(f"{path} {det:.6e}")
        elif cmd == "calibrate-path":
            res = cmd_calibrate_path(cfg, args.path, tuple(q for q in args.qois.split(",") if q), args.mcmc)
            for k, s in res.items():
                if hasattr(s, "mean"):
                    print(k, np.round(s.mean, 4).tolist(), np.round(np.sqrt(s.variance), 4).tolist())
        elif cmd == "validate":
            res = cmd_validate(cfg, args.calibration, args.prediction)
            print(f"loads inside 95% band: {res['loads_covered']}; BFLPD {res['bflpd']:.4f}")
        elif cmd == "eig-oracle":
            return 0 if cmd_eig_oracle(cfg) else 1
        elif cmd == "report":
            for p in emit_reports(cfg.out_dir):
                print(p)
    except Exception as exc:  # noqa: BLE001 - report any failure as a nonzero exit
        log.error("%s failed: %s", args.command, exc, exc_info=args.verbose)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
