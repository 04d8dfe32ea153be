"""Posterior predictive checks, credible bands, BFLPD, error metrics and report files."""
from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError
from .infer import (
    QOI_GROUPS,
    GaussianPosterior,
    NoiseModel,
    log_likelihood,
    qoi_loglike_contributions,
    summarize,
)
from .pathtree import prefixes
from .reduce import ReducedObservation
from .rng import stream
from .surrogate.design import PARAM_NAMES

log = logging.getLogger(__name__)

__all__ = [
    "CredibleBand",
    "PredictiveEnsemble",
    "band_differences",
    "bflpd",
    "credible_band",
    "emit_reports",
    "error_metrics",
    "line_scan_nodes",
    "posterior_predictive",
    "qoi_loglike_contributions",
    "save_bflpd",
    "save_calibration",
    "save_icc",
    "save_validation",
]


@dataclass(frozen=True)
class PredictiveEnsemble:
    """Posterior predictive draws along one load path.

    ``observations`` holds noisy predicted data vectors ``(count, T, 2p+2)``
    in the layout of ReducedObservation.vector. ``fields_x`` and
    ``fields_y`` ``(count, T, v)`` are gauge displacements reconstructed from
    the noiseless predicted scores plus per-point measurement noise, so they
    are directly comparable with measured full fields.
    """

    path: str
    nodes: tuple[str, ...]
    thetas: np.ndarray
    observations: np.ndarray
    fields_x: np.ndarray
    fields_y: np.ndarray

    @property
    def count(self) -> int:
        return self.thetas.shape[0]

    @property
    def loads(self) -> np.ndarray:
        """Predicted loads ``(count, T, 2)``."""
        return self.observations[..., -2:]


def posterior_predictive(posterior: GaussianPosterior, path: str, bank, noise: NoiseModel,
                         count: int = 200, seed: int = 0) -> PredictiveEnsemble:
    """Draw parameters from the bounded posterior and push them through the bank with noise."""
    if count < 1:
        raise InvalidArgumentError("count must be at least 1")
    nodes = tuple(prefixes(path))
    missing = [n for n in nodes if n not in bank]
    if missing:
        raise InvalidArgumentError(f"path nodes not in bank: {missing}")
    thetas = posterior.sample(count, stream(seed, "predictive-theta"))
    p = bank.p
    obs, fx, fy = [], [], []
    for k, node in enumerate(nodes):
        mean = bank.predict(node, thetas)
        rng = stream(seed, "predictive-noise", k)
        noisy = mean.copy()
        for _, sl, cov in noise.blocks(node, p):
            w = sl.stop - sl.start
            if w:
                noisy[:, sl] += rng.standard_normal((count, w)) @ np.linalg.cholesky(cov).T
        obs.append(noisy)
        x, y = bank.reconstruct_fields(node, mean)
        sd = np.sqrt(noise.psi2_disp)
        fx.append(x + sd * rng.standard_normal(x.shape))
        fy.append(y + sd * rng.standard_normal(y.shape))
    return PredictiveEnsemble(path, nodes, thetas, np.stack(obs, 1), np.stack(fx, 1), np.stack(fy, 1))


@dataclass(frozen=True)
class CredibleBand:
    """Point-wise 95% bounds; arrays are ``(T, 2)`` for loads and ``(T, v)`` for fields."""

    load_lower: np.ndarray
    load_upper: np.ndarray
    field_x_lower: np.ndarray
    field_x_upper: np.ndarray
    field_y_lower: np.ndarray
    field_y_upper: np.ndarray


def credible_band(ensemble: PredictiveEnsemble, level: float = 0.95) -> CredibleBand:
    """Empirical 2.5 / 97.5 percentiles over draws."""
    if ensemble.count < 20:
        raise InvalidArgumentError("credible bands need at least 20 draws")
    q = 100 * np.array([(1 - level) / 2, (1 + level) / 2])

    def pct(a):
        lo, hi = np.percentile(a, q, axis=0)
        return lo, hi

    return CredibleBand(*pct(ensemble.loads), *pct(ensemble.fields_x), *pct(ensemble.fields_y))


def band_differences(lower: np.ndarray, upper: np.ndarray, observed: np.ndarray) -> np.ndarray:
    """Signed distance of observations outside the band; zero inside it.

    Negative entries lie below the lower bound and positive entries above the
    upper bound, so nonzero entries mark exactly the out-of-band points.
    """
    obs = np.asarray(observed, float)
    return np.where(obs < lower, obs - lower, np.where(obs > upper, obs - upper, 0.0))


def bflpd(data, theta_map, bank, noise: NoiseModel) -> float:
    """Best-fit log predictive density: held-out log-likelihood at the MAP."""
    return float(log_likelihood(list(data), np.asarray(theta_map, float), bank, noise))


def error_metrics(truth, prediction) -> dict[str, dict[str, np.ndarray]]:
    """Per-channel sMAPE (percent) and MAE for each QoI group.

    Accepts ReducedObservation sequences or ``(T, 2p+2)`` arrays. sMAPE is
    ``100 mean(2|p - t| / (|p| + |t|))`` with zero-denominator points skipped.
    """
    def as_array(x):
        if isinstance(x, ReducedObservation):
            x = [x]
        if isinstance(x, (list, tuple)) and x and isinstance(x[0], ReducedObservation):
            return np.stack([o.vector() for o in x])
        return np.atleast_2d(np.asarray(x, float))

    t, pr = as_array(truth), as_array(prediction)
    if t.shape != pr.shape:
        raise InvalidArgumentError(f"shape mismatch {t.shape} vs {pr.shape}")
    p = (t.shape[1] - 2) // 2
    den = np.abs(pr) + np.abs(t)
    ratio = np.where(den > 0, 2 * np.abs(pr - t) / np.where(den > 0, den, 1.0), np.nan)
    with warnings.catch_warnings():
        # channels whose every point has a zero denominator stay NaN
        warnings.simplefilter("ignore", RuntimeWarning)
        smape = 100 * np.nanmean(ratio, axis=0) if t.shape[0] else ratio
    mae = np.mean(np.abs(pr - t), axis=0)
    groups = dict(zip(QOI_GROUPS, (slice(0, p), slice(p, 2 * p), slice(2 * p, 2 * p + 1),
                                   slice(2 * p + 1, 2 * p + 2))))
    return {g: {"sMAPE": smape[sl], "MAE": mae[sl]} for g, sl in groups.items()}


def line_scan_nodes(mesh) -> dict[str, np.ndarray]:
    """Gauge-node positions (indices into the gauge field) on the two scan lines.

    Line 1 is the horizontal diameter of the gauge circle (y = 0); line 2 is
    the 45 degree diagonal. Both are ordered by distance from the centre.
    """
    xy = mesh.nodes[mesh.gauge]
    tol = 1e-9 * max(1.0, np.abs(xy).max())
    r = np.hypot(xy[:, 0], xy[:, 1])
    out = {}
    for name, mask in (("horizontal", np.abs(xy[:, 1]) <= tol),
                       ("diagonal", np.abs(xy[:, 0] - xy[:, 1]) <= tol)):
        idx = np.flatnonzero(mask)
        out[name] = idx[np.argsort(r[idx])]
    return out


# -- persistence -------------------------------------------------------------
def _dump(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True))
    return path


def save_calibration(run_dir, path: str, posterior: GaussianPosterior, qois=QOI_GROUPS) -> Path:
    """Store one calibrated posterior under ``calibrations/``."""
    tag = path if tuple(qois) == QOI_GROUPS else f"{path}__{'+'.join(qois)}"
    return _dump(Path(run_dir) / "calibrations" / f"{tag}.json",
                 {"path": path, "qois": list(qois), "mean": posterior.mean.tolist(),
                  "covariance": np.asarray(posterior.covariance).tolist(),
                  "log_posterior": float(posterior.log_posterior_at_mean)})


def save_icc(run_dir, result) -> Path:
    """Store an IccResult: chosen path, per-step posteriors and EIG decisions."""
    decisions = []
    for st in result.steps:
        if st.selection is None:
            continue
        a, b = st.selection.estimates
        decisions.append({"step": st.step, "node": st.node_id,
                          "eig_A": a.value if a else float("nan"), "se_A": a.standard_error if a else float("nan"),
                          "eig_B": b.value if b else float("nan"), "se_B": b.standard_error if b else float("nan"),
                          "fallback_A": a.fallback_count if a else -1, "fallback_B": b.fallback_count if b else -1,
                          "choice": st.selection.axis, "tie": st.selection.tie, "seconds": st.seconds})
    steps = [{"step": st.step, "node": st.node_id, "mean": st.posterior.mean.tolist(),
              "covariance": np.asarray(st.posterior.covariance).tolist(),
              "log_posterior": float(st.posterior.log_posterior_at_mean), "seconds": st.seconds}
             for st in result.steps]
    return _dump(Path(run_dir) / "icc.json", {"path": result.path, "steps": steps, "decisions": decisions})


def save_validation(run_dir, calibration: str, prediction: str, band: CredibleBand,
                    observed: list[ReducedObservation], observed_fields, mesh, bflpd_value: float) -> Path:
    """Store the bands and observed data of one (calibration, prediction) pair."""
    scans = line_scan_nodes(mesh)
    loads = np.array([[o.load_x, o.load_y] for o in observed])
    fx = np.array([f[0] for f in observed_fields])
    fy = np.array([f[1] for f in observed_fields])
    rec = {"calibration": calibration, "prediction": prediction, "bflpd": bflpd_value,
           "loads": {"observed": loads.tolist(), "lower": band.load_lower.tolist(), "upper": band.load_upper.tolist()},
           "scans": {}}
    for name, idx in scans.items():
        pts = mesh.nodes[mesh.gauge][idx]
        rec["scans"][name] = {
            "x": pts[:, 0].tolist(), "y": pts[:, 1].tolist(),
            "observed_x": fx[:, idx].tolist(), "observed_y": fy[:, idx].tolist(),
            "lower_x": band.field_x_lower[:, idx].tolist(), "upper_x": band.field_x_upper[:, idx].tolist(),
            "lower_y": band.field_y_lower[:, idx].tolist(), "upper_y": band.field_y_upper[:, idx].tolist()}
    out_of_band = (band_differences(band.field_x_lower, band.field_x_upper, fx) != 0) | \
                  (band_differences(band.field_y_lower, band.field_y_upper, fy) != 0)
    rec["field_outside_fraction"] = float(out_of_band.mean())
    return _dump(Path(run_dir) / "validation" / f"{calibration}_on_{prediction}.json", rec)


def save_bflpd(run_dir, calibration: str, scores: dict[str, float]) -> Path:
    """Store one BFLPD matrix row: the calibration MAP scored on each held-out path."""
    return _dump(Path(run_dir) / "bflpd" / f"{calibration}.json",
                 {"calibration": calibration, "scores": {k: float(v) for k, v in scores.items()}})


def _write_csv(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return path


def emit_reports(run_dir) -> list[Path]:
    """Turn stored run artifacts into CSV tables and line-scan plot data.

    Reads ``calibrations/*.json``, ``icc.json``, ``validation/*.json`` and
    ``bflpd/*.json`` when present and writes under ``reports/``. Output depends only on the
    artifacts, so re-running on unchanged inputs reproduces identical files.
    """
    run = Path(run_dir)
    rep = run / "reports"
    written = []
    try:
        cals = [json.loads(p.read_text()) for p in sorted((run / "calibrations").glob("*.json"))]
        icc_file = run / "icc.json"
        icc = json.loads(icc_file.read_text()) if icc_file.exists() else None
        vals = [json.loads(p.read_text()) for p in sorted((run / "validation").glob("*.json"))]
        bfl = [json.loads(p.read_text()) for p in sorted((run / "bflpd").glob("*.json"))]
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read run artifacts in {run}: {exc}") from exc
    if cals:
        header = ["path", "qois"] + [f"E_{n}" for n in PARAM_NAMES] + [f"V_{n}" for n in PARAM_NAMES] \
            + [f"zeta_{n}" for n in PARAM_NAMES] + ["det_Sigma"]
        rows = []
        for c in cals:
            s = summarize(_posterior_from_record(c))
            rows.append([c["path"], "+".join(c["qois"]), *s.mean, *s.variance, *s.zeta, s.generalized_variance])
            written.append(_write_csv(rep / "correlation" / f"{c['path']}__{'+'.join(c['qois'])}.csv",
                                      ["param", *PARAM_NAMES],
                                      [[n, *row] for n, row in zip(PARAM_NAMES, s.correlation)]))
        written.append(_write_csv(rep / "posterior_summary.csv", header, rows))
    if icc is not None:
        written.append(_write_csv(rep / "eig_steps.csv",
                                  ["step", "node", "eig_A", "se_A", "eig_B", "se_B", "choice", "tie",
                                   "fallback_A", "fallback_B", "seconds"],
                                  [[r[k] for k in ("step", "node", "eig_A", "se_A", "eig_B", "se_B", "choice",
                                                   "tie", "fallback_A", "fallback_B", "seconds")]
                                   for r in icc["decisions"]]))
    table = {(v["calibration"], v["prediction"]): v["bflpd"] for v in vals}
    for row in bfl:
        table.update({(row["calibration"], k): x for k, x in row["scores"].items()})
    if table:
        cal_ids = sorted({c for c, _ in table})
        pred_ids = sorted({p for _, p in table})
        written.append(_write_csv(rep / "bflpd_matrix.csv", ["calibration", *pred_ids],
                                  [[c, *[table.get((c, p), "") for p in pred_ids]] for c in cal_ids]))
    if vals:
        for v in vals:
            stem = f"{v['calibration']}_on_{v['prediction']}"
            ld = v["loads"]
            written.append(_write_csv(
                rep / "bands" / f"{stem}_loads.csv",
                ["step", "load_x", "lower_x", "upper_x", "diff_x", "load_y", "lower_y", "upper_y", "diff_y"],
                [[k + 1, *_band_row(ld, k, 0), *_band_row(ld, k, 1)] for k in range(len(ld["observed"]))]))
            for name, sc in v["scans"].items():
                rows = []
                for k in range(len(sc["observed_x"])):
                    for j in range(len(sc["x"])):
                        ox, oy = sc["observed_x"][k][j], sc["observed_y"][k][j]
                        lx, ux = sc["lower_x"][k][j], sc["upper_x"][k][j]
                        ly, uy = sc["lower_y"][k][j], sc["upper_y"][k][j]
                        rows.append([k + 1, sc["x"][j], sc["y"][j], ox, lx, ux,
                                     float(band_differences(lx, ux, ox)), oy, ly, uy,
                                     float(band_differences(ly, uy, oy))])
                written.append(_write_csv(
                    rep / "bands" / f"{stem}_scan_{name}.csv",
                    ["step", "x", "y", "disp_x", "lower_x", "upper_x", "diff_x",
                     "disp_y", "lower_y", "upper_y", "diff_y"], rows))
    log.info("wrote %d report files under %s", len(written), rep)
    return written


def _band_row(ld, k, c):
    o, lo, hi = ld["observed"][k][c], ld["lower"][k][c], ld["upper"][k][c]
    return [o, lo, hi, float(band_differences(lo, hi, o))]


def _posterior_from_record(rec) -> GaussianPosterior:
    from .surrogate.design import ParameterBounds
    return GaussianPosterior(np.array(rec["mean"]), np.array(rec["covariance"]), ParameterBounds(),
                             rec.get("log_posterior", np.nan))
