"""Prediction-quality metrics and worst-case error analysis.

Joint-angle quality is the pooled coefficient of determination. Workspace
quality re-runs forward kinematics on the predicted angles: position error is
the Euclidean distance between predicted and target positions; orientation
error is the mean of the three per-axis convex-angle distances. The worst
slice of a report (by either error) feeds histogram and scatter exports.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Dataset, config_from_row
from .graph import build_edge_features, build_node_features, dataset_targets, draw_reference_angles
from .kinematics import forward_kinematics
from .mpnn import MPNNModel, predict_batch
from .seeding import substream

HISTOGRAM_BINS = 50


def r_squared(predictions, targets) -> float:
    """Pooled 1 - SS_res/SS_tot over all entries; 1 is perfect, unbounded below."""
    predictions = np.asarray(predictions, dtype=np.float64).ravel()
    targets = np.asarray(targets, dtype=np.float64).ravel()
    if predictions.shape != targets.shape:
        raise ValueError(f"shape mismatch: {predictions.shape} vs {targets.shape}")
    if targets.size < 2:
        raise ValueError("need at least two samples")
    ss_tot = float(np.sum((targets - targets.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("targets have zero variance; the metric is undefined")
    ss_res = float(np.sum((predictions - targets) ** 2))
    return 1.0 - ss_res / ss_tot


def r_squared_per_joint(predictions: np.ndarray, targets: np.ndarray) -> np.ndarray:
    return np.array([r_squared(predictions[:, j], targets[:, j]) for j in range(targets.shape[1])])


def convex_angle_distance(alpha, beta):
    """Smallest angle between two directions on the unit circle, in [0, 180]."""
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(beta))):
        raise ValueError("angles must be finite")
    delta = np.abs(alpha - beta) % 360.0
    result = np.minimum(delta, 360.0 - delta)
    return float(result) if result.ndim == 0 else result


def half_turn_fold_distance(angle_deg):
    """Distance (degrees) to the nearest multiple of 180."""
    folded = np.asarray(angle_deg, dtype=np.float64) % 180.0
    return np.minimum(folded, 180.0 - folded)


@dataclass
class EvalReport:
    """Per-sample errors plus aggregates for one evaluation split."""

    split: str
    variant: str
    dof: int
    theta_hat_rad: np.ndarray  # (S, dof)
    theta_rad: np.ndarray  # (S, dof)
    theta_deg: np.ndarray  # (S, dof) targets
    positions: np.ndarray  # (S, 3) targets
    positions_hat: np.ndarray  # (S, 3)
    orientations: np.ndarray  # (S, 3) targets, degrees
    orientations_hat: np.ndarray  # (S, 3)
    position_errors: np.ndarray  # (S,)
    orientation_errors: np.ndarray  # (S,)
    meta: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return self.position_errors.shape[0]

    def aggregates(self) -> dict:
        per_joint = r_squared_per_joint(self.theta_hat_rad, self.theta_rad)
        return {
            "split": self.split,
            "variant": self.variant,
            "n_samples": self.n_samples,
            "r2": r_squared(self.theta_hat_rad, self.theta_rad),
            "r2_per_joint": per_joint.tolist(),
            "loss": float(np.mean((self.theta_hat_rad - self.theta_rad) ** 2)),
            "position_error_mean": float(self.position_errors.mean()),
            "position_error_std": float(self.position_errors.std()),
            "orientation_error_mean": float(self.orientation_errors.mean()),
            "orientation_error_std": float(self.orientation_errors.std()),
        }

    def save(self, out_dir) -> tuple[Path, Path]:
        """report.json with aggregates plus samples.csv with per-sample rows."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report_path = out / "report.json"
        samples_path = out / "samples.csv"
        payload = self.aggregates()
        payload["meta"] = self.meta
        report_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")

        dof = self.dof
        names = (
            ["index", "position_error", "orientation_error", "x", "y", "z", "x_hat", "y_hat", "z_hat"]
            + ["phi", "theta", "psi", "phi_hat", "theta_hat", "psi_hat"]
            + [f"theta_deg_{j}" for j in range(1, dof + 1)]
            + [f"theta_hat_rad_{j}" for j in range(1, dof + 1)]
        )
        mat = np.column_stack(
            [
                np.arange(self.n_samples, dtype=float),
                self.position_errors,
                self.orientation_errors,
                self.positions,
                self.positions_hat,
                self.orientations,
                self.orientations_hat,
                self.theta_deg,
                self.theta_hat_rad,
            ]
        )
        with open(samples_path, "w", encoding="utf-8") as f:
            f.write(",".join(names) + "\n")
            np.savetxt(f, mat, fmt="%.17g", delimiter=",")
        return report_path, samples_path

    @staticmethod
    def load(report_path) -> "EvalReport":
        report_path = Path(report_path)
        payload = json.loads(report_path.read_text(encoding="utf-8"))
        samples_path = report_path.parent / "samples.csv"
        with open(samples_path, "r", encoding="utf-8") as f:
            names = f.readline().strip().split(",")
            mat = np.loadtxt(f, delimiter=",", ndmin=2)
        col = {n: mat[:, i] for i, n in enumerate(names)}
        dof = sum(1 for n in names if n.startswith("theta_deg_"))
        theta_deg = np.column_stack([col[f"theta_deg_{j}"] for j in range(1, dof + 1)])
        theta_hat = np.column_stack([col[f"theta_hat_rad_{j}"] for j in range(1, dof + 1)])
        return EvalReport(
            split=payload["split"],
            variant=payload["variant"],
            dof=dof,
            theta_hat_rad=theta_hat,
            theta_rad=theta_deg * (math.pi / 180.0),
            theta_deg=theta_deg,
            positions=np.column_stack([col["x"], col["y"], col["z"]]),
            positions_hat=np.column_stack([col["x_hat"], col["y_hat"], col["z_hat"]]),
            orientations=np.column_stack([col["phi"], col["theta"], col["psi"]]),
            orientations_hat=np.column_stack([col["phi_hat"], col["theta_hat"], col["psi_hat"]]),
            position_errors=col["position_error"],
            orientation_errors=col["orientation_error"],
            meta=payload.get("meta", {}),
        )


def workspace_errors(ds: Dataset, theta_hat_deg: np.ndarray):
    """Forward-kinematics errors of candidate joint angles against a dataset.

    Each row is pushed through FK with its own DH table (degrees in, so a
    candidate equal to the stored angles reproduces the stored pose exactly).
    Returns (predicted positions, predicted orientations, position errors,
    per-sample mean convex-angle orientation errors).
    """
    n = ds.n_rows
    dof = ds.dof
    theta_hat_deg = np.asarray(theta_hat_deg, dtype=np.float64)
    if theta_hat_deg.shape != (n, dof):
        raise ValueError(f"expected angles of shape ({n}, {dof}), got {theta_hat_deg.shape}")
    positions_hat = np.empty((n, 3))
    orientations_hat = np.empty((n, 3))
    for i in range(n):
        row = ds.row(i)
        config = config_from_row(row, dof)
        pose, _ = forward_kinematics(config, theta_hat_deg[i])
        positions_hat[i] = pose.position
        orientations_hat[i] = pose.orientation
    positions = ds.matrix(["x", "y", "z"])
    orientations = ds.matrix(["phi", "theta", "psi"])
    pos_err = np.linalg.norm(positions_hat - positions, axis=1)
    orn_err = convex_angle_distance(orientations_hat, orientations).mean(axis=1)
    return positions_hat, orientations_hat, pos_err, orn_err


def pose_errors(model: MPNNModel, ds: Dataset, split: str, seed: int = 0) -> EvalReport:
    """Evaluate a model on one dataset split.

    Predicted angles are pushed through forward kinematics to obtain
    workspace errors. RG reference angles are drawn from a split-tagged
    substream of the seed.
    """
    if ds.dof != model.dof:
        raise ValueError(f"dataset dof {ds.dof} does not match model dof {model.dof}")
    theta_ref = None
    if model.mode == "RG":
        rng = substream(seed, f"eval-reference-angles-{split}")
        theta_deg = ds.matrix([f"theta_deg_{j}" for j in range(1, ds.dof + 1)])
        theta_ref = draw_reference_angles(theta_deg, rng)
    nodes = build_node_features(ds, model.mode, theta_ref)
    edges = build_edge_features(ds, model.connectivity)
    theta_hat_rad = predict_batch(model, nodes, edges)

    dof = ds.dof
    theta_hat_deg = theta_hat_rad / (math.pi / 180.0)
    positions_hat, orientations_hat, pos_err, orn_err = workspace_errors(ds, theta_hat_deg)
    positions = ds.matrix(["x", "y", "z"])
    orientations = ds.matrix(["phi", "theta", "psi"])
    return EvalReport(
        split=split,
        variant=model.name,
        dof=dof,
        theta_hat_rad=theta_hat_rad,
        theta_rad=dataset_targets(ds),
        theta_deg=ds.matrix([f"theta_deg_{j}" for j in range(1, dof + 1)]),
        positions=positions,
        positions_hat=positions_hat,
        orientations=orientations,
        orientations_hat=orientations_hat,
        position_errors=pos_err,
        orientation_errors=orn_err,
        meta={"seed": seed, "config": ds.meta.get("config"), "role": ds.meta.get("role")},
    )


def _worst_indices(errors: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest errors; ties resolved by sample index."""
    order = np.lexsort((np.arange(errors.shape[0]), -errors))
    return order[:k]


def _histogram(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    top = float(values.max()) if values.size else 0.0
    if top <= 0.0:
        top = 1.0
    edges = np.linspace(0.0, top, HISTOGRAM_BINS + 1)
    counts, _ = np.histogram(values, bins=edges)
    return edges, counts


@dataclass
class WorstCaseExtract:
    """The worst fraction of an evaluation report, by each error kind."""

    fraction: float
    size: int
    position_indices: np.ndarray
    position_errors: np.ndarray
    position_targets: np.ndarray  # (k, 3)
    position_hist_edges: np.ndarray
    position_hist_counts: np.ndarray
    orientation_indices: np.ndarray
    orientation_errors: np.ndarray
    orientation_targets: np.ndarray  # (k, 3)
    orientation_hist_edges: np.ndarray
    orientation_hist_counts: np.ndarray
    theta_pairs: np.ndarray | None  # (k, 2) second/third joint targets, 3-DOF only


def worst_case_analysis(report: EvalReport, fraction: float = 0.05) -> WorstCaseExtract:
    """Extract the worst `fraction` of samples by position and by orientation."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    k = math.ceil(fraction * report.n_samples)
    pos_idx = _worst_indices(report.position_errors, k)
    orn_idx = _worst_indices(report.orientation_errors, k)
    pos_edges, pos_counts = _histogram(report.position_errors[pos_idx])
    orn_edges, orn_counts = _histogram(report.orientation_errors[orn_idx])
    theta_pairs = None
    if report.dof == 3:
        theta_pairs = report.theta_deg[orn_idx][:, 1:3]
    return WorstCaseExtract(
        fraction=fraction,
        size=k,
        position_indices=pos_idx,
        position_errors=report.position_errors[pos_idx],
        position_targets=report.positions[pos_idx],
        position_hist_edges=pos_edges,
        position_hist_counts=pos_counts,
        orientation_indices=orn_idx,
        orientation_errors=report.orientation_errors[orn_idx],
        orientation_targets=report.positions[orn_idx],
        orientation_hist_edges=orn_edges,
        orientation_hist_counts=orn_counts,
        theta_pairs=theta_pairs,
    )


def _write_csv(path: Path, header: list[str], mat: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(header) + "\n")
        if mat.size:
            np.savetxt(f, mat, fmt="%.17g", delimiter=",")


def export_analysis(extract: WorstCaseExtract, out_dir, every: int = 1) -> list[Path]:
    """Plot-ready delimited-text exports of a worst-case extract.

    `every` thins the scatter files (keep every n-th row); histograms are
    never thinned.
    """
    if every < 1:
        raise ValueError("every must be at least 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    for kind, edges, counts in (
        ("position", extract.position_hist_edges, extract.position_hist_counts),
        ("orientation", extract.orientation_hist_edges, extract.orientation_hist_counts),
    ):
        path = out / f"{kind}_error_histogram.csv"
        mat = np.column_stack([edges[:-1], edges[1:], counts.astype(float)])
        _write_csv(path, ["bin_left", "bin_right", "count"], mat)
        written.append(path)

    for kind, idx, errs, targets in (
        ("position", extract.position_indices, extract.position_errors, extract.position_targets),
        ("orientation", extract.orientation_indices, extract.orientation_errors, extract.orientation_targets),
    ):
        path = out / f"worst_{kind}_targets.csv"
        mat = np.column_stack([idx.astype(float), errs, targets])[::every]
        _write_csv(path, ["index", "error", "x", "y", "z"], mat)
        written.append(path)

    if extract.theta_pairs is not None:
        path = out / "theta_pair_scatter.csv"
        mat = np.column_stack(
            [extract.orientation_indices.astype(float), extract.theta_pairs]
        )[::every]
        _write_csv(path, ["index", "theta_deg_2", "theta_deg_3"], mat)
        written.append(path)
    return written


def load_histogram(path) -> tuple[np.ndarray, np.ndarray]:
    """Read back a histogram export: (edges, counts)."""
    with open(path, "r", encoding="utf-8") as f:
        f.readline()
        mat = np.loadtxt(f, delimiter=",", ndmin=2)
    edges = np.concatenate([mat[:, 0], mat[-1:, 1]])
    counts = mat[:, 2].astype(int)
    return edges, counts
