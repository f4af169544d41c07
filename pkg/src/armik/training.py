"""Mini-batch training with MSE loss, AdamW, and early stopping.

The incoming sample pool is shuffled once into a training part and an
early-stopping part; training then runs full epochs of fixed-size batches
(final partial batch kept) and stops when the early-stopping loss has not
improved for a fixed number of epochs, restoring the best parameters seen.
All randomness comes from named substreams of the run seed, so loss curves
are reproducible.
"""

from __future__ import annotations

import base64
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import neuralnet as nn
from .dataset import Dataset
from .errors import NumericalError
from .graph import (
    EDGE_FEATURES,
    FeatureStats,
    build_edge_features,
    build_node_features,
    dataset_targets,
    draw_reference_angles,
    node_feature_names,
)
from .mpnn import MPNNModel, forward_normalized, forward_normalized_t
from .neuralnet import AdamWState, MLP, Tensor, adamw_step, zero_grads
from .seeding import substream


@dataclass(frozen=True)
class TrainConfig:
    mode: str
    connectivity: str
    dof: int
    hidden_layers: int
    hidden_units: int
    learning_rate: float = 0.002
    batch_size: int = 5000
    max_epochs: int = 1000
    patience: int = 10
    split_ratio: float = 0.8
    weight_decay: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError("split_ratio must lie in (0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")

    @property
    def variant(self) -> str:
        return f"{self.mode}-{self.connectivity}-{self.dof}-{self.hidden_layers}-{self.hidden_units}"


@dataclass
class TrainReport:
    train_losses: list[float] = field(default_factory=list)
    es_losses: list[float] = field(default_factory=list)
    stopping_epoch: int = 0
    best_epoch: int = 0
    final_train_loss: float = math.nan
    final_train_r2: float = math.nan
    test_loss: float = math.nan
    test_r2: float = math.nan
    wall_clock_s: float = 0.0

    def to_dict(self) -> dict:
        return {
            "stopping_epoch": self.stopping_epoch,
            "best_epoch": self.best_epoch,
            "final_train_loss": self.final_train_loss,
            "final_train_r2": self.final_train_r2,
            "test_loss": self.test_loss,
            "test_r2": self.test_r2,
            "wall_clock_s": self.wall_clock_s,
        }

    def save_curve(self, path) -> None:
        """Per-epoch losses as delimited text."""
        with open(path, "w", encoding="utf-8") as f:
            f.write("epoch,train_loss,es_loss\n")
            for i, (tr, es) in enumerate(zip(self.train_losses, self.es_losses)):
                f.write(f"{i},{tr:.17g},{es:.17g}\n")


@dataclass
class GraphArrays:
    """Stacked per-sample graph features; same topology across all rows."""

    nodes: np.ndarray  # (S, dof, node_dim), raw units
    edges: np.ndarray  # (S, n_edges, 2), raw units
    targets: np.ndarray  # (S, dof), radians

    @property
    def n_samples(self) -> int:
        return self.targets.shape[0]

    def take(self, idx) -> "GraphArrays":
        return GraphArrays(self.nodes[idx], self.edges[idx], self.targets[idx])


def prepare_arrays(
    datasets: list[Dataset], mode: str, connectivity: str, ref_rng: np.random.Generator | None = None
) -> GraphArrays:
    """Graph arrays for a list of datasets, concatenated in the given order.

    In RG mode the reference angles are drawn here, once per sample, and stay
    frozen for the rest of the run.
    """
    nodes, edges, targets = [], [], []
    for ds in datasets:
        theta_ref = None
        if mode == "RG":
            if ref_rng is None:
                raise ValueError("RG mode needs a reference-angle rng")
            theta_deg = ds.matrix([f"theta_deg_{j}" for j in range(1, ds.dof + 1)])
            theta_ref = draw_reference_angles(theta_deg, ref_rng)
        nodes.append(build_node_features(ds, mode, theta_ref))
        edges.append(build_edge_features(ds, connectivity))
        targets.append(dataset_targets(ds))
    return GraphArrays(
        nodes=np.concatenate(nodes, axis=0),
        edges=np.concatenate(edges, axis=0),
        targets=np.concatenate(targets, axis=0),
    )


def mse_loss(predictions, targets) -> float:
    """Mean over samples and joints of squared differences (radians)."""
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape:
        raise ValueError(f"shape mismatch: {predictions.shape} vs {targets.shape}")
    diff = predictions - targets
    return float(np.mean(diff * diff))


def _mse_t(pred: Tensor, targets: np.ndarray) -> Tensor:
    diff = nn.sub(pred, targets)
    return nn.mean(nn.mul(diff, diff))


def _pooled_r2(predictions: np.ndarray, targets: np.ndarray) -> float:
    res = float(np.sum((predictions - targets) ** 2))
    tot = float(np.sum((targets - targets.mean()) ** 2))
    return 1.0 - res / tot


def _snapshot(params) -> dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in params}


def _restore(params, snap: dict[str, np.ndarray]) -> None:
    for name, p in params:
        p.data = snap[name].copy()


def train(
    model: MPNNModel,
    data: GraphArrays,
    config: TrainConfig,
    test_data: GraphArrays | None = None,
    opt: AdamWState | None = None,
) -> tuple[MPNNModel, TrainReport]:
    """Fit the model in place and report the loss history.

    Feature statistics are computed on the training part only and attached to
    the model; the early-stopping part and any test data reuse them. Passing
    an AdamWState keeps the optimizer state accessible for checkpointing.
    """
    t0 = time.perf_counter()
    shuffle_rng = substream(config.seed, "shuffle")
    s = data.n_samples
    perm = shuffle_rng.permutation(s)
    n_train = int(round(config.split_ratio * s))
    if n_train < 1 or n_train >= s:
        raise ValueError(f"split ratio {config.split_ratio} leaves an empty part for {s} samples")
    train_idx = perm[:n_train]
    es_idx = perm[n_train:]

    model.stats = FeatureStats.compute(data.nodes[train_idx], data.edges[train_idx])
    nodes = model.stats.normalize_nodes(data.nodes)
    edges = model.stats.normalize_edges(data.edges)
    targets = data.targets

    params = model.parameters()
    if opt is None:
        opt = AdamWState(lr=config.learning_rate, weight_decay=config.weight_decay)
    else:
        opt.lr = config.learning_rate
        opt.weight_decay = config.weight_decay
    report = TrainReport()
    best_loss = math.inf
    best_snap = _snapshot(params)
    since_best = 0

    for epoch in range(config.max_epochs):
        order = shuffle_rng.permutation(n_train)
        loss_sum = 0.0
        for b, start in enumerate(range(0, n_train, config.batch_size)):
            idx = train_idx[order[start : start + config.batch_size]]
            pred = forward_normalized_t(model, nodes[idx], edges[idx])
            loss = _mse_t(pred, targets[idx])
            value = float(loss.data)
            if not math.isfinite(value):
                raise NumericalError(f"non-finite training loss at epoch {epoch}, batch {b}")
            zero_grads(params)
            loss.backward()
            adamw_step(opt, params)
            loss_sum += value * len(idx)
        report.train_losses.append(loss_sum / n_train)

        es_pred = forward_normalized(model, nodes[es_idx], edges[es_idx])
        es_loss = mse_loss(es_pred, targets[es_idx])
        if not math.isfinite(es_loss):
            raise NumericalError(f"non-finite early-stopping loss at epoch {epoch}")
        report.es_losses.append(es_loss)

        if es_loss < best_loss:
            best_loss = es_loss
            best_snap = _snapshot(params)
            report.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
        report.stopping_epoch = epoch
        if since_best >= config.patience:
            break

    _restore(params, best_snap)

    train_pred = forward_normalized(model, nodes[train_idx], edges[train_idx])
    report.final_train_loss = mse_loss(train_pred, targets[train_idx])
    report.final_train_r2 = _pooled_r2(train_pred, targets[train_idx])
    if test_data is not None:
        test_nodes = model.stats.normalize_nodes(test_data.nodes)
        test_edges = model.stats.normalize_edges(test_data.edges)
        test_pred = forward_normalized(model, test_nodes, test_edges)
        report.test_loss = mse_loss(test_pred, test_data.targets)
        report.test_r2 = _pooled_r2(test_pred, test_data.targets)
    report.wall_clock_s = time.perf_counter() - t0
    return model, report


def _encode(arr: np.ndarray) -> dict:
    return {
        "shape": list(arr.shape),
        "data": base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii"),
    }


def _decode(blob: dict) -> np.ndarray:
    arr = np.frombuffer(base64.b64decode(blob["data"]), dtype="<f8").astype(np.float64)
    return arr.reshape(blob["shape"])


def _mlp_to_dict(mlp: MLP) -> dict:
    return {
        "sizes": list(mlp.sizes),
        "weights": [_encode(w.data) for w in mlp.weights],
        "biases": [_encode(b.data) for b in mlp.biases],
    }


def _mlp_from_dict(data: dict) -> MLP:
    weights = [Tensor(_decode(w)) for w in data["weights"]]
    biases = [Tensor(_decode(b)) for b in data["biases"]]
    return MLP(data["sizes"], weights, biases)


def save_checkpoint(
    path,
    model: MPNNModel,
    opt: AdamWState | None = None,
    manifest: dict | None = None,
) -> None:
    """Self-describing checkpoint: architecture, parameters, optimizer state,
    feature statistics, and the training-run manifest."""
    payload = {
        "format": "armik-checkpoint-v1",
        "variant": model.name,
        "mode": model.mode,
        "connectivity": model.connectivity,
        "dof": model.dof,
        "hidden_layers": model.hidden_layers,
        "hidden_units": model.hidden_units,
        "activation": "relu",
        "node_features": list(node_feature_names(model.mode)),
        "edge_features": list(EDGE_FEATURES),
        "edge_mlp": _mlp_to_dict(model.edge_mlp),
        "node_mlp": _mlp_to_dict(model.node_mlp),
        "stats": model.stats.to_dict() if model.stats is not None else None,
        "optimizer": None,
        "manifest": manifest or {},
    }
    if opt is not None:
        payload["optimizer"] = {
            "lr": opt.lr,
            "beta1": opt.beta1,
            "beta2": opt.beta2,
            "eps": opt.eps,
            "weight_decay": opt.weight_decay,
            "step": opt.step,
            "m": {k: _encode(v) for k, v in opt.m.items()},
            "v": {k: _encode(v) for k, v in opt.v.items()},
        }
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[MPNNModel, AdamWState | None, dict]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != "armik-checkpoint-v1":
        raise ValueError(f"{path}: not a checkpoint file")
    model = MPNNModel(
        edge_mlp=_mlp_from_dict(payload["edge_mlp"]),
        node_mlp=_mlp_from_dict(payload["node_mlp"]),
        mode=payload["mode"],
        connectivity=payload["connectivity"],
        dof=payload["dof"],
        hidden_layers=payload["hidden_layers"],
        hidden_units=payload["hidden_units"],
        stats=FeatureStats.from_dict(payload["stats"]) if payload["stats"] else None,
    )
    opt = None
    if payload["optimizer"]:
        o = payload["optimizer"]
        opt = AdamWState(
            lr=o["lr"],
            beta1=o["beta1"],
            beta2=o["beta2"],
            eps=o["eps"],
            weight_decay=o["weight_decay"],
            step=o["step"],
            m={k: _decode(v) for k, v in o["m"].items()},
            v={k: _decode(v) for k, v in o["v"].items()},
        )
    return model, opt, payload.get("manifest", {})
