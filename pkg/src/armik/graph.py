"""Manipulator samples as featured graphs.

One node per joint; every node carries the broadcast target pose plus its own
angular offset (and, in reference-guided mode, a reference angle near the
target). Edges carry the twist and translational length of the chain section
they span. Connectivity is either neighbourly (chain-adjacent pairs, both
directions) or full (all ordered pairs).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping

import numpy as np

from .dataset import Dataset

MODES = ("DE", "RG")
CONNECTIVITIES = ("N", "F")

POSE_FIELDS = ("x", "y", "z", "phi", "theta", "psi")
NODE_FEATURES_DE = POSE_FIELDS + ("theta_off",)
NODE_FEATURES_RG = NODE_FEATURES_DE + ("theta_ref",)
EDGE_FEATURES = ("alpha", "l")

# Reference angles are drawn uniformly within this band around the target.
REFERENCE_BAND_DEG = 10.0


def node_feature_names(mode: str) -> tuple[str, ...]:
    if mode == "DE":
        return NODE_FEATURES_DE
    if mode == "RG":
        return NODE_FEATURES_RG
    raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")


def edge_count(dof: int, connectivity: str) -> int:
    if connectivity == "N":
        return 2 * (dof - 1)
    if connectivity == "F":
        return dof * (dof - 1)
    raise ValueError(f"unknown connectivity {connectivity!r}, expected one of {CONNECTIVITIES}")


@lru_cache(maxsize=None)
def topology(dof: int, connectivity: str) -> tuple[np.ndarray, np.ndarray]:
    """Directed edge lists (senders, receivers) in canonical order.

    Canonical order is receiver-major with ascending senders, which makes
    per-receiver groups contiguous and fixes the floating-point summation
    order during aggregation.
    """
    if connectivity == "N":
        pairs = [(i, i + 1) for i in range(dof - 1)] + [(i + 1, i) for i in range(dof - 1)]
    elif connectivity == "F":
        pairs = [(s, r) for s in range(dof) for r in range(dof) if s != r]
    else:
        raise ValueError(f"unknown connectivity {connectivity!r}, expected one of {CONNECTIVITIES}")
    pairs.sort(key=lambda sr: (sr[1], sr[0]))
    senders = np.array([s for s, _ in pairs], dtype=np.intp)
    receivers = np.array([r for _, r in pairs], dtype=np.intp)
    senders.setflags(write=False)
    receivers.setflags(write=False)
    return senders, receivers


@dataclass
class JointGraph:
    """One manipulator sample as a graph; features may be raw or normalized."""

    nodes: np.ndarray  # (dof, node_dim)
    senders: np.ndarray  # (n_edges,)
    receivers: np.ndarray  # (n_edges,)
    edge_feats: np.ndarray  # (n_edges, 2)
    targets: np.ndarray  # (dof,) joint angles, radians
    mode: str
    connectivity: str

    @property
    def dof(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_edges(self) -> int:
        return self.senders.shape[0]


def draw_reference_angles(theta_deg: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Uniform within +-REFERENCE_BAND_DEG of each target angle.

    Deliberately not folded into [0, 360): the reference mimics the previous
    step of an incremental motion, so it must track the target continuously
    across the 0/360 seam. Folding it would put a jump into the inputs right
    where the reference is supposed to resolve one.
    """
    jitter = rng.uniform(-REFERENCE_BAND_DEG, REFERENCE_BAND_DEG, size=np.shape(theta_deg))
    return np.asarray(theta_deg, dtype=float) + jitter


def _chain_lengths(a: np.ndarray, d: np.ndarray, senders, receivers) -> tuple[np.ndarray, np.ndarray]:
    """Edge features for arbitrary batch shape: a, d are (..., dof)."""
    seg = a + d  # per-joint translational magnitude; at most one slot is nonzero
    cum = np.concatenate([np.zeros(seg.shape[:-1] + (1,)), np.cumsum(seg, axis=-1)], axis=-1)
    lo = np.minimum(senders, receivers)
    hi = np.maximum(senders, receivers)
    lengths = cum[..., hi + 1] - cum[..., lo + 1]
    return lo, lengths


def _edge_alpha(alpha: np.ndarray, senders, receivers) -> np.ndarray:
    """Adjacent edges read the later joint's twist; longer-range edges get 0."""
    lo = np.minimum(senders, receivers)
    adjacent = (np.abs(senders - receivers) == 1)
    out = np.zeros(alpha.shape[:-1] + (len(senders),))
    out[..., adjacent] = alpha[..., (lo + 1)[adjacent]]
    return out


def build_graph(
    sample: Mapping[str, float],
    connectivity: str,
    mode: str,
    rng: np.random.Generator | None = None,
    theta_ref: np.ndarray | None = None,
) -> JointGraph:
    """Graph for a single sample row.

    In RG mode the reference angles are taken from theta_ref if given,
    otherwise drawn from rng.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")
    dof = 1
    while f"theta_deg_{dof + 1}" in sample:
        dof += 1
    theta_deg = np.array([sample[f"theta_deg_{j}"] for j in range(1, dof + 1)])
    theta_off = np.array([sample[f"theta_off_{j}"] for j in range(1, dof + 1)])
    a = np.array([sample[f"a_{j}"] for j in range(1, dof + 1)])
    d = np.array([sample[f"d_{j}"] for j in range(1, dof + 1)])
    alpha = np.array([sample[f"alpha_{j}"] for j in range(1, dof + 1)])
    pose = np.array([sample[k] for k in POSE_FIELDS])

    feats = [np.tile(pose, (dof, 1)), theta_off[:, None]]
    if mode == "RG":
        if theta_ref is None:
            if rng is None:
                raise ValueError("RG mode needs theta_ref or an rng to draw it")
            theta_ref = draw_reference_angles(theta_deg, rng)
        theta_ref = np.asarray(theta_ref, dtype=float)
        if theta_ref.shape != (dof,):
            raise ValueError(f"theta_ref must have shape ({dof},), got {theta_ref.shape}")
        feats.append(theta_ref[:, None])
    nodes = np.concatenate(feats, axis=1)

    senders, receivers = topology(dof, connectivity)
    _, lengths = _chain_lengths(a, d, senders, receivers)
    alphas = _edge_alpha(alpha, senders, receivers)
    edge_feats = np.stack([alphas, lengths], axis=1)
    targets = theta_deg * (math.pi / 180.0)
    return JointGraph(
        nodes=nodes,
        senders=senders.copy(),
        receivers=receivers.copy(),
        edge_feats=edge_feats,
        targets=targets,
        mode=mode,
        connectivity=connectivity,
    )


def build_node_features(ds: Dataset, mode: str, theta_ref: np.ndarray | None = None) -> np.ndarray:
    """Node feature tensor (n_samples, dof, node_dim) for a whole dataset."""
    dof = ds.dof
    pose = ds.matrix(list(POSE_FIELDS))  # (S, 6)
    off = ds.matrix([f"theta_off_{j}" for j in range(1, dof + 1)])  # (S, J)
    parts = [np.repeat(pose[:, None, :], dof, axis=1), off[:, :, None]]
    if mode == "RG":
        if theta_ref is None:
            raise ValueError("RG mode needs a theta_ref array")
        if theta_ref.shape != off.shape:
            raise ValueError(f"theta_ref must have shape {off.shape}, got {theta_ref.shape}")
        parts.append(np.asarray(theta_ref, dtype=float)[:, :, None])
    elif mode != "DE":
        raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")
    return np.concatenate(parts, axis=2)


def build_edge_features(ds: Dataset, connectivity: str) -> np.ndarray:
    """Edge feature tensor (n_samples, n_edges, 2) for a whole dataset."""
    dof = ds.dof
    senders, receivers = topology(dof, connectivity)
    a = ds.matrix([f"a_{j}" for j in range(1, dof + 1)])
    d = ds.matrix([f"d_{j}" for j in range(1, dof + 1)])
    alpha = ds.matrix([f"alpha_{j}" for j in range(1, dof + 1)])
    _, lengths = _chain_lengths(a, d, senders, receivers)
    alphas = _edge_alpha(alpha, senders, receivers)
    return np.stack([alphas, lengths], axis=2)


def dataset_targets(ds: Dataset) -> np.ndarray:
    """Joint angles in radians, (n_samples, dof)."""
    return ds.matrix([f"theta_rad_{j}" for j in range(1, ds.dof + 1)])


@dataclass
class FeatureStats:
    """Per-channel standardization parameters, frozen from the training split.

    Channels that are exactly constant keep a divisor of 1 and are flagged, so
    normalization maps them to exact zeros and stays invertible.
    """

    node_mean: np.ndarray
    node_std: np.ndarray
    node_clamped: np.ndarray
    edge_mean: np.ndarray
    edge_std: np.ndarray
    edge_clamped: np.ndarray

    @staticmethod
    def _channel_stats(flat: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        n_ch = flat.shape[1]
        mean = np.empty(n_ch)
        std = np.empty(n_ch)
        clamped = np.zeros(n_ch, dtype=bool)
        for c in range(n_ch):
            col = flat[:, c]
            if np.all(col == col[0]):
                mean[c] = col[0]
                std[c] = 1.0
                clamped[c] = True
            else:
                mean[c] = col.mean()
                std[c] = col.std()
        return mean, std, clamped

    @staticmethod
    def compute(node_feats: np.ndarray, edge_feats: np.ndarray) -> "FeatureStats":
        nf = node_feats.reshape(-1, node_feats.shape[-1])
        ef = edge_feats.reshape(-1, edge_feats.shape[-1])
        nm, ns, nc = FeatureStats._channel_stats(nf)
        em, es, ec = FeatureStats._channel_stats(ef)
        return FeatureStats(nm, ns, nc, em, es, ec)

    def normalize_nodes(self, x: np.ndarray) -> np.ndarray:
        return (x - self.node_mean) / self.node_std

    def denormalize_nodes(self, x: np.ndarray) -> np.ndarray:
        return x * self.node_std + self.node_mean

    def normalize_edges(self, x: np.ndarray) -> np.ndarray:
        return (x - self.edge_mean) / self.edge_std

    def denormalize_edges(self, x: np.ndarray) -> np.ndarray:
        return x * self.edge_std + self.edge_mean

    def to_dict(self) -> dict:
        return {
            "node_mean": self.node_mean.tolist(),
            "node_std": self.node_std.tolist(),
            "node_clamped": self.node_clamped.astype(int).tolist(),
            "edge_mean": self.edge_mean.tolist(),
            "edge_std": self.edge_std.tolist(),
            "edge_clamped": self.edge_clamped.astype(int).tolist(),
        }

    @staticmethod
    def from_dict(data: dict) -> "FeatureStats":
        return FeatureStats(
            node_mean=np.array(data["node_mean"], dtype=float),
            node_std=np.array(data["node_std"], dtype=float),
            node_clamped=np.array(data["node_clamped"], dtype=bool),
            edge_mean=np.array(data["edge_mean"], dtype=float),
            edge_std=np.array(data["edge_std"], dtype=float),
            edge_clamped=np.array(data["edge_clamped"], dtype=bool),
        )


def normalize_features(graph: JointGraph, stats: FeatureStats) -> JointGraph:
    """Standardized copy of a graph; targets are left untouched."""
    return JointGraph(
        nodes=stats.normalize_nodes(graph.nodes),
        senders=graph.senders,
        receivers=graph.receivers,
        edge_feats=stats.normalize_edges(graph.edge_feats),
        targets=graph.targets,
        mode=graph.mode,
        connectivity=graph.connectivity,
    )
