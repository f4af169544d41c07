"""Message-passing network over joint graphs.

A shared edge model maps (sender features, receiver features, edge features)
to a fixed-width message; incoming messages are summed per node in canonical
order; a shared node model maps (node features, aggregated message) to one
scalar, the predicted joint angle in radians. One compute/aggregate/update
round per prediction.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping

import numpy as np

from . import neuralnet as nn
from .graph import (
    CONNECTIVITIES,
    FeatureStats,
    JointGraph,
    MODES,
    build_graph,
    node_feature_names,
    normalize_features,
    topology,
)
from .neuralnet import MLP, Tensor

MESSAGE_DIM = 6
NODE_OUT_DIM = 1


@dataclass
class MPNNModel:
    """Shared edge/node models plus variant metadata and feature statistics."""

    edge_mlp: MLP
    node_mlp: MLP
    mode: str
    connectivity: str
    dof: int
    hidden_layers: int
    hidden_units: int
    stats: FeatureStats | None = None

    @property
    def node_dim(self) -> int:
        return len(node_feature_names(self.mode))

    @property
    def name(self) -> str:
        return f"{self.mode}-{self.connectivity}-{self.dof}-{self.hidden_layers}-{self.hidden_units}"

    @property
    def n_params(self) -> int:
        return self.edge_mlp.n_params + self.node_mlp.n_params

    def parameters(self) -> list[tuple[str, Tensor]]:
        return self.edge_mlp.parameters("edge") + self.node_mlp.parameters("node")


def build_model(
    mode: str,
    connectivity: str,
    dof: int,
    hidden_layers: int,
    hidden_units: int,
    rng: np.random.Generator,
) -> MPNNModel:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")
    if connectivity not in CONNECTIVITIES:
        raise ValueError(f"unknown connectivity {connectivity!r}, expected one of {CONNECTIVITIES}")
    node_dim = len(node_feature_names(mode))
    edge_sizes = (2 * node_dim + 2, *([hidden_units] * hidden_layers), MESSAGE_DIM)
    node_sizes = (node_dim + MESSAGE_DIM, *([hidden_units] * hidden_layers), NODE_OUT_DIM)
    return MPNNModel(
        edge_mlp=MLP.init(edge_sizes, rng),
        node_mlp=MLP.init(node_sizes, rng),
        mode=mode,
        connectivity=connectivity,
        dof=dof,
        hidden_layers=hidden_layers,
        hidden_units=hidden_units,
    )


def compute_messages(model: MPNNModel, graph: JointGraph) -> np.ndarray:
    """One message per directed edge: edge model on (sender, receiver, edge)."""
    inputs = np.concatenate(
        [graph.nodes[graph.senders], graph.nodes[graph.receivers], graph.edge_feats], axis=1
    )
    return model.edge_mlp.forward(inputs)


def _canonical_order(graph: JointGraph) -> np.ndarray:
    return np.lexsort((graph.senders, graph.receivers))


def aggregate(messages: np.ndarray, graph: JointGraph) -> np.ndarray:
    """Sum incoming messages per node, in canonical (receiver, sender) order.

    Nodes without incoming edges receive the zero vector.
    """
    messages = np.asarray(messages, dtype=np.float64)
    if messages.shape[0] != graph.n_edges:
        raise ValueError(f"expected {graph.n_edges} messages, got {messages.shape[0]}")
    order = _canonical_order(graph)
    sorted_msgs = messages[order]
    recv = graph.receivers[order]
    out = np.zeros((graph.dof, messages.shape[1]))
    counts = np.bincount(recv, minlength=graph.dof)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    nonempty = counts > 0
    if sorted_msgs.shape[0]:
        out[nonempty] = np.add.reduceat(sorted_msgs, starts[nonempty], axis=0)
    return out


def update_nodes(model: MPNNModel, graph: JointGraph, aggregates: np.ndarray) -> np.ndarray:
    """Node model on (node features, aggregated message); one angle per node."""
    aggregates = np.asarray(aggregates, dtype=np.float64)
    if aggregates.shape != (graph.dof, MESSAGE_DIM):
        raise ValueError(f"expected aggregates of shape ({graph.dof}, {MESSAGE_DIM}), got {aggregates.shape}")
    inputs = np.concatenate([graph.nodes, aggregates], axis=1)
    return model.node_mlp.forward(inputs)[:, 0]


def run_graph(model: MPNNModel, graph: JointGraph) -> np.ndarray:
    """The three stages on an already-normalized graph."""
    messages = compute_messages(model, graph)
    agg = aggregate(messages, graph)
    return update_nodes(model, graph, agg)


def predict(
    model: MPNNModel,
    sample: Mapping[str, float],
    theta_ref: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Predicted joint angles (radians) for one sample row."""
    if f"theta_deg_{model.dof}" not in sample or f"theta_deg_{model.dof + 1}" in sample:
        raise ValueError(f"sample does not match model dof {model.dof}")
    graph = build_graph(sample, model.connectivity, model.mode, rng=rng, theta_ref=theta_ref)
    if model.stats is not None:
        graph = normalize_features(graph, model.stats)
    return run_graph(model, graph)


@lru_cache(maxsize=None)
def _plan(dof: int, connectivity: str) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Canonically sorted topology plus reduceat boundaries for batching."""
    senders, receivers = topology(dof, connectivity)
    counts = np.bincount(receivers, minlength=dof)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    return senders, receivers, starts.astype(np.intp), counts.astype(np.intp)


def forward_normalized(model: MPNNModel, nodes: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Batched inference on normalized features.

    nodes: (S, dof, node_dim); edges: (S, n_edges, 2) in canonical edge order.
    Returns predictions (S, dof) in radians.
    """
    senders, receivers, starts, _ = _plan(model.dof, model.connectivity)
    s, e = nodes.shape[0], senders.shape[0]
    edge_in = np.concatenate([nodes[:, senders, :], nodes[:, receivers, :], edges], axis=2)
    messages = model.edge_mlp.forward(edge_in.reshape(s * e, -1)).reshape(s, e, MESSAGE_DIM)
    agg = np.add.reduceat(messages, starts, axis=1)
    node_in = np.concatenate([nodes, agg], axis=2)
    out = model.node_mlp.forward(node_in.reshape(s * model.dof, -1))
    return out.reshape(s, model.dof)


def forward_normalized_t(model: MPNNModel, nodes: np.ndarray, edges: np.ndarray) -> Tensor:
    """Taped batched forward pass mirroring forward_normalized."""
    senders, receivers, starts, counts = _plan(model.dof, model.connectivity)
    s, e = nodes.shape[0], senders.shape[0]
    edge_in = Tensor(np.concatenate([nodes[:, senders, :], nodes[:, receivers, :], edges], axis=2))
    flat_edge = nn.reshape(edge_in, (s * e, edge_in.data.shape[2]))
    messages = nn.reshape(model.edge_mlp.forward_t(flat_edge), (s, e, MESSAGE_DIM))
    agg = nn.segment_sum(messages, starts, counts, axis=1)
    node_in = nn.concat([Tensor(nodes), agg], axis=2)
    flat_node = nn.reshape(node_in, (s * model.dof, node_in.data.shape[2]))
    out = model.node_mlp.forward_t(flat_node)
    return nn.reshape(out, (s, model.dof))


def predict_batch(model: MPNNModel, nodes_raw: np.ndarray, edges_raw: np.ndarray) -> np.ndarray:
    """Batched inference on raw features, applying the model's stored stats."""
    if model.stats is None:
        raise RuntimeError("model has no feature statistics; train it or attach stats first")
    if nodes_raw.shape[1] != model.dof or nodes_raw.shape[2] != model.node_dim:
        raise ValueError(
            f"expected node features (*, {model.dof}, {model.node_dim}), got {nodes_raw.shape}"
        )
    nodes = model.stats.normalize_nodes(nodes_raw)
    edges = model.stats.normalize_edges(edges_raw)
    return forward_normalized(model, nodes, edges)
