"""Fusion heads over the selected points of all blocks: ADD, MLP and GCN."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .diffcore import Linear, Module, Tensor, ops
from .selector import SelectionResult

VARIANTS = ("ADD", "MLP", "GCN")
COSINE_EPS = 1e-12


def parse_ratio(value) -> float:
    """Accept ``0.25``, ``"1/4"`` or ``Fraction(1, 4)``."""
    return float(Fraction(value)) if isinstance(value, str) else float(value)


@dataclass
class CombinerConfig:
    variant: str = "GCN"
    gcn_layers: int = 1
    pooling_ratios: list = field(default_factory=lambda: ["1/32"])
    hidden_width: int | None = None  # None -> feature width C

    def __post_init__(self):
        self.variant = self.variant.upper()
        if self.variant not in VARIANTS:
            raise ValueError(f"combiner variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.variant == "GCN" and len(self.pooling_ratios) != self.gcn_layers:
            raise ValueError(
                f"{self.gcn_layers} GCN layers need {self.gcn_layers} pooling ratios, got {self.pooling_ratios}"
            )

    def budgets(self, num_nodes: int) -> list[int]:
        """Super-node count after each layer, each a fraction of the input node count."""
        out, prev = [], num_nodes
        for r in self.pooling_ratios:
            ratio = parse_ratio(r)
            budget = max(1, round(num_nodes * ratio))
            if ratio <= 0 or budget > prev:
                raise ValueError(f"pooling ratio {r} gives {budget} super nodes from {prev} nodes")
            out.append(budget)
            prev = budget
        return out


@dataclass
class GraphBatch:
    nodes: Tensor  # (B, N, C)
    adjacency: Tensor  # (B, N, N), row-stochastic
    block_of_node: np.ndarray  # (N,) 1-based block index


def _row_normalize(a: Tensor) -> Tensor:
    rows = ops.sum(a, axis=-1, keepdims=True)
    return ops.div(a, ops.expand(rows, a.shape))


def similarity_adjacency(nodes: Tensor) -> Tensor:
    """Row-normalised ``max(cos(x_i, x_j), 0) + I``."""
    b, n, c = nodes.shape
    sq = ops.sum(ops.mul(nodes, nodes), axis=-1, keepdims=True)
    norms = ops.sqrt(ops.add_scalar(sq, COSINE_EPS))
    unit = ops.div(nodes, ops.expand(norms, nodes.shape))
    cos = ops.matmul(unit, ops.transpose(unit, (0, 2, 1)))
    eye = Tensor(np.broadcast_to(np.eye(n), (b, n, n)))
    return _row_normalize(ops.add(ops.relu(cos), eye))


def build_graph(selections: list[SelectionResult]) -> GraphBatch:
    if not selections or sum(sr.num_selects for sr in selections) == 0:
        raise ValueError("build_graph: no selected points")
    nodes = ops.concat([sr.selected_features for sr in selections], axis=1)
    owner = np.concatenate([np.full(sr.num_selects, sr.block_index) for sr in selections])
    return GraphBatch(nodes, similarity_adjacency(nodes), owner)


class GCNLayer(Module):
    """relu(A H W), then soft pooling to ``budget`` super nodes.

    Each super node is a softmax-weighted average of the input nodes, with
    weights scored from the node features, so the layer is invariant to the
    order in which nodes arrive.
    """

    def __init__(self, rng, d_in: int, d_out: int, budget: int):
        self.weight = Tensor(np.eye(d_in, d_out) + rng.normal(0.0, 0.1 / np.sqrt(d_in), (d_in, d_out)),
                             requires_grad=True)
        self.assign = Tensor(rng.normal(0.0, 1.0 / np.sqrt(d_out), (d_out, budget)), requires_grad=True)
        self.budget = budget

    def __call__(self, h: Tensor, adj: Tensor) -> tuple[Tensor, Tensor]:
        h = ops.relu(ops.matmul(ops.matmul(adj, h), self.weight))
        s = ops.softmax(ops.matmul(h, self.assign), axis=1)  # (B, N, N') normalised over nodes
        st = ops.transpose(s, (0, 2, 1))
        pooled = ops.matmul(st, h)
        coarse = _row_normalize(ops.matmul(ops.matmul(st, adj), s))
        return pooled, coarse


class Combiner(Module):
    def __init__(self, cfg: CombinerConfig, num_nodes: int, width: int, num_classes: int,
                 rng: np.random.Generator):
        self.cfg = cfg
        self.num_nodes = num_nodes
        self.width = width
        hidden = cfg.hidden_width or width
        if cfg.variant == "GCN":
            dims = [width] + [hidden] * cfg.gcn_layers
            self.layers = [GCNLayer(rng, dims[i], dims[i + 1], b)
                           for i, b in enumerate(cfg.budgets(num_nodes))]
            self.classifier = Linear(rng, hidden, num_classes)
        elif cfg.variant == "MLP":
            self.classifier = Linear(rng, num_nodes * width, num_classes)
        else:
            self.classifier = Linear(rng, width, num_classes)

    def __call__(self, selections: list[SelectionResult]) -> Tensor:
        if self.cfg.variant == "GCN":
            return self.gcn_forward(build_graph(selections))[0]
        nodes = ops.concat([sr.selected_features for sr in selections], axis=1)
        if self.cfg.variant == "MLP":
            return self.mlp_forward(nodes)
        return self.add_forward(nodes)

    def gcn_forward(self, g: GraphBatch) -> tuple[Tensor, Tensor]:
        """Class scores (B, C') and final super-node features (B, N', hidden)."""
        if self.cfg.variant != "GCN":
            raise ValueError(f"gcn_forward on a {self.cfg.variant} combiner")
        h, adj = g.nodes, g.adjacency
        for layer in self.layers:
            h, adj = layer(h, adj)
        return self.classifier(ops.mean(h, axis=1)), h

    def mlp_forward(self, nodes: Tensor) -> Tensor:
        b, n, c = nodes.shape
        if n * c != self.classifier.d_in:
            raise ops.ShapeError(
                f"mlp_forward: {n} nodes x {c} features does not match configured input width {self.classifier.d_in}"
            )
        return self.classifier(ops.reshape(nodes, (b, n * c)))

    def add_forward(self, nodes: Tensor) -> Tensor:
        if nodes.shape[1] == 0:
            raise ValueError("add_forward: no nodes")
        return self.classifier(ops.mean(nodes, axis=1))
