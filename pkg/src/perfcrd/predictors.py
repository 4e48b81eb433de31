"""Parametric predictors mapping last-step population actions to per-node
cooperation probabilities.

Inputs are ``(n, 3)`` embeddings with channels (defect, cooperate, initial
token). All trainable models end in a sigmoid, so their outputs lie in
``(0, 1)``; the static binary predictor ignores its input.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .graph import PopulationGraph

ARCHITECTURES = ("static-binary", "mlp", "gnn", "gnn+mlp", "gnn+linear")
CHANNELS = 3


class PredictorError(ValueError):
    pass


@dataclass(frozen=True)
class PredictorShape:
    architecture: str
    nodes: int
    hidden: int = 64
    gnn_layers: int = 2
    gnn_hidden: int = 16

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise PredictorError(f"unknown architecture {self.architecture!r}; choose from {ARCHITECTURES}")
        if self.nodes < 1 or self.hidden < 1 or self.gnn_layers < 1 or self.gnn_hidden < 1:
            raise PredictorError(f"invalid predictor shape {self}")


def param_layout(shape: PredictorShape) -> list[tuple[str, tuple[int, ...], int | None]]:
    """``(name, array shape, fan_in)`` per tensor; ``fan_in`` is None for biases."""
    n, arch = shape.nodes, shape.architecture
    if arch == "static-binary":
        return []
    layout = []

    def dense(prefix, fan_in, fan_out):
        layout.append((f"{prefix}.W", (fan_in, fan_out), fan_in))
        layout.append((f"{prefix}.b", (fan_out,), None))

    if arch == "mlp":
        dense("mlp.0", CHANNELS * n, shape.hidden)
        dense("mlp.1", shape.hidden, n)
        return layout
    width = CHANNELS
    for k in range(shape.gnn_layers):
        layout.append((f"gnn.{k}.W_self", (width, shape.gnn_hidden), width))
        layout.append((f"gnn.{k}.W_nbr", (width, shape.gnn_hidden), width))
        layout.append((f"gnn.{k}.b", (shape.gnn_hidden,), None))
        width = shape.gnn_hidden
    if arch == "gnn":
        dense("head", width, 1)
    elif arch == "gnn+linear":
        dense("head", width * n, n)
    else:
        dense("head.0", width * n, shape.hidden)
        dense("head.1", shape.hidden, n)
    return layout


def count_params(shape: PredictorShape) -> int:
    return sum(int(np.prod(s)) for _, s, _ in param_layout(shape))


def init_params(shape: PredictorShape, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    chunks = []
    for _, s, fan_in in param_layout(shape):
        if fan_in is None:
            chunks.append(np.zeros(int(np.prod(s))))
        else:
            chunks.append(rng.standard_normal(int(np.prod(s))) / np.sqrt(fan_in))
    return np.concatenate(chunks) if chunks else np.zeros(0)


def unflatten(shape: PredictorShape, phi) -> dict:
    """Views of the flat parameter vector (taped slices when ``phi`` is a Var)."""
    out, k = {}, 0
    for name, s, _ in param_layout(shape):
        size = int(np.prod(s))
        out[name] = phi[k:k + size].reshape(s)
        k += size
    return out


def initial_embedding(n: int) -> np.ndarray:
    X = np.zeros((n, CHANNELS))
    X[:, 2] = 1.0
    return X


def embed_actions(actions):
    """One-hot (defect, cooperate, 0); soft actions give ``(1 - a, a, 0)``."""
    a = actions.reshape(-1, 1) if isinstance(actions, ad.Var) else np.asarray(actions, dtype=float).reshape(-1, 1)
    return ad.concat([1 - a, a, np.zeros(a.shape)], axis=1)


@dataclass
class PredictorModel:
    shape: PredictorShape
    graph: PopulationGraph
    params: np.ndarray = field(default_factory=lambda: np.zeros(0))
    bits: np.ndarray | None = None  # stored prediction of the static binary predictor

    def __post_init__(self):
        if self.graph.node_count != self.shape.nodes:
            raise PredictorError(f"model built for {self.shape.nodes} nodes but graph has {self.graph.node_count}")
        self.params = np.asarray(self.params, dtype=float)
        if self.params.size != count_params(self.shape):
            raise PredictorError(f"expected {count_params(self.shape)} parameters, got {self.params.size}")
        if self.shape.architecture == "static-binary":
            if self.bits is None or len(self.bits) != self.shape.nodes:
                raise PredictorError("static-binary predictor needs one stored bit per node")
            self.bits = np.asarray(self.bits, dtype=float)
            if not np.all((self.bits == 0) | (self.bits == 1)):
                raise PredictorError("static-binary predictions must be 0 or 1")
        A = self.graph.adjacency_matrix
        deg = A.sum(axis=1, keepdims=True)
        self._mean_agg = np.divide(A, deg, out=np.zeros_like(A), where=deg > 0)

    @property
    def architecture(self) -> str:
        return self.shape.architecture

    @property
    def trainable(self) -> bool:
        return self.params.size > 0

    @classmethod
    def create(cls, architecture: str, graph: PopulationGraph, seed: int = 0, **shape_kw) -> "PredictorModel":
        shape = PredictorShape(architecture, graph.node_count, **shape_kw)
        return cls(shape, graph, init_params(shape, seed))

    @classmethod
    def static(cls, graph: PopulationGraph, bits) -> "PredictorModel":
        return cls(PredictorShape("static-binary", graph.node_count), graph, np.zeros(0), np.asarray(bits))

    def with_params(self, params) -> "PredictorModel":
        return PredictorModel(self.shape, self.graph, np.array(params, dtype=float), self.bits)

    def forward(self, X, params=None):
        """Predicted cooperation probabilities for embedding ``X`` of shape ``(n, 3)``.

        ``params`` overrides the stored vector; pass a taped Var to record
        the computation.
        """
        if tuple(np.shape(ad.value(X))) != (self.shape.nodes, CHANNELS):
            raise PredictorError(f"expected input of shape ({self.shape.nodes}, {CHANNELS}), got {np.shape(ad.value(X))}")
        arch = self.shape.architecture
        if arch == "static-binary":
            return self.bits.copy()
        w = unflatten(self.shape, self.params if params is None else params)
        n = self.shape.nodes
        if arch == "mlp":
            h = ad.tanh(X.reshape(-1) @ w["mlp.0.W"] + w["mlp.0.b"])
            return ad.sigmoid(h @ w["mlp.1.W"] + w["mlp.1.b"])
        h = X
        for k in range(self.shape.gnn_layers):
            # row-stable products keep automorphic nodes bitwise equal
            agg = ad.rowmatmul(self._mean_agg, h)
            h = ad.tanh(ad.rowmatmul(h, w[f"gnn.{k}.W_self"]) + ad.rowmatmul(agg, w[f"gnn.{k}.W_nbr"])
                        + w[f"gnn.{k}.b"])
        if arch == "gnn":
            return ad.sigmoid(ad.rowmatmul(h, w["head.W"]).reshape(n) + w["head.b"])
        z = h.reshape(-1)
        if arch == "gnn+linear":
            return ad.sigmoid(z @ w["head.W"] + w["head.b"])
        z = ad.tanh(z @ w["head.0.W"] + w["head.0.b"])
        return ad.sigmoid(z @ w["head.1.W"] + w["head.1.b"])

    def to_json(self) -> dict:
        out = {
            "architecture": self.shape.architecture,
            "shape": asdict(self.shape),
            "graph": self.graph.to_json(),
            "params": [float(x).hex() for x in self.params],
        }
        if self.bits is not None:
            out["bits"] = [int(b) for b in self.bits]
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "PredictorModel":
        shape = PredictorShape(**obj["shape"])
        if shape.architecture != obj["architecture"]:
            raise PredictorError("architecture field disagrees with shape descriptor")
        params = np.array([float.fromhex(x) for x in obj["params"]])
        return cls(shape, PopulationGraph.from_json(obj["graph"]), params, obj.get("bits"))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def build_predictor(spec: dict, graph: PopulationGraph, seed: int = 0) -> PredictorModel:
    arch = spec.get("architecture", "mlp")
    if arch == "static-binary":
        return PredictorModel.static(graph, spec["bits"])
    kw = {k: int(spec[k]) for k in ("hidden", "gnn_layers", "gnn_hidden") if k in spec}
    return PredictorModel.create(arch, graph, seed=seed, **kw)
