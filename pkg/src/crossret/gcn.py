"""Node features for merged detections and GCN propagation over the object graph."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .detections import Detection, ObjectGraph
from .errors import ShapeError, VocabularyError
from .linalg import matmul, matrix_from_json, matrix_to_json, relu

ACTIVATIONS = {"relu": relu, "identity": lambda x: x}
SCALAR_FEATURES = 4  # cx, cy, area, prob


@dataclass(frozen=True)
class GcnParams:
    layers: tuple[np.ndarray, ...]
    activations: tuple[str, ...]
    category_vocab: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(np.asarray(w, dtype=np.float64) for w in self.layers))
        object.__setattr__(self, "activations", tuple(self.activations))
        object.__setattr__(self, "category_vocab", tuple(self.category_vocab))
        if len(self.layers) != len(self.activations) or not self.layers:
            raise ShapeError("need one activation per layer and at least one layer")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        expected = len(self.category_vocab) + SCALAR_FEATURES
        for n, w in enumerate(self.layers):
            if w.shape[-2] != expected:
                raise ShapeError(f"layer {n} expects input dim {expected}, has {w.shape[-2]}")
            expected = w.shape[-1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].shape[-1]

    @classmethod
    def init(cls, vocab: Sequence[str], dims: Sequence[int], rng: np.random.Generator) -> "GcnParams":
        """Random init; ``dims`` are the layer output widths. relu on all but the last layer."""
        sizes = [len(vocab) + SCALAR_FEATURES, *dims]
        layers = tuple(
            rng.normal(0.0, 1.0 / np.sqrt(sizes[i]), size=(sizes[i], sizes[i + 1])) for i in range(len(dims))
        )
        acts = tuple(["relu"] * (len(dims) - 1) + ["identity"])
        return cls(layers, acts, tuple(vocab))

    def to_json(self) -> dict:
        return {
            "category_vocab": list(self.category_vocab),
            "layers": [{"w": matrix_to_json(w), "activation": a} for w, a in zip(self.layers, self.activations)],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GcnParams":
        return cls(
            layers=tuple(matrix_from_json(layer["w"]) for layer in obj["layers"]),
            activations=tuple(layer.get("activation", "relu") for layer in obj["layers"]),
            category_vocab=tuple(obj["category_vocab"]),
        )


def embed_detections(nodes: Sequence[Detection], vocab: Sequence[str]) -> np.ndarray:
    """One row per node: one-hot category followed by cx, cy, area, prob."""
    index = {c: i for i, c in enumerate(vocab)}
    x = np.zeros((len(nodes), len(vocab) + SCALAR_FEATURES))
    for r, node in enumerate(nodes):
        if node.category not in index:
            raise VocabularyError(f"category {node.category!r} is not in the vocabulary")
        x[r, index[node.category]] = 1.0
        x[r, len(vocab):] = (node.cx, node.cy, node.area, node.prob)
    return x


def gcn_layer_forward(x: np.ndarray, operator: np.ndarray, w: np.ndarray, activation: str = "relu") -> np.ndarray:
    if operator.shape[-1] != operator.shape[-2] or operator.shape[-1] != x.shape[-2]:
        raise ShapeError(f"operator {operator.shape} does not match {x.shape[-2]} nodes")
    return ACTIVATIONS[activation](matmul(operator @ x, w))


def local_features(graph: ObjectGraph, params: GcnParams) -> np.ndarray:
    """Per-node local features, shape ``(n, d)``.

    An empty graph yields a ``(0, d)`` array, which the fusion step treats as
    "no local information".
    """
    if graph.size == 0:
        return np.zeros((0, params.output_dim))
    x = embed_detections(graph.nodes, params.category_vocab)
    for w, act in zip(params.layers, params.activations):
        x = gcn_layer_forward(x, graph.operator, w, act)
    return x

