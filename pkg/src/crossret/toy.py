"""Desk-scale training and inference loop.

Synthetic scenes stand in for the image backbone and object detector: each
scene carries a global feature sequence, a list of detections and one
caption.  The visual path is detection graph -> GCN -> attention fusion; the
text path is the bidirectional GRU encoder.  Training minimizes the triplet
loss by plain gradient descent with central finite-difference gradients over
every trainable parameter.

Random numbers come from ``numpy.random.default_rng(seed)`` (PCG64).
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .detections import DEFAULT_BOOST, DEFAULT_THRESHOLD, Detection, ObjectGraph, assemble_graph
from .errors import EvaluationError
from .fusion import FusionParams, midf_forward
from .gcn import GcnParams, embed_detections, gcn_layer_forward, local_features
from .linalg import DEFAULT_FD_STEP, as_matrix, finite_diff_gradient_batched, matrix_from_json, matrix_to_json
from .loss import DEFAULT_MARGIN, triplet_loss
from .metrics import SimilarityMatrix, build_similarity
from .rerank import RerankConfig, RerankedList, mr_rerank
from .text import TextEncoderParams, encode_text, encode_texts

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SyntheticScene:
    scene_id: str
    global_features: np.ndarray
    detections: tuple[Detection, ...]
    caption_id: str
    caption_token_ids: tuple[int, ...]
    positive_pair: bool = True

    def __post_init__(self):
        object.__setattr__(self, "global_features", as_matrix(self.global_features))
        object.__setattr__(self, "detections", tuple(self.detections))
        object.__setattr__(self, "caption_token_ids", tuple(int(t) for t in self.caption_token_ids))
        if not self.caption_token_ids:
            raise ValueError(f"scene {self.scene_id!r} has an empty caption")
        if self.global_features.shape[0] < 1:
            raise ValueError(f"scene {self.scene_id!r} has no global feature rows")

    def to_json(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "global_features": matrix_to_json(self.global_features),
            "detections": [d.to_json() for d in self.detections],
            "caption_id": self.caption_id,
            "caption_token_ids": list(self.caption_token_ids),
            "positive_pair": self.positive_pair,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SyntheticScene":
        return cls(
            scene_id=str(obj["scene_id"]),
            global_features=matrix_from_json(obj["global_features"]),
            detections=tuple(Detection.from_json(d) for d in obj.get("detections", [])),
            caption_id=str(obj.get("caption_id", f"{obj['scene_id']}:caption")),
            caption_token_ids=tuple(obj["caption_token_ids"]),
            positive_pair=bool(obj.get("positive_pair", True)),
        )


@dataclass(frozen=True)
class SynthConfig:
    num_pairs: int = 8
    vocab: int = 32
    categories: int = 4
    d: int = 8
    separation: float = 2.0
    global_rows: int = 4
    caption_length: int = 4
    max_detections: int = 4

    def __post_init__(self):
        if min(self.num_pairs, self.vocab, self.categories, self.d, self.global_rows, self.caption_length) < 1:
            raise ValueError("synthetic config counts must all be >= 1")
        if self.separation < 0 or self.max_detections < 0:
            raise ValueError("separation and max_detections must be nonnegative")

    @property
    def category_names(self) -> tuple[str, ...]:
        return tuple(f"cat{c}" for c in range(self.categories))


def generate_synthetic(seed: int, config: SynthConfig = SynthConfig()) -> list[SyntheticScene]:
    """Scenes whose features, detections and caption share a per-pair latent cluster.

    ``separation`` scales the cluster signal in the global features and sets
    the probability ``1 - exp(-separation)`` that a caption token or a
    detection category is drawn from the pair's own group; at 0 there is no
    signal at all.
    """
    rng = np.random.default_rng(seed)
    p_signal = 1.0 - np.exp(-config.separation)
    cats = config.category_names
    scenes = []
    for i in range(config.num_pairs):
        center = rng.normal(size=config.d)
        center /= np.linalg.norm(center)
        feats = config.separation * center + rng.normal(size=(config.global_rows, config.d))
        group = [t for t in range(config.vocab) if t % config.num_pairs == i % config.num_pairs]
        group = group or list(range(config.vocab))
        tokens = []
        for _ in range(config.caption_length):
            if rng.random() < p_signal:
                tokens.append(int(group[rng.integers(len(group))]))
            else:
                tokens.append(int(rng.integers(config.vocab)))
        dets = []
        for j in range(int(rng.integers(config.max_detections + 1))):
            cat = cats[i % config.categories] if rng.random() < p_signal else cats[int(rng.integers(config.categories))]
            dets.append(
                Detection(
                    id=f"s{i:02d}_d{j}",
                    category=cat,
                    cx=float(rng.random()),
                    cy=float(rng.random()),
                    area=float(rng.uniform(0.005, 0.1)),
                    prob=float(rng.uniform(0.3, 1.0)),
                )
            )
        scenes.append(SyntheticScene(f"s{i:02d}", feats, tuple(dets), f"c{i:02d}", tuple(tokens)))
    return scenes


@dataclass(frozen=True)
class DreaConfig:
    threshold: float = DEFAULT_THRESHOLD
    boost: float = DEFAULT_BOOST
    clamp: bool = True


@dataclass(frozen=True)
class ToyModel:
    gcn: GcnParams
    fusion: FusionParams
    text: TextEncoderParams
    drea: DreaConfig = field(default_factory=DreaConfig)
    margin: float = DEFAULT_MARGIN

    @classmethod
    def init(
        cls,
        category_vocab: Sequence[str],
        vocab_size: int,
        d: int,
        rng: np.random.Generator,
        gcn_hidden: int | None = None,
        word_dim: int | None = None,
        gru_hidden: int | None = None,
    ) -> "ToyModel":
        gcn_hidden = gcn_hidden or 2 * d
        return cls(
            gcn=GcnParams.init(category_vocab, [gcn_hidden, d], rng),
            fusion=FusionParams.init(d, rng),
            text=TextEncoderParams.init(vocab_size, word_dim or d, gru_hidden or d, d, rng),
        )

    def to_json(self) -> dict:
        return {
            "gcn": self.gcn.to_json(),
            "fusion": self.fusion.to_json(),
            "text": self.text.to_json(),
            "drea": dataclasses.asdict(self.drea),
            "margin": self.margin,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ToyModel":
        return cls(
            gcn=GcnParams.from_json(obj["gcn"]),
            fusion=FusionParams.from_json(obj["fusion"]),
            text=TextEncoderParams.from_json(obj["text"]),
            drea=DreaConfig(**obj.get("drea", {})),
            margin=float(obj.get("margin", DEFAULT_MARGIN)),
        )


# -- parameter flattening ----------------------------------------------------


def _leaves(obj: Any, prefix: str = "") -> list[tuple[str, np.ndarray]]:
    if isinstance(obj, np.ndarray):
        return [(prefix, obj)]
    if isinstance(obj, tuple):
        return [leaf for i, item in enumerate(obj) for leaf in _leaves(item, f"{prefix}[{i}]")]
    if dataclasses.is_dataclass(obj):
        out = []
        for f in dataclasses.fields(obj):
            out += _leaves(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name)
        return out
    return []


def _rebuild(obj: Any, values: dict[str, np.ndarray], prefix: str = "") -> Any:
    if isinstance(obj, np.ndarray):
        return values.get(prefix, obj)
    if isinstance(obj, tuple):
        return tuple(_rebuild(item, values, f"{prefix}[{i}]") for i, item in enumerate(obj))
    if dataclasses.is_dataclass(obj):
        changes = {}
        for f in dataclasses.fields(obj):
            if not f.init:
                continue
            name = f"{prefix}.{f.name}" if prefix else f.name
            changes[f.name] = _rebuild(getattr(obj, f.name), values, name)
        return dataclasses.replace(obj, **changes)
    return obj


def flatten(obj: Any) -> np.ndarray:
    """All trainable arrays of a parameter dataclass as one vector (field order)."""
    leaves = _leaves(obj)
    return np.concatenate([a.reshape(-1) for _, a in leaves]) if leaves else np.zeros(0)


def unflatten(obj: Any, flat: np.ndarray) -> Any:
    """Inverse of :func:`flatten`.

    ``flat`` may be ``(n,)`` or a stack ``(P, n)``; a stack yields parameters
    with a leading axis of size ``P`` that the forward functions broadcast over.
    """
    flat = np.asarray(flat, dtype=np.float64)
    lead = flat.shape[:-1]
    values = {}
    pos = 0
    for name, a in _leaves(obj):
        values[name] = flat[..., pos:pos + a.size].reshape(lead + a.shape)
        pos += a.size
    if pos != flat.shape[-1]:
        raise ValueError(f"expected {pos} parameters, got {flat.shape[-1]}")
    return _rebuild(obj, values)


# -- forward passes ----------------------------------------------------------


def scene_graph(scene: SyntheticScene, drea: DreaConfig = DreaConfig()) -> ObjectGraph:
    return assemble_graph(scene.detections, drea.threshold, drea.boost, drea.clamp)


def forward_visual(
    scene: SyntheticScene, gcn: GcnParams, fusion: FusionParams, drea: DreaConfig = DreaConfig()
) -> np.ndarray:
    graph = scene_graph(scene, drea)
    local = local_features(graph, gcn)
    return midf_forward(scene.global_features, local, fusion).vector


@dataclass
class _PreparedScene:
    global_features: np.ndarray
    node_inputs: np.ndarray
    operator: np.ndarray


def _prepare(scenes: Sequence[SyntheticScene], model: ToyModel) -> list[_PreparedScene]:
    out = []
    for s in scenes:
        g = scene_graph(s, model.drea)
        x = embed_detections(g.nodes, model.gcn.category_vocab)
        out.append(_PreparedScene(s.global_features, x, g.operator))
    return out


def _visual_batch(prepared: Sequence[_PreparedScene], gcn: GcnParams, fusion: FusionParams) -> np.ndarray:
    """Visual embeddings ``(..., B, d)`` for pre-assembled scenes; broadcasts over stacked params."""
    vecs = []
    for p in prepared:
        if p.node_inputs.shape[0] == 0:
            local = np.zeros((0, gcn.output_dim))
        else:
            local = p.node_inputs
            for w, act in zip(gcn.layers, gcn.activations):
                local = gcn_layer_forward(local, p.operator, w, act)
        vecs.append(midf_forward(p.global_features, local, fusion).vector)
    vecs = np.broadcast_arrays(*vecs)
    return np.stack(vecs, axis=-2)


def visual_embeddings(scenes: Sequence[SyntheticScene], model: ToyModel) -> np.ndarray:
    return _visual_batch(_prepare(scenes, model), model.gcn, model.fusion)


def text_embeddings(scenes: Sequence[SyntheticScene], model: ToyModel, batched: bool = True) -> np.ndarray:
    if batched:
        return encode_texts([s.caption_token_ids for s in scenes], model.text)
    return np.stack([encode_text(s.caption_token_ids, model.text) for s in scenes])


def toy_loss(scenes: Sequence[SyntheticScene], model: ToyModel) -> float:
    return float(triplet_loss(visual_embeddings(scenes, model), text_embeddings(scenes, model), model.margin))


# -- training ----------------------------------------------------------------


@dataclass(frozen=True)
class TrainResult:
    model: ToyModel
    trace: list[float]  # loss before each step, then the final loss


def _visual_part(model: ToyModel) -> tuple[GcnParams, FusionParams]:
    return (model.gcn, model.fusion)


def loss_gradient(
    scenes: Sequence[SyntheticScene],
    model: ToyModel,
    h: float = DEFAULT_FD_STEP,
    chunk: int = 1024,
    prepared: Sequence[_PreparedScene] | None = None,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss plus central-difference gradients for the visual and text parameter vectors.

    A visual coordinate only moves the visual embeddings (and a text
    coordinate only the text ones), so each perturbation recomputes one side
    and reuses the other.  Coordinates are evaluated in vectorized stacks.
    """
    prepared = prepared if prepared is not None else _prepare(scenes, model)
    vis_embed = _visual_batch(prepared, model.gcn, model.fusion)
    txt_embed = text_embeddings(scenes, model)
    loss = float(triplet_loss(vis_embed, txt_embed, model.margin))
    if not np.isfinite(loss):
        raise EvaluationError("loss is not finite")

    vis_template = _visual_part(model)

    def vis_loss(stack: np.ndarray) -> np.ndarray:
        gcn, fusion = unflatten(vis_template, stack)
        return triplet_loss(_visual_batch(prepared, gcn, fusion), txt_embed, model.margin)

    def txt_loss(stack: np.ndarray) -> np.ndarray:
        text = unflatten(model.text, stack)
        return triplet_loss(vis_embed, text_embeddings(scenes, dataclasses.replace(model, text=text)), model.margin)

    g_vis = finite_diff_gradient_batched(vis_loss, flatten(vis_template), h, chunk)
    g_txt = finite_diff_gradient_batched(txt_loss, flatten(model.text), h, chunk)
    return loss, g_vis, g_txt


def train_toy(
    dataset: Sequence[SyntheticScene],
    model: ToyModel,
    steps: int,
    lr: float,
    h: float = DEFAULT_FD_STEP,
) -> TrainResult:
    """Gradient descent on the triplet loss with finite-difference gradients.

    The whole dataset is one batch, so the run is deterministic.  Raises
    :class:`EvaluationError` (with ``.trace``) if the loss turns non-finite.
    """
    if len(dataset) < 2:
        raise ValueError("training needs at least 2 pairs")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    prepared = _prepare(dataset, model)
    trace: list[float] = []
    for step in range(steps):
        try:
            loss, g_vis, g_txt = loss_gradient(dataset, model, h, prepared=prepared)
        except EvaluationError as exc:
            exc.trace = trace
            raise
        trace.append(loss)
        log.debug("step %d loss %.6f", step, loss)
        if not (g_vis.any() or g_txt.any()):
            # Exactly zero gradient: every remaining step would leave the model unchanged.
            trace.extend([loss] * (steps - step - 1))
            break
        if lr != 0.0:
            vis = unflatten(_visual_part(model), flatten(_visual_part(model)) - lr * g_vis)
            text = unflatten(model.text, flatten(model.text) - lr * g_txt)
            model = dataclasses.replace(model, gcn=vis[0], fusion=vis[1], text=text)
    final = toy_loss(dataset, model)
    if not np.isfinite(final):
        err = EvaluationError("final loss is not finite")
        err.trace = trace
        raise err
    trace.append(final)
    return TrainResult(model, trace)


# -- inference ---------------------------------------------------------------


def infer_similarity(scenes: Sequence[SyntheticScene], model: ToyModel, batched: bool = True) -> SimilarityMatrix:
    """Image-to-text cosine similarity: scenes on rows, captions on columns."""
    if batched:
        vis = visual_embeddings(scenes, model)
    else:
        vis = np.stack([forward_visual(s, model.gcn, model.fusion, model.drea) for s in scenes])
    txt = text_embeddings(scenes, model, batched=batched)
    return build_similarity(
        vis, txt, [s.scene_id for s in scenes], [s.caption_id for s in scenes], direction="i2t"
    )


def infer_and_rerank(
    scenes: Sequence[SyntheticScene], model: ToyModel, config: RerankConfig = RerankConfig()
) -> tuple[SimilarityMatrix, list[RerankedList], list[RerankedList]]:
    """Similarity matrix followed by multivariate reranking in both directions."""
    sim = infer_similarity(scenes, model)
    i2t = mr_rerank(sim, dataclasses.replace(config, direction="i2t"))
    t2i = mr_rerank(sim, dataclasses.replace(config, direction="t2i"))
    return sim, i2t, t2i


def ground_truth(scenes: Sequence[SyntheticScene]) -> dict[str, list[str]]:
    return {s.scene_id: [s.caption_id] for s in scenes if s.positive_pair}
