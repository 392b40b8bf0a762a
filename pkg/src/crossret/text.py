"""Bidirectional GRU sentence encoder.

Tokens are embedded, run through a forward GRU and a backward GRU (both from
zero state), and the per-step average of the two hidden states is mean-pooled
over the sentence and passed through one affine layer.  The i-th forward
state is averaged with the i-th backward step; since the pooled mean sums
over every position, the alignment choice does not change the output.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from .errors import ShapeError, VocabularyError
from .linalg import matrix_from_json, matrix_to_json, sigmoid, vector_from_json, vector_to_json


@dataclass(frozen=True)
class GruParams:
    """Update (z), reset (r) and candidate (h) gates: input weights, recurrent weights, bias."""

    w_z: np.ndarray
    u_z: np.ndarray
    b_z: np.ndarray
    w_r: np.ndarray
    u_r: np.ndarray
    b_r: np.ndarray
    w_h: np.ndarray
    u_h: np.ndarray
    b_h: np.ndarray

    @property
    def hidden(self) -> int:
        return self.u_z.shape[-1]

    @classmethod
    def init(cls, e: int, h: int, rng: np.random.Generator) -> "GruParams":
        arrays = {}
        for gate in "zrh":
            arrays[f"w_{gate}"] = rng.normal(0.0, 1.0 / np.sqrt(e), size=(e, h))
            arrays[f"u_{gate}"] = rng.normal(0.0, 1.0 / np.sqrt(h), size=(h, h))
            arrays[f"b_{gate}"] = np.zeros(h)
        return cls(**arrays)

    @classmethod
    def zeros(cls, e: int, h: int) -> "GruParams":
        return cls(**{f.name: np.zeros((h,) if f.name.startswith("b") else ((e if f.name.startswith("w") else h), h))
                      for f in fields(cls)})

    def to_json(self) -> dict:
        return {
            f.name: (vector_to_json if f.name.startswith("b") else matrix_to_json)(getattr(self, f.name))
            for f in fields(self)
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GruParams":
        return cls(**{
            f.name: (vector_from_json if f.name.startswith("b") else matrix_from_json)(obj[f.name])
            for f in fields(cls)
        })


@dataclass(frozen=True)
class TextEncoderParams:
    embedding: np.ndarray  # (V, e)
    gru_forward: GruParams
    gru_backward: GruParams
    mlp_w: np.ndarray  # (h, d)
    mlp_b: np.ndarray  # (d,)

    def __post_init__(self):
        v, e = self.embedding.shape[-2:]
        if v < 1:
            raise ShapeError("vocabulary must be nonempty")
        for gru in (self.gru_forward, self.gru_backward):
            if gru.w_z.shape[-2] != e or gru.hidden != self.mlp_w.shape[-2]:
                raise ShapeError("GRU dimensions do not conform to the embedding and MLP")
        if self.mlp_b.shape[-1] != self.mlp_w.shape[-1]:
            raise ShapeError("MLP bias does not match its weight")

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[-2]

    @property
    def dim(self) -> int:
        return self.mlp_w.shape[-1]

    @classmethod
    def init(cls, vocab: int, e: int, h: int, d: int, rng: np.random.Generator) -> "TextEncoderParams":
        return cls(
            embedding=rng.normal(0.0, 1.0, size=(vocab, e)),
            gru_forward=GruParams.init(e, h, rng),
            gru_backward=GruParams.init(e, h, rng),
            mlp_w=rng.normal(0.0, 1.0 / np.sqrt(h), size=(h, d)),
            mlp_b=np.zeros(d),
        )

    def to_json(self) -> dict:
        return {
            "embedding": matrix_to_json(self.embedding),
            "gru_forward": self.gru_forward.to_json(),
            "gru_backward": self.gru_backward.to_json(),
            "mlp_w": matrix_to_json(self.mlp_w),
            "mlp_b": vector_to_json(self.mlp_b),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TextEncoderParams":
        return cls(
            embedding=matrix_from_json(obj["embedding"]),
            gru_forward=GruParams.from_json(obj["gru_forward"]),
            gru_backward=GruParams.from_json(obj["gru_backward"]),
            mlp_w=matrix_from_json(obj["mlp_w"]),
            mlp_b=vector_from_json(obj["mlp_b"]),
        )


def _bias(b: np.ndarray) -> np.ndarray:
    return b[..., None, :]


def gru_cell(x: np.ndarray, h: np.ndarray, p: GruParams) -> np.ndarray:
    """One step over a batch: ``x`` (..., B, e), ``h`` (..., B, hidden)."""
    z = sigmoid(x @ p.w_z + h @ p.u_z + _bias(p.b_z))
    r = sigmoid(x @ p.w_r + h @ p.u_r + _bias(p.b_r))
    cand = np.tanh(x @ p.w_h + (r * h) @ p.u_h + _bias(p.b_h))
    return (1.0 - z) * cand + z * h


def gru_states(seq: np.ndarray, p: GruParams) -> np.ndarray:
    """Hidden states for each step of ``seq`` (..., B, n, e) -> (..., B, n, hidden)."""
    batch_shape = np.broadcast_shapes(seq.shape[:-2], p.u_z.shape[:-2] + (1,))
    h = np.zeros(batch_shape + (p.hidden,))
    states = []
    for i in range(seq.shape[-2]):
        h = gru_cell(seq[..., i, :], h, p)
        states.append(h)
    return np.stack(states, axis=-2)


def _check_tokens(tokens: np.ndarray, vocab_size: int) -> None:
    if tokens.size == 0 or tokens.shape[-1] == 0:
        raise ShapeError("caption must contain at least one token")
    bad = tokens[(tokens < 0) | (tokens >= vocab_size)]
    if bad.size:
        raise VocabularyError(f"token id {int(bad[0])} outside vocabulary of size {vocab_size}")


def encode_batch(tokens: np.ndarray, params: TextEncoderParams) -> np.ndarray:
    """Encode equal-length captions ``(B, n)`` into ``(..., B, d)``."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 2:
        raise ShapeError(f"expected a (batch, length) token array, got shape {tokens.shape}")
    _check_tokens(tokens, params.vocab_size)
    seq = np.take(params.embedding, tokens, axis=-2)  # (..., B, n, e)
    fwd = gru_states(seq, params.gru_forward)
    bwd = gru_states(seq[..., ::-1, :], params.gru_backward)
    pooled = ((fwd + bwd) / 2.0).mean(axis=-2)
    return pooled @ params.mlp_w + _bias(params.mlp_b)


def encode_text(tokens: Sequence[int], params: TextEncoderParams) -> np.ndarray:
    return encode_batch(np.asarray([list(tokens)]), params)[..., 0, :]


def encode_texts(captions: Sequence[Sequence[int]], params: TextEncoderParams) -> np.ndarray:
    """Encode captions of any lengths, batching those of equal length."""
    if not captions:
        return np.zeros((0, params.dim))
    groups: dict[int, list[int]] = {}
    for i, c in enumerate(captions):
        groups.setdefault(len(c), []).append(i)
    out = None
    for idx in groups.values():
        enc = encode_batch(np.asarray([list(captions[i]) for i in idx]), params)
        if out is None:
            out = np.zeros(enc.shape[:-2] + (len(captions), enc.shape[-1]))
        out[..., idx, :] = enc
    return out
