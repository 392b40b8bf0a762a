"""Attention-based fusion of global and local visual features.

Both inputs are feature sequences (rows are regions or graph nodes).  Each is
re-encoded by self-attention, then each attends to the other by guided
attention.  After mean pooling, local features gate the global ones through a
sigmoid mask and global features are added to the local ones.  A small head
produces two softmax weights that blend the two views into one vector.

All functions broadcast over leading axes of inputs and parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import ShapeError
from .linalg import matrix_from_json, matrix_to_json, relu, sigmoid, softmax


@dataclass(frozen=True)
class AttentionParams:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray

    @classmethod
    def init(cls, d: int, rng: np.random.Generator) -> "AttentionParams":
        scale = 1.0 / np.sqrt(d)
        return cls(*(rng.normal(0.0, scale, size=(d, d)) for _ in range(3)))

    @classmethod
    def identity(cls, d: int) -> "AttentionParams":
        return cls(np.eye(d), np.eye(d), np.eye(d))


@dataclass(frozen=True)
class FusionParams:
    sa_g: AttentionParams
    sa_l: AttentionParams
    ga_g: AttentionParams
    ga_l: AttentionParams
    w_alpha: np.ndarray
    w_beta: np.ndarray

    def __post_init__(self):
        d = self.dim
        for f in ("sa_g", "sa_l", "ga_g", "ga_l"):
            for m in getattr(self, f).__dict__.values():
                if m.shape[-2:] != (d, d):
                    raise ShapeError(f"{f} projection has shape {m.shape[-2:]}, expected ({d}, {d})")
        if self.w_alpha.shape[-2] != d:
            raise ShapeError(f"w_alpha must have {d} rows, has {self.w_alpha.shape[-2]}")
        if self.w_beta.shape[-2:] != (self.w_alpha.shape[-1], 2):
            raise ShapeError(f"w_beta must be ({self.w_alpha.shape[-1]}, 2), got {self.w_beta.shape[-2:]}")

    @property
    def dim(self) -> int:
        return self.sa_g.w_q.shape[-1]

    @classmethod
    def init(cls, d: int, rng: np.random.Generator, hidden: int | None = None) -> "FusionParams":
        dh = hidden if hidden is not None else max(1, d // 2)
        blocks = [AttentionParams.init(d, rng) for _ in range(4)]
        w_alpha = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, dh))
        w_beta = rng.normal(0.0, 1.0 / np.sqrt(dh), size=(dh, 2))
        return cls(*blocks, w_alpha, w_beta)

    def to_json(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, AttentionParams):
                out[f.name] = {k: matrix_to_json(m) for k, m in v.__dict__.items()}
            else:
                out[f.name] = matrix_to_json(v)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "FusionParams":
        blocks = {
            name: AttentionParams(**{k: matrix_from_json(obj[name][k]) for k in ("w_q", "w_k", "w_v")})
            for name in ("sa_g", "sa_l", "ga_g", "ga_l")
        }
        return cls(**blocks, w_alpha=matrix_from_json(obj["w_alpha"]), w_beta=matrix_from_json(obj["w_beta"]))


@dataclass(frozen=True)
class FusionResult:
    vector: np.ndarray
    gamma: np.ndarray  # (..., 2)
    global_only: bool = False


def _vecmat(v: np.ndarray, w: np.ndarray) -> np.ndarray:
    return (v[..., None, :] @ w)[..., 0, :]


def guided_attention(x: np.ndarray, y: np.ndarray, p: AttentionParams) -> np.ndarray:
    """Queries from ``x``, keys and values from ``y``; output has ``x``'s rows."""
    d = x.shape[-1]
    if y.shape[-1] != d or p.w_q.shape[-2] != d:
        raise ShapeError(f"attention inputs {x.shape}, {y.shape} do not match projections {p.w_q.shape}")
    q = x @ p.w_q
    k = y @ p.w_k
    v = y @ p.w_v
    weights = softmax(q @ np.swapaxes(k, -1, -2) / np.sqrt(d), axis=-1)
    return weights @ v


def self_attention(x: np.ndarray, p: AttentionParams) -> np.ndarray:
    return guided_attention(x, x, p)


def interact(vg_seq: np.ndarray, vl_seq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean-pool both sequences; mask global by sigmoid(local), add global to local."""
    if vg_seq.shape[-1] != vl_seq.shape[-1]:
        raise ShapeError("global and local features differ in dimension")
    g = vg_seq.mean(axis=-2)
    l = vl_seq.mean(axis=-2)
    return g * sigmoid(l), l + g


def dynamic_fuse(
    vg: np.ndarray, vl: np.ndarray, w_alpha: np.ndarray, w_beta: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    if vg.shape[-1] != vl.shape[-1] or w_alpha.shape[-2] != vg.shape[-1] or w_alpha.shape[-1] != w_beta.shape[-2]:
        raise ShapeError("fusion head dimensions do not conform")
    hidden = relu(_vecmat(vg + vl, w_alpha))
    gamma = softmax(_vecmat(hidden, w_beta), axis=-1)
    # Written as vg + g2 (vl - vg) so equal inputs come back unchanged bit for bit.
    v = vg + gamma[..., 1:2] * (vl - vg)
    return v, gamma


def midf_forward(vg_seq: np.ndarray, vl_seq: np.ndarray, params: FusionParams) -> FusionResult:
    if vg_seq.shape[-1] != params.dim or vl_seq.shape[-1] != params.dim:
        raise ShapeError(f"feature dim must be {params.dim}")
    g_sa = self_attention(vg_seq, params.sa_g)
    if vl_seq.shape[-2] == 0:
        v = g_sa.mean(axis=-2)
        gamma = np.zeros(v.shape[:-1] + (2,))
        gamma[..., 0] = 1.0
        return FusionResult(v, gamma, global_only=True)
    l_sa = self_attention(vl_seq, params.sa_l)
    g_ga = guided_attention(g_sa, l_sa, params.ga_g)
    l_ga = guided_attention(l_sa, g_sa, params.ga_l)
    vg, vl = interact(g_ga, l_ga)
    v, gamma = dynamic_fuse(vg, vl, params.w_alpha, params.w_beta)
    return FusionResult(v, gamma)
