"""Bidirectional hinge triplet loss over a batch of aligned image/text embeddings."""

from __future__ import annotations

import numpy as np

from .errors import ContractError, ShapeError
from .linalg import cosine_matrix

DEFAULT_MARGIN = 0.2


def _check(images: np.ndarray, texts: np.ndarray, margin: float) -> int:
    if images.shape[-2:] != texts.shape[-2:]:
        raise ShapeError(f"image batch {images.shape} and text batch {texts.shape} are not aligned")
    b = images.shape[-2]
    if b < 2:
        raise ContractError("triplet loss needs at least 2 pairs so that negatives exist")
    if not margin > 0:
        raise ContractError(f"margin must be positive, got {margin}")
    return b


def _hinges(sim: np.ndarray, margin: float) -> tuple[np.ndarray, np.ndarray]:
    """Hinge arguments for negative texts (i, j) and negative images (i, j) of pair i."""
    pos = np.diagonal(sim, axis1=-2, axis2=-1)[..., :, None]
    neg_text = margin - pos + sim
    neg_image = margin - pos + np.swapaxes(sim, -1, -2)
    return neg_text, neg_image


def triplet_loss(images: np.ndarray, texts: np.ndarray, margin: float = DEFAULT_MARGIN) -> np.ndarray | float:
    """Sum over pairs of hinge terms against every non-paired text and image.

    ``images`` and ``texts`` are ``(..., B, d)`` with row i of each forming a pair.
    """
    b = _check(images, texts, margin)
    neg_text, neg_image = _hinges(cosine_matrix(images, texts), margin)
    off = ~np.eye(b, dtype=bool)
    total = (np.maximum(neg_text, 0.0) * off).sum(axis=(-2, -1)) + (np.maximum(neg_image, 0.0) * off).sum(axis=(-2, -1))
    return float(total) if np.ndim(total) == 0 else total


def triplet_loss_grad(
    images: np.ndarray, texts: np.ndarray, margin: float = DEFAULT_MARGIN
) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of :func:`triplet_loss` w.r.t. both embedding batches (unbatched ``(B, d)`` inputs).

    Hinges with argument exactly 0 count as inactive.
    """
    b = _check(images, texts, margin)
    ni = np.linalg.norm(images, axis=1, keepdims=True)
    nt = np.linalg.norm(texts, axis=1, keepdims=True)
    ih, th = images / ni, texts / nt
    sim = ih @ th.T
    neg_text, neg_image = _hinges(sim, margin)
    off = ~np.eye(b, dtype=bool)
    act_t = ((neg_text > 0) & off).astype(float)
    act_i = ((neg_image > 0) & off).astype(float)
    # dL/dS: +1 on every active negative cell, -1 on the diagonal per active term.
    g = act_t + act_i.T
    g[np.diag_indices(b)] -= act_t.sum(axis=1) + act_i.sum(axis=1)
    d_ih = g @ th
    d_th = g.T @ ih
    d_images = (d_ih - ih * np.sum(ih * d_ih, axis=1, keepdims=True)) / ni
    d_texts = (d_th - th * np.sum(th * d_th, axis=1, keepdims=True)) / nt
    return d_images, d_texts


def min_hinge_margin(images: np.ndarray, texts: np.ndarray, margin: float = DEFAULT_MARGIN) -> float:
    """Smallest |hinge argument| over all negative terms; distance to the nearest kink."""
    b = _check(images, texts, margin)
    neg_text, neg_image = _hinges(cosine_matrix(images, texts), margin)
    off = ~np.eye(b, dtype=bool)
    return float(min(np.abs(neg_text[off]).min(), np.abs(neg_image[off]).min()))
