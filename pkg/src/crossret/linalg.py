"""Dense float64 primitives shared by every other module.

Matrices and vectors are plain ``numpy.ndarray`` objects.  ``as_matrix`` and
``as_vector`` are the construction points: they coerce to float64 and reject
wrong rank or non-finite entries, so downstream code can assume clean input.
Most functions here also accept stacked inputs (extra leading axes), which the
toy trainer relies on to evaluate many parameter perturbations at once.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import DegenerateInputError, EvaluationError, NonFiniteError, ShapeError

DEFAULT_FD_STEP = 1e-5


def as_matrix(data, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    m = np.array(data, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-d matrix, got shape {m.shape}")
    if rows is not None and m.shape[0] != rows:
        raise ShapeError(f"expected {rows} rows, got {m.shape[0]}")
    if cols is not None and m.shape[1] != cols:
        raise ShapeError(f"expected {cols} columns, got {m.shape[1]}")
    if not np.all(np.isfinite(m)):
        raise NonFiniteError("matrix contains NaN or Inf")
    return m


def as_vector(data, dim: int | None = None) -> np.ndarray:
    v = np.array(data, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"expected a 1-d vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise ShapeError(f"expected dimension {dim}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise NonFiniteError("vector contains NaN or Inf")
    return v


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0 or x.shape[axis] == 0:
        raise ShapeError("softmax of an empty vector")
    z = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return z / np.sum(z, axis=axis, keepdims=True)


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"cosine of vectors with shapes {a.shape} and {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine similarity of a zero-norm vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise cosines between the rows of ``a`` (..., M, d) and ``b`` (..., N, d)."""
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    nb = np.linalg.norm(b, axis=-1, keepdims=True)
    if np.any(na == 0.0) or np.any(nb == 0.0):
        raise DegenerateInputError("cosine similarity of a zero-norm vector")
    return (a / na) @ np.swapaxes(b / nb, -1, -2)


def finite_diff_gradient(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = DEFAULT_FD_STEP
) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise EvaluationError(f"non-finite function value while perturbing coordinate {i}")
        g[i] = (fp - fm) / (2.0 * h)
    return grad


def finite_diff_gradient_batched(
    f_batch: Callable[[np.ndarray], np.ndarray],
    x: np.ndarray,
    h: float = DEFAULT_FD_STEP,
    chunk: int | None = None,
) -> np.ndarray:
    """Same central differences as :func:`finite_diff_gradient`, vectorized.

    ``f_batch`` maps a stack of points ``(P, n)`` to values ``(P,)``.  Rows
    ``2i`` and ``2i+1`` of each stack are ``x + h e_i`` and ``x - h e_i``.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    n = x.size
    chunk = n if chunk is None else max(1, chunk)
    grad = np.empty(n)
    for start in range(0, n, chunk):
        idx = np.arange(start, min(n, start + chunk))
        pts = np.repeat(x[None, :], 2 * idx.size, axis=0)
        rows = np.arange(idx.size)
        pts[2 * rows, idx] += h
        pts[2 * rows + 1, idx] -= h
        vals = np.asarray(f_batch(pts), dtype=np.float64)
        if not np.all(np.isfinite(vals)):
            raise EvaluationError("non-finite function value during batched differencing")
        grad[idx] = (vals[0::2] - vals[1::2]) / (2.0 * h)
    return grad


def matrix_to_json(m: np.ndarray) -> dict:
    m = np.asarray(m, dtype=np.float64)
    return {"rows": int(m.shape[0]), "cols": int(m.shape[1]), "data": [float(v) for v in m.reshape(-1)]}


def matrix_from_json(obj: dict) -> np.ndarray:
    try:
        rows, cols, data = int(obj["rows"]), int(obj["cols"]), obj["data"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ShapeError(f"malformed matrix object: {exc}") from None
    if len(data) != rows * cols:
        raise ShapeError(f"matrix data has {len(data)} entries, expected {rows}x{cols}")
    return as_matrix(np.array(data, dtype=np.float64).reshape(rows, cols))


def vector_to_json(v: np.ndarray) -> dict:
    v = np.asarray(v, dtype=np.float64)
    return {"dim": int(v.shape[0]), "data": [float(x) for x in v]}


def vector_from_json(obj: dict) -> np.ndarray:
    try:
        dim, data = int(obj["dim"]), obj["data"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ShapeError(f"malformed vector object: {exc}") from None
    return as_vector(data, dim=dim)
