"""Object graphs built from detections.

Redundant same-category detections that sit close together are merged until
no qualifying pair remains; survivors are ranked by area and connected with a
distance kernel whose weight is boosted for large objects.  The result carries
the symmetric-normalized propagation operator used by the GCN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError, DegenerateInputError, ValidationError

DEFAULT_THRESHOLD = 0.8
DEFAULT_BOOST = 1.15


@dataclass(frozen=True)
class Detection:
    id: str
    category: str
    cx: float
    cy: float
    area: float
    prob: float

    def __post_init__(self):
        for name in ("cx", "cy", "area", "prob"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
                raise ValidationError(f"detection {self.id!r}: {name} must be a finite number, got {v!r}")
            object.__setattr__(self, name, float(v))
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise ValidationError(f"detection {self.id!r}: center ({self.cx}, {self.cy}) outside [0,1]")
        if not 0.0 < self.area <= 1.0:
            raise ValidationError(f"detection {self.id!r}: area {self.area} outside (0,1]")
        if not 0.0 < self.prob <= 1.0:
            raise ValidationError(f"detection {self.id!r}: prob {self.prob} outside (0,1]")

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "category": self.category,
            "cx": self.cx,
            "cy": self.cy,
            "area": self.area,
            "prob": self.prob,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Detection":
        try:
            return cls(
                id=str(obj["id"]),
                category=str(obj["category"]),
                cx=obj["cx"],
                cy=obj["cy"],
                area=obj["area"],
                prob=obj["prob"],
            )
        except KeyError as exc:
            raise ValidationError(f"detection is missing field {exc.args[0]!r}") from None


@dataclass(frozen=True)
class ObjectGraph:
    """Merged nodes in area-rank order plus their adjacency matrices.

    ``adjacency`` has a zero diagonal, ``adjacency_tilde`` adds self loops and
    ``operator`` is ``D^-1/2 (A + I) D^-1/2`` with ``D`` the row sums of
    ``A + I``.
    """

    nodes: tuple[Detection, ...]
    adjacency: np.ndarray
    adjacency_tilde: np.ndarray
    operator: np.ndarray

    @property
    def size(self) -> int:
        return len(self.nodes)


def adjacency_distance(x: Detection, y: Detection, clamp: bool = True) -> float:
    s = (x.cx - y.cx) ** 2 + (x.cy - y.cy) ** 2
    d = math.exp(-s) * (1.0 - s)
    return max(d, 0.0) if clamp else d


def filtration_check(x: Detection, y: Detection, threshold: float = DEFAULT_THRESHOLD) -> bool:
    """True when two detections are redundant: same category and kernel above ``threshold``."""
    return x.category == y.category and adjacency_distance(x, y, clamp=False) > threshold


def merge_pair(x: Detection, y: Detection, threshold: float = DEFAULT_THRESHOLD) -> Detection:
    if not filtration_check(x, y, threshold):
        raise ContractError(f"detections {x.id!r} and {y.id!r} do not qualify for merging")
    return Detection(
        id=f"{x.id}+{y.id}",
        category=x.category,
        cx=(x.cx + y.cx) / 2.0,
        cy=(x.cy + y.cy) / 2.0,
        area=min(x.area + y.area, 1.0),
        prob=max(x.prob, y.prob),
    )


def _first_qualifying_pair(dets: list[Detection], threshold: float) -> tuple[int, int] | None:
    for i in range(len(dets)):
        for j in range(i + 1, len(dets)):
            if filtration_check(dets[i], dets[j], threshold):
                return i, j
    return None


def merge_until_fixpoint(dets: Sequence[Detection], threshold: float = DEFAULT_THRESHOLD) -> list[Detection]:
    """Merge the first qualifying pair in scan order, append the result, repeat.

    Pairs are scanned by ascending first index, then ascending second index.
    The merged node replaces both inputs at the end of the list.
    """
    if not 0.0 < threshold < 1.0:
        raise ContractError(f"threshold must lie in (0,1), got {threshold}")
    current = list(dets)
    while (pair := _first_qualifying_pair(current, threshold)) is not None:
        i, j = pair
        merged = merge_pair(current[i], current[j], threshold)
        current = [d for n, d in enumerate(current) if n not in (i, j)]
        current.append(merged)
    return current


def rank_by_area(dets: Sequence[Detection]) -> list[tuple[Detection, int]]:
    """Largest area first (stable on ties), with 1-based ranks."""
    order = sorted(range(len(dets)), key=lambda i: -dets[i].area)
    return [(dets[i], r) for r, i in enumerate(order, start=1)]


def enhanced_adjacency(
    ranked: Sequence[tuple[Detection, int]], boost: float = DEFAULT_BOOST, clamp: bool = True
) -> np.ndarray:
    if boost <= 0:
        raise ContractError(f"boost must be positive, got {boost}")
    n = len(ranked)
    a = np.zeros((n, n))
    for i in range(n):
        di, mi = ranked[i]
        for j in range(i + 1, n):
            dj, mj = ranked[j]
            w = boost * math.exp(1.0 - math.sqrt(mi * mj)) * adjacency_distance(di, dj, clamp)
            a[i, j] = a[j, i] = w
    return a


def normalized_operator(adjacency: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(A + I, D^-1/2 (A + I) D^-1/2)``."""
    tilde = adjacency + np.eye(adjacency.shape[0])
    deg = tilde.sum(axis=1)
    if np.any(deg <= 0):
        bad = int(np.flatnonzero(deg <= 0)[0])
        raise DegenerateInputError(f"node {bad} has non-positive degree {deg[bad]:.6g}")
    inv_sqrt = 1.0 / np.sqrt(deg)
    return tilde, inv_sqrt[:, None] * tilde * inv_sqrt[None, :]


def assemble_graph(
    dets: Sequence[Detection],
    threshold: float = DEFAULT_THRESHOLD,
    boost: float = DEFAULT_BOOST,
    clamp: bool = True,
) -> ObjectGraph:
    merged = merge_until_fixpoint(dets, threshold)
    ranked = rank_by_area(merged)
    a = enhanced_adjacency(ranked, boost, clamp)
    tilde, op = normalized_operator(a)
    for m in (a, tilde, op):
        m.setflags(write=False)
    return ObjectGraph(tuple(d for d, _ in ranked), a, tilde, op)
