"""Similarity matrices, ranked retrieval and recall metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ShapeError, UnknownIdentifierError
from .linalg import as_matrix, cosine_matrix

DIRECTIONS = ("i2t", "t2i", "generic")
_SWAP = {"i2t": "t2i", "t2i": "i2t", "generic": "generic"}


@dataclass(frozen=True)
class SimilarityMatrix:
    """Scores between ``query_ids`` (rows) and ``target_ids`` (columns)."""

    query_ids: tuple[str, ...]
    target_ids: tuple[str, ...]
    scores: np.ndarray
    direction: str = "generic"
    _qindex: dict = field(init=False, repr=False, compare=False)
    _tindex: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        qids = tuple(str(q) for q in self.query_ids)
        tids = tuple(str(t) for t in self.target_ids)
        scores = as_matrix(self.scores, rows=len(qids), cols=len(tids))
        scores.setflags(write=False)
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")
        for axis, ids in (("query", qids), ("target", tids)):
            if len(set(ids)) != len(ids):
                dupes = sorted({i for i in ids if ids.count(i) > 1})
                raise ValueError(f"duplicate {axis} identifiers: {dupes}")
        object.__setattr__(self, "query_ids", qids)
        object.__setattr__(self, "target_ids", tids)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "_qindex", {q: i for i, q in enumerate(qids)})
        object.__setattr__(self, "_tindex", {t: j for j, t in enumerate(tids)})

    @property
    def shape(self) -> tuple[int, int]:
        return self.scores.shape

    def query_index(self, qid: str) -> int:
        try:
            return self._qindex[qid]
        except KeyError:
            raise UnknownIdentifierError(f"unknown query identifier {qid!r}") from None

    def target_index(self, tid: str) -> int:
        try:
            return self._tindex[tid]
        except KeyError:
            raise UnknownIdentifierError(f"unknown target identifier {tid!r}") from None

    def transposed(self) -> "SimilarityMatrix":
        """Swap the query and target axes (i2t becomes t2i and vice versa)."""
        return SimilarityMatrix(self.target_ids, self.query_ids, self.scores.T, _SWAP[self.direction])

    def scaled(self, alpha: float) -> "SimilarityMatrix":
        return SimilarityMatrix(self.query_ids, self.target_ids, self.scores * alpha, self.direction)


@dataclass(frozen=True)
class GroundTruth:
    positives: Mapping[str, frozenset]

    def __post_init__(self):
        pos = {}
        for q, targets in self.positives.items():
            targets = frozenset(str(t) for t in targets)
            if not targets:
                raise ValueError(f"query {q!r} has no positives")
            pos[str(q)] = targets
        if not pos:
            raise ValueError("ground truth is empty")
        object.__setattr__(self, "positives", pos)

    def inverted(self) -> "GroundTruth":
        """Positives keyed by target, for evaluating the opposite direction."""
        inv: dict[str, set] = {}
        for q, targets in self.positives.items():
            for t in targets:
                inv.setdefault(t, set()).add(q)
        return GroundTruth(inv)

    def check_against(self, sim: SimilarityMatrix) -> None:
        for q, targets in self.positives.items():
            sim.query_index(q)
            for t in targets:
                sim.target_index(t)


def build_similarity(
    queries: Sequence[np.ndarray],
    targets: Sequence[np.ndarray],
    query_ids: Iterable[str] | None = None,
    target_ids: Iterable[str] | None = None,
    direction: str = "generic",
) -> SimilarityMatrix:
    q = np.asarray(queries, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if q.ndim != 2 or t.ndim != 2 or q.shape[1] != t.shape[1]:
        raise ShapeError(f"query/target stacks have incompatible shapes {q.shape}, {t.shape}")
    qids = list(query_ids) if query_ids is not None else [str(i) for i in range(len(q))]
    tids = list(target_ids) if target_ids is not None else [str(j) for j in range(len(t))]
    scores = np.clip(cosine_matrix(q, t), -1.0, 1.0)
    return SimilarityMatrix(qids, tids, scores, direction)


def ranked_indices(row: np.ndarray) -> np.ndarray:
    """Column indices by descending score; ties go to the smaller index."""
    return np.argsort(-np.asarray(row), kind="stable")


def rank_targets(sim: SimilarityMatrix, query: str, top: int) -> list[tuple[str, float, int]]:
    """Top ``top`` targets for ``query`` as ``(target_id, score, position)``."""
    i = sim.query_index(query)
    n = sim.shape[1]
    if not 1 <= top <= n:
        raise ValueError(f"top must be in [1, {n}], got {top}")
    row = sim.scores[i]
    order = ranked_indices(row)[:top]
    return [(sim.target_ids[j], float(row[j]), p) for p, j in enumerate(order)]


def _hits(ranked_ids: Sequence[str], positives: frozenset, k: int) -> bool:
    return any(t in positives for t in ranked_ids[:k])


def recall_at_k(sim: SimilarityMatrix, gt: GroundTruth, k: int) -> float:
    """Percentage of ground-truth queries with any positive in their top ``k``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    gt.check_against(sim)
    hits = 0
    for q, positives in gt.positives.items():
        order = ranked_indices(sim.scores[sim.query_index(q)])[:k]
        hits += _hits([sim.target_ids[j] for j in order], positives, k)
    return 100.0 * hits / len(gt.positives)


def recall_from_rankings(rankings: Mapping[str, Sequence[str]], gt: GroundTruth, k: int) -> float:
    """R@k over precomputed rankings (e.g. a reranked list) instead of raw scores."""
    if k < 1:
        raise ValueError("k must be >= 1")
    hits = 0
    for q, positives in gt.positives.items():
        if q not in rankings:
            raise UnknownIdentifierError(f"no ranking for query {q!r}")
        hits += _hits(rankings[q], positives, k)
    return 100.0 * hits / len(gt.positives)


def mean_recall(recalls: Sequence[float]) -> float:
    """mR: the mean of R@1/5/10 in both retrieval directions."""
    if len(recalls) != 6:
        raise ShapeError(f"mean recall takes exactly 6 values, got {len(recalls)}")
    return sum(float(r) for r in recalls) / 6.0
