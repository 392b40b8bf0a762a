"""Multivariate rerank: rescoring top-k candidates with bidirectional retrieval.

For a query ``q`` and each of its top-k candidates ``t`` (forward position
``P_m``), three components are combined::

    forward      exp(-xi * (P_m + 1))
    reverse      exp(-xi * (P_n + 1)) if q is at position P_n < l when t
                 queries back over the query axis, else 0
    significance S(q, t) / sum over all queries q' of S(q', t)

    score = forward + w_c1 * reverse + w_c2 * significance

The top-k block is re-sorted by that score (ties keep the original order) and
every target beyond rank k follows in its original order.

``direction`` selects the query axis of the stored matrix: ``"i2t"`` reranks
rows, ``"t2i"`` reranks columns (equivalent to reranking the transpose).
Component functions take the *reverse* matrix, whose rows are candidates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DegenerateInputError
from .metrics import SimilarityMatrix, ranked_indices

DENOMINATOR_EPS = 1e-12


@dataclass(frozen=True)
class RerankConfig:
    k: int = 25
    l: int = 25
    xi: float = 0.1
    w_c1: float = 0.5
    w_c2: float = 1.25
    direction: str = "i2t"

    def __post_init__(self):
        if self.k < 1 or self.l < 1:
            raise ContractError(f"k and l must be >= 1 (got k={self.k}, l={self.l})")
        if not self.xi > 0:
            raise ContractError(f"xi must be positive, got {self.xi}")
        if self.w_c1 < 0 or self.w_c2 < 0:
            raise ContractError("component weights must be nonnegative")
        if self.direction not in ("i2t", "t2i"):
            raise ContractError(f"direction must be 'i2t' or 't2i', got {self.direction!r}")


@dataclass(frozen=True)
class RerankedList:
    query_id: str
    entries: tuple[tuple[str, float, int], ...]  # (target_id, score, original position)
    tail: tuple[str, ...]

    @property
    def order(self) -> list[str]:
        return [t for t, _, _ in self.entries] + list(self.tail)


def forward_component(position: int, xi: float) -> float:
    return math.exp(-xi * (position + 1))


def reverse_component(rev: SimilarityMatrix, candidate: str, query: str, l: int, xi: float) -> float:
    """Reverse-retrieval confirmation of ``query`` by ``candidate``; 0 when outside the top ``l``."""
    row = rev.scores[rev.query_index(candidate)]
    qcol = rev.target_index(query)
    top = ranked_indices(row)[:l]
    hit = np.flatnonzero(top == qcol)
    if hit.size == 0:
        return 0.0
    return math.exp(-xi * (int(hit[0]) + 1))


def significance_component(rev: SimilarityMatrix, candidate: str, query: str) -> float:
    """Share of the candidate's total reverse-side score that points at ``query``."""
    row = rev.scores[rev.query_index(candidate)]
    denom = float(np.sum(row))
    if abs(denom) < DENOMINATOR_EPS:
        raise DegenerateInputError(
            f"significance denominator for candidate {candidate!r} is {denom:.3g} (|.| < {DENOMINATOR_EPS})"
        )
    return float(row[rev.target_index(query)]) / denom


def _oriented(sim: SimilarityMatrix, direction: str) -> SimilarityMatrix:
    return sim.transposed() if direction == "t2i" else sim


def _reverse_positions(scores: np.ndarray) -> np.ndarray:
    """``pos[t, q]``: position of query ``q`` when target ``t`` retrieves over queries."""
    order = np.argsort(-scores.T, kind="stable")
    pos = np.empty_like(order)
    n_t, n_q = order.shape
    pos[np.arange(n_t)[:, None], order] = np.arange(n_q)[None, :]
    return pos


def mr_rerank(sim: SimilarityMatrix, config: RerankConfig = RerankConfig()) -> list[RerankedList]:
    fwd = _oriented(sim, config.direction)
    scores = fwd.scores
    n_targets = scores.shape[1]
    k = min(config.k, n_targets)
    rev_pos = _reverse_positions(scores)
    col_sums = scores.sum(axis=0)
    results = []
    for qi, qid in enumerate(fwd.query_ids):
        order = ranked_indices(scores[qi])
        rescored = []
        for p, t in enumerate(order[:k]):
            denom = col_sums[t]
            if abs(denom) < DENOMINATOR_EPS:
                raise DegenerateInputError(
                    f"query {qid!r}: significance denominator for candidate "
                    f"{fwd.target_ids[t]!r} is {denom:.3g}"
                )
            pn = int(rev_pos[t, qi])
            c_rev = math.exp(-config.xi * (pn + 1)) if pn < config.l else 0.0
            c_sig = float(scores[qi, t]) / float(denom)
            s = forward_component(p, config.xi) + config.w_c1 * c_rev + config.w_c2 * c_sig
            rescored.append((fwd.target_ids[t], s, p))
        rescored.sort(key=lambda e: (-e[1], e[2]))
        tail = tuple(fwd.target_ids[t] for t in order[k:])
        results.append(RerankedList(qid, tuple(rescored), tail))
    return results


def baseline_reverse_rerank(
    sim: SimilarityMatrix, k: int, l: int, direction: str = "i2t"
) -> list[RerankedList]:
    """Reorder the top-k by the query's position in each candidate's reverse list.

    A simplified reverse-rank reranker kept for comparison with :func:`mr_rerank`.
    Candidates that do not retrieve the query within ``l`` get position ``l``.
    The reported score is the reverse position used for sorting.
    """
    if k < 1 or l < 1:
        raise ContractError(f"k and l must be >= 1 (got k={k}, l={l})")
    fwd = _oriented(sim, direction)
    scores = fwd.scores
    k = min(k, scores.shape[1])
    rev_pos = _reverse_positions(scores)
    results = []
    for qi, qid in enumerate(fwd.query_ids):
        order = ranked_indices(scores[qi])
        entries = []
        for p, t in enumerate(order[:k]):
            pn = int(rev_pos[t, qi])
            entries.append((fwd.target_ids[t], float(min(pn, l)), p))
        entries.sort(key=lambda e: (e[1], e[2]))
        tail = tuple(fwd.target_ids[t] for t in order[k:])
        results.append(RerankedList(qid, tuple(entries), tail))
    return results


def rankings(lists: list[RerankedList]) -> dict[str, list[str]]:
    return {r.query_id: r.order for r in lists}
