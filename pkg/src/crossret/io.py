"""File formats.

* similarity CSV: header ``qid,<target ids...>``, one row of scores per query
* ground truth JSON: ``{"positives": {qid: [target ids]}}``
* detections JSON Lines: one detection object per line
* ranking CSV: header ``qid,reranked=<k>,direction=<dir>``, then per query
  ``qid,t0,s0,...,t{k-1},s{k-1},<tail ids...>``
* JSON documents for graphs, parameters, datasets and feature sequences

Floats are written with ``repr`` (shortest round-trip form), so writing what
was read reproduces the file byte for byte.  Writers go through
:func:`atomic_write`.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .detections import Detection, ObjectGraph
from .errors import CrossRetError, ParseError, ValidationError
from .linalg import matrix_from_json, matrix_to_json
from .metrics import GroundTruth, SimilarityMatrix
from .rerank import RerankedList
from .toy import SynthConfig, SyntheticScene


def atomic_write(path: str | os.PathLike, text: str) -> None:
    """Write ``text`` to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    atomic_write(path, json.dumps(obj, indent=1) + "\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON: {exc.msg}", exc.lineno) from None


def _fmt(x: float) -> str:
    return repr(float(x))


def _csv_text(rows: Iterable[Sequence[str]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()


# -- similarity matrices -----------------------------------------------------


def similarity_to_csv(sim: SimilarityMatrix) -> str:
    rows = [["qid", *sim.target_ids]]
    rows += [[q, *(_fmt(v) for v in sim.scores[i])] for i, q in enumerate(sim.query_ids)]
    return _csv_text(rows)


def write_similarity_csv(path, sim: SimilarityMatrix) -> None:
    atomic_write(path, similarity_to_csv(sim))


def parse_similarity_csv(text: str, direction: str = "generic") -> SimilarityMatrix:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or not rows[0] or rows[0][0] != "qid":
        raise ParseError("header must start with 'qid'", 1)
    targets = rows[0][1:]
    if not targets:
        raise ParseError("header lists no targets", 1)
    seen: set[str] = set()
    for col, t in enumerate(targets, start=2):
        if t in seen:
            raise ParseError(f"duplicate target id {t!r} in column {col}", 1)
        seen.add(t)
    qids, data = [], []
    seen = set()
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(targets) + 1:
            raise ParseError(f"expected {len(targets) + 1} cells, found {len(row)}", lineno)
        if row[0] in seen:
            raise ParseError(f"duplicate query id {row[0]!r}", lineno)
        seen.add(row[0])
        values = []
        for col, cell in enumerate(row[1:], start=2):
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"column {col}: {cell!r} is not a number", lineno) from None
            if not math.isfinite(v):
                raise ParseError(f"column {col}: non-finite value {cell!r}", lineno)
            values.append(v)
        qids.append(row[0])
        data.append(values)
    if not qids:
        raise ParseError("no query rows", 2)
    return SimilarityMatrix(qids, targets, np.array(data), direction)


def read_similarity_csv(path, direction: str = "generic") -> SimilarityMatrix:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_similarity_csv(fh.read(), direction)


# -- ground truth ------------------------------------------------------------


def read_ground_truth(path) -> GroundTruth:
    obj = read_json(path)
    if not isinstance(obj, dict) or not isinstance(obj.get("positives"), dict):
        raise ParseError(f"{path}: expected an object with a 'positives' mapping")
    try:
        return GroundTruth({q: list(ts) for q, ts in obj["positives"].items()})
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None


def write_ground_truth(path, positives: dict[str, Sequence[str]]) -> None:
    write_json(path, {"positives": {q: list(ts) for q, ts in positives.items()}})


# -- detections --------------------------------------------------------------


def detections_to_jsonl(dets: Sequence[Detection]) -> str:
    return "".join(json.dumps(d.to_json()) + "\n" for d in dets)


def write_detections_jsonl(path, dets: Sequence[Detection]) -> None:
    atomic_write(path, detections_to_jsonl(dets))


def parse_detections_jsonl(text: str) -> list[Detection]:
    dets = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", lineno) from None
        if not isinstance(obj, dict):
            raise ValidationError("expected a JSON object", lineno)
        try:
            dets.append(Detection.from_json(obj))
        except ValidationError as exc:
            raise ValidationError(str(exc), lineno) from None
    return dets


def read_detections_jsonl(path) -> list[Detection]:
    with open(path, encoding="utf-8") as fh:
        return parse_detections_jsonl(fh.read())


# -- graphs and features -----------------------------------------------------


def graph_to_json(g: ObjectGraph) -> dict:
    return {
        "nodes": [d.to_json() for d in g.nodes],
        "adjacency_A": matrix_to_json(g.adjacency),
        "adjacency_tilde": matrix_to_json(g.adjacency_tilde),
        "operator": matrix_to_json(g.operator),
    }


def graph_from_json(obj: dict) -> ObjectGraph:
    nodes = tuple(Detection.from_json(d) for d in obj["nodes"])
    mats = [matrix_from_json(obj[k]) for k in ("adjacency_A", "adjacency_tilde", "operator")]
    for m in mats:
        if m.shape != (len(nodes), len(nodes)):
            raise ParseError(f"graph matrix shape {m.shape} does not match {len(nodes)} nodes")
    return ObjectGraph(nodes, *mats)


def sequence_from_json(obj: dict) -> np.ndarray:
    """A feature sequence: ``{"count", "dim", "matrix"}`` or a bare matrix object."""
    m = matrix_from_json(obj["matrix"] if "matrix" in obj else obj)
    if "count" in obj and obj["count"] != m.shape[0]:
        raise ParseError(f"feature sequence count {obj['count']} != {m.shape[0]} rows")
    return m


def sequence_to_json(m: np.ndarray) -> dict:
    return {"count": int(m.shape[0]), "dim": int(m.shape[1]), "matrix": matrix_to_json(m)}


# -- rankings ----------------------------------------------------------------


def rankings_to_csv(lists: Sequence[RerankedList], direction: str) -> str:
    k = len(lists[0].entries) if lists else 0
    rows = [["qid", f"reranked={k}", f"direction={direction}"]]
    for r in lists:
        row = [r.query_id]
        for t, s, _ in r.entries:
            row += [t, _fmt(s)]
        rows.append(row + list(r.tail))
    return _csv_text(rows)


def write_rankings_csv(path, lists: Sequence[RerankedList], direction: str) -> None:
    atomic_write(path, rankings_to_csv(lists, direction))


def read_rankings_csv(path) -> tuple[dict[str, list[str]], str]:
    """Ranked target ids per query, plus the direction recorded in the header."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or len(rows[0]) != 3 or rows[0][0] != "qid" or not rows[0][1].startswith("reranked="):
        raise ParseError("ranking header must be 'qid,reranked=<k>,direction=<dir>'", 1)
    try:
        k = int(rows[0][1].split("=", 1)[1])
    except ValueError:
        raise ParseError(f"bad reranked count {rows[0][1]!r}", 1) from None
    direction = rows[0][2].split("=", 1)[1]
    out: dict[str, list[str]] = {}
    width = None
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) < 1 + 2 * k:
            raise ParseError(f"row has {len(row)} cells, fewer than the {1 + 2 * k} needed", lineno)
        if width is not None and len(row) != width:
            raise ParseError(f"ragged row: {len(row)} cells, expected {width}", lineno)
        width = len(row)
        head = row[1:1 + 2 * k]
        for cell in head[1::2]:
            try:
                float(cell)
            except ValueError:
                raise ParseError(f"score {cell!r} is not a number", lineno) from None
        if row[0] in out:
            raise ParseError(f"duplicate query id {row[0]!r}", lineno)
        out[row[0]] = head[0::2] + row[1 + 2 * k:]
    return out, direction


# -- datasets, models, traces ------------------------------------------------


def write_dataset(path, scenes: Sequence[SyntheticScene], config: SynthConfig | None = None) -> None:
    obj = {"scenes": [s.to_json() for s in scenes]}
    if config is not None:
        obj = {"config": dataclasses.asdict(config), **obj}
    write_json(path, obj)


def read_dataset(path) -> tuple[list[SyntheticScene], SynthConfig | None]:
    obj = read_json(path)
    try:
        if isinstance(obj, list):
            return [SyntheticScene.from_json(s) for s in obj], None
        scenes = [SyntheticScene.from_json(s) for s in obj["scenes"]]
        config = SynthConfig(**obj["config"]) if "config" in obj else None
    except CrossRetError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: malformed dataset: {exc}") from None
    return scenes, config


def trace_to_csv(trace: Sequence[float]) -> str:
    return _csv_text([["step", "loss"], *([str(i), _fmt(v)] for i, v in enumerate(trace))])
