"""Command-line entry point: ``crossret <command> [flags]``."""

from __future__ import annotations

import argparse
import logging
import statistics
import sys
from typing import Sequence

import numpy as np

from . import io
from .detections import DEFAULT_BOOST, DEFAULT_THRESHOLD, assemble_graph
from .errors import EXIT_CODES, CrossRetError, EvaluationError
from .fusion import FusionParams, midf_forward
from .gcn import GcnParams, local_features
from .linalg import finite_diff_gradient, vector_to_json
from .loss import min_hinge_margin, triplet_loss, triplet_loss_grad
from .metrics import mean_recall, recall_at_k, recall_from_rankings
from .rerank import RerankConfig, baseline_reverse_rerank, mr_rerank
from .toy import (
    SynthConfig,
    ToyModel,
    generate_synthetic,
    ground_truth,
    infer_similarity,
    text_embeddings,
    train_toy,
    visual_embeddings,
)

log = logging.getLogger("crossret")

IO_EXIT_CODE = 12
GRADCHECK_EXIT_CODE = 13

EPILOG = "exit codes: 0 ok, 2 usage, " + ", ".join(
    f"{code} {cat}" for cat, code in sorted(EXIT_CODES.items(), key=lambda kv: kv[1])
) + f", {IO_EXIT_CODE} io, {GRADCHECK_EXIT_CODE} gradcheck-failed"


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {s}")
    return v


def _positive_float(s: str) -> float:
    v = float(s)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {s}")
    return v


def _nonneg_float(s: str) -> float:
    v = float(s)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative number, got {s}")
    return v


def _unit_open(s: str) -> float:
    v = float(s)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"expected a value in (0, 1), got {s}")
    return v


def _ks(s: str) -> list[int]:
    try:
        ks = [int(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad k list {s!r}") from None
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError("k values must be >= 1")
    return ks


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crossret", description=__doc__, epilog=EPILOG)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rerank", help="multivariate rerank of a similarity matrix", epilog=EPILOG)
    p.add_argument("--sim", required=True)
    p.add_argument("--direction", choices=["i2t", "t2i"], default="i2t",
                   help="i2t reranks the rows of the CSV, t2i its columns")
    p.add_argument("--k", type=_positive_int, default=25)
    p.add_argument("--l", type=_positive_int, default=25)
    p.add_argument("--xi", type=_positive_float, default=0.1)
    p.add_argument("--wc1", type=_nonneg_float, default=0.5)
    p.add_argument("--wc2", type=_nonneg_float, default=1.25)
    p.add_argument("--method", choices=["mr", "baseline"], default="mr")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="R@k and mR", epilog=EPILOG)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--sim", help="similarity CSV (rows are i2t queries)")
    src.add_argument("--ranking", help="ranking CSV from `rerank` for the i2t direction")
    p.add_argument("--ranking-t2i", help="ranking CSV for the t2i direction (with --ranking)")
    p.add_argument("--gt", required=True)
    p.add_argument("--ks", type=_ks, default=[1, 5, 10])
    p.add_argument("--both-directions", action="store_true")
    p.add_argument("--out", help="optional JSON summary")

    p = sub.add_parser("graph", help="build the object graph from detections", epilog=EPILOG)
    p.add_argument("--detections", required=True)
    p.add_argument("--threshold", type=_unit_open, default=DEFAULT_THRESHOLD)
    p.add_argument("--boost", type=_positive_float, default=DEFAULT_BOOST)
    p.add_argument("--clamp", choices=["on", "off"], default="on")
    p.add_argument("--out", required=True)

    p = sub.add_parser("gcn", help="local node features from a graph", epilog=EPILOG)
    p.add_argument("--graph", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fuse", help="fuse global and local feature sequences", epilog=EPILOG)
    p.add_argument("--global", dest="global_", required=True)
    p.add_argument("--local", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("synth", help="generate a synthetic paired dataset", epilog=EPILOG)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--pairs", type=_positive_int, default=8)
    p.add_argument("--vocab", type=_positive_int, default=32)
    p.add_argument("--categories", type=_positive_int, default=4)
    p.add_argument("--dim", type=_positive_int, default=8)
    p.add_argument("--separation", type=_nonneg_float, default=2.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-toy", help="finite-difference training on a dataset", epilog=EPILOG)
    p.add_argument("--data", required=True)
    p.add_argument("--steps", type=_positive_int, default=200)
    p.add_argument("--lr", type=_nonneg_float, default=0.05)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--h", type=_positive_float, default=1e-5)
    p.add_argument("--init", help="start from these params instead of a seeded init")
    p.add_argument("--out", required=True)
    p.add_argument("--trace")

    p = sub.add_parser("infer", help="similarity matrix for a dataset", epilog=EPILOG)
    p.add_argument("--data", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gt-out", help="also write the dataset's ground truth JSON")

    p = sub.add_parser("gradcheck", help="analytic vs finite-difference triplet gradient", epilog=EPILOG)
    p.add_argument("--params", required=True)
    p.add_argument("--data", help="dataset to embed (default: synthetic from --seed)")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--h", type=_positive_float, default=1e-5)
    p.add_argument("--tolerance", type=_positive_float, default=1e-5)
    return parser


# -- commands ----------------------------------------------------------------


def cmd_rerank(args) -> int:
    sim = io.read_similarity_csv(args.sim)
    if args.method == "mr":
        cfg = RerankConfig(args.k, args.l, args.xi, args.wc1, args.wc2, args.direction)
        lists = mr_rerank(sim, cfg)
    else:
        lists = baseline_reverse_rerank(sim, args.k, args.l, args.direction)
    io.write_rankings_csv(args.out, lists, args.direction)
    return 0


def _evaluate(args) -> dict[str, float]:
    gt = io.read_ground_truth(args.gt)
    results: dict[str, float] = {}
    if args.sim:
        sim = io.read_similarity_csv(args.sim)
        for k in args.ks:
            results[f"i2t R@{k}"] = recall_at_k(sim, gt, k)
        if args.both_directions:
            for k in args.ks:
                results[f"t2i R@{k}"] = recall_at_k(sim.transposed(), gt.inverted(), k)
    else:
        ranks, _ = io.read_rankings_csv(args.ranking)
        for k in args.ks:
            results[f"i2t R@{k}"] = recall_from_rankings(ranks, gt, k)
        if args.both_directions:
            if not args.ranking_t2i:
                raise CrossRetError("--both-directions with --ranking needs --ranking-t2i")
            ranks_t, _ = io.read_rankings_csv(args.ranking_t2i)
            for k in args.ks:
                results[f"t2i R@{k}"] = recall_from_rankings(ranks_t, gt.inverted(), k)
    return results


def cmd_eval(args) -> int:
    results = _evaluate(args)
    values = list(results.values())
    mr = mean_recall(values) if len(values) == 6 else statistics.fmean(values)
    prefix = len({name.split()[0] for name in results}) > 1
    for name, value in results.items():
        print(f"{name if prefix else name.split()[1]}={value:.2f}")
    print(f"mR={mr:.2f}")
    if args.out:
        io.write_json(args.out, {"recalls": results, "mR": mr})
    return 0


def cmd_graph(args) -> int:
    dets = io.read_detections_jsonl(args.detections)
    g = assemble_graph(dets, args.threshold, args.boost, args.clamp == "on")
    io.write_json(args.out, io.graph_to_json(g))
    return 0


def cmd_gcn(args) -> int:
    graph = io.graph_from_json(io.read_json(args.graph))
    params = GcnParams.from_json(io.read_json(args.params))
    io.write_json(args.out, io.sequence_to_json(local_features(graph, params)))
    return 0


def cmd_fuse(args) -> int:
    vg = io.sequence_from_json(io.read_json(args.global_))
    vl = io.sequence_from_json(io.read_json(args.local))
    params = FusionParams.from_json(io.read_json(args.params))
    res = midf_forward(vg, vl, params)
    io.write_json(args.out, {
        "vector": vector_to_json(res.vector),
        "gamma": [float(g) for g in res.gamma],
        "global_only": res.global_only,
    })
    return 0


def cmd_synth(args) -> int:
    cfg = SynthConfig(args.pairs, args.vocab, args.categories, args.dim, args.separation)
    io.write_dataset(args.out, generate_synthetic(args.seed, cfg), cfg)
    return 0


def _model_for(scenes, cfg: SynthConfig | None, seed: int) -> ToyModel:
    if cfg is None:
        cats = sorted({d.category for s in scenes for d in s.detections})
        vocab = max(t for s in scenes for t in s.caption_token_ids) + 1
        cfg = SynthConfig(len(scenes), vocab, max(1, len(cats)), scenes[0].global_features.shape[1])
        names = tuple(cats) or cfg.category_names
    else:
        names = cfg.category_names
    return ToyModel.init(names, cfg.vocab, cfg.d, np.random.default_rng(seed))


def cmd_train(args) -> int:
    scenes, cfg = io.read_dataset(args.data)
    model = ToyModel.from_json(io.read_json(args.init)) if args.init else _model_for(scenes, cfg, args.seed)
    try:
        result = train_toy(scenes, model, args.steps, args.lr, args.h)
    except EvaluationError as exc:
        if args.trace and getattr(exc, "trace", None):
            io.atomic_write(args.trace, io.trace_to_csv(exc.trace))
        raise
    io.write_json(args.out, result.model.to_json())
    if args.trace:
        io.atomic_write(args.trace, io.trace_to_csv(result.trace))
    print(f"loss {result.trace[0]:.6f} -> {result.trace[-1]:.6f} over {args.steps} steps")
    return 0


def cmd_infer(args) -> int:
    scenes, _ = io.read_dataset(args.data)
    model = ToyModel.from_json(io.read_json(args.params))
    io.write_similarity_csv(args.out, infer_similarity(scenes, model))
    if args.gt_out:
        io.write_ground_truth(args.gt_out, ground_truth(scenes))
    return 0


def cmd_gradcheck(args) -> int:
    if args.data:
        scenes, _ = io.read_dataset(args.data)
    else:
        scenes = generate_synthetic(args.seed)
    model = ToyModel.from_json(io.read_json(args.params))
    vis = visual_embeddings(scenes, model)
    txt = text_embeddings(scenes, model)
    n = vis.size

    def f(x):
        return triplet_loss(x[:n].reshape(vis.shape), x[n:].reshape(txt.shape), model.margin)

    g_vis, g_txt = triplet_loss_grad(vis, txt, model.margin)
    analytic = np.concatenate([g_vis.ravel(), g_txt.ravel()])
    numeric = finite_diff_gradient(f, np.concatenate([vis.ravel(), txt.ravel()]), args.h)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    rel = float(np.linalg.norm(analytic - numeric) / scale)
    kink = min_hinge_margin(vis, txt, model.margin)
    print(f"relative error {rel:.3e} (tolerance {args.tolerance:.1e}); nearest hinge kink {kink:.3e}")
    if kink <= args.h:
        print("warning: a hinge argument lies within h of its kink; differences may straddle it")
    return 0 if rel < args.tolerance else GRADCHECK_EXIT_CODE


COMMANDS = {
    "rerank": cmd_rerank,
    "eval": cmd_eval,
    "graph": cmd_graph,
    "gcn": cmd_gcn,
    "fuse": cmd_fuse,
    "synth": cmd_synth,
    "train-toy": cmd_train,
    "infer": cmd_infer,
    "gradcheck": cmd_gradcheck,
}


def dispatch(args: argparse.Namespace) -> int:
    """Run one parsed command; map failures to ``error[<category>]`` and an exit code."""
    try:
        return COMMANDS[args.command](args)
    except CrossRetError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return IO_EXIT_CODE
    except ValueError as exc:
        print(f"error[invalid]: {exc}", file=sys.stderr)
        return CrossRetError.exit_code


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    return dispatch(args)


if __name__ == "__main__":
    sys.exit(main())
