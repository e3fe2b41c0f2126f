"""Command-line interface for the whole pipeline.

Heavy modules are imported lazily inside the handlers so that ``--threads``
can pin the BLAS thread pools via environment variables before numpy loads.
Errors go to stderr as single-line JSON; exit codes: 0 success, 1 data error,
2 usage error. Log level comes from CI_PIPELINE_LOG (error|info|debug).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

log = logging.getLogger("ci_pipeline")

# Built-in defaults surfaced in --help; PipelineConfig re-validates them.
DEFAULTS = {
    "n_partitions": 200,
    "theta_image": 3.0,
    "theta_ci": 0.25,
    "reduced_dim": 7,
    "min_likes": 1,
    "seed": 0,
    "kmeans_max_iters": 100,
    "kmeans_tol": 1e-6,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(json.dumps({"error": message}), file=sys.stderr)
        raise SystemExit(2)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--n-partitions", type=int, default=None,
                        help=f"initial partition count N (default: {DEFAULTS['n_partitions']})")
    parser.add_argument("--theta-image", type=float, default=None,
                        help=f"Ward distance merge threshold (default: {DEFAULTS['theta_image']})")
    parser.add_argument("--theta-ci", type=float, default=None,
                        help=f"user IoU merge threshold (default: {DEFAULTS['theta_ci']})")
    parser.add_argument("--reduced-dim", type=int, default=None,
                        help=f"reduced dimension r (default: {DEFAULTS['reduced_dim']}; "
                             "identity reducer forces the embedding dimension)")
    parser.add_argument("--reducer", choices=("pca", "identity"), default="pca",
                        help="dimensionality reducer (default: pca)")
    parser.add_argument("--min-likes", type=int, default=None,
                        help=f"likes per user per partition (default: {DEFAULTS['min_likes']})")
    parser.add_argument("--kmeans-max-iters", type=int, default=None,
                        help=f"Lloyd iteration cap (default: {DEFAULTS['kmeans_max_iters']})")
    parser.add_argument("--kmeans-tol", type=float, default=None,
                        help=f"relative inertia tolerance (default: {DEFAULTS['kmeans_tol']})")
    parser.add_argument("--config", default=None,
                        help="JSON file with config values; explicit flags win")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None,
                        help=f"RNG seed (default: {DEFAULTS['seed']})")
    parser.add_argument("--threads", type=int, default=None,
                        help="BLAS thread count (default: machine parallelism)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ci-pipeline",
                     description="Score how broadly interesting image types are from like data.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[], help="generate a planted synthetic dataset")
    p.add_argument("--out-embeddings", required=True, help="output CIEM path")
    p.add_argument("--out-likes", required=True, help="output likes CSV path")
    p.add_argument("--out-truth", default=None, help="output ground-truth JSON path")
    p.add_argument("--n-topics", type=int, required=True)
    p.add_argument("--dim", type=int, required=True, help="embedding dimension")
    p.add_argument("--n-users", type=int, required=True)
    p.add_argument("--common-topics", type=int, required=True,
                   help="number of broadly liked topics")
    p.add_argument("--common-like-prob", type=float, default=0.95,
                   help="per-user like probability for common topics (default: 0.95)")
    p.add_argument("--niche-users", type=int, required=True,
                   help="users per niche topic block")
    p.add_argument("--images-per-topic", type=int, required=True)
    p.add_argument("--cluster-std", type=float, default=0.5,
                   help="topic spread (default: 0.5)")
    _add_common(p)

    p = sub.add_parser("fit", help="fit a partition model from embeddings + likes")
    p.add_argument("--embeddings", required=True, help="CIEM input path")
    p.add_argument("--likes", required=True, help="likes CSV path")
    p.add_argument("--out", required=True, help="output model JSON path")
    _add_config_flags(p)
    _add_common(p)

    p = sub.add_parser("train", help="train the fine-grained regressor from a fitted model")
    p.add_argument("--model", required=True, help="partition model JSON path")
    p.add_argument("--embeddings", required=True, help="CIEM input path")
    p.add_argument("--out", required=True, help="output regressor JSON path")
    p.add_argument("--ridge-lambda", type=float, default=None,
                   help="ridge strength (default: 1e-4 * trace(X'X)/d; 0 disables)")
    p.add_argument("--train-fraction", type=float, default=0.8,
                   help="held-in fraction for fitting (default: 0.8)")
    _add_common(p)

    for name, help_text in (
        ("score", "score embeddings with a trained regressor"),
        ("rank", "score embeddings and sort by score descending"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--regressor", required=True, help="regressor JSON path")
        p.add_argument("--embeddings", required=True, help="CIEM input path")
        p.add_argument("--out", default=None, help="output CSV path (default: stdout)")
        p.add_argument("--clamp", action="store_true", help="clamp scores into [0, 1]")
        _add_common(p)

    p = sub.add_parser("group", help="tertile group assignment for a fitted model")
    p.add_argument("--model", required=True, help="partition model JSON path")
    p.add_argument("--out", default=None, help="output JSON path (default: stdout)")
    _add_common(p)

    p = sub.add_parser("attrs", help="per-group attribute table from external labels")
    p.add_argument("--model", required=True, help="partition model JSON path")
    p.add_argument("--attributes", required=True, help="attributes CSV path")
    p.add_argument("--out", default=None, help="output path (default: stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv",
                   help="output format (default: csv)")
    _add_common(p)

    p = sub.add_parser("assign", help="group shares for an external embedding corpus")
    p.add_argument("--model", required=True, help="partition model JSON path")
    p.add_argument("--embeddings", required=True, help="external CIEM path")
    p.add_argument("--out", default=None, help="output JSON path (default: stdout)")
    _add_common(p)

    p = sub.add_parser("report", help="final partitions sorted by CI score")
    p.add_argument("--model", required=True, help="partition model JSON path")
    p.add_argument("--out", default=None, help="output CSV path (default: stdout)")
    _add_common(p)

    return parser


def _setup_logging() -> None:
    level_name = os.environ.get("CI_PIPELINE_LOG", "error").lower()
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        level_name, logging.ERROR
    )
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _pin_threads(threads: int | None) -> None:
    if threads is None:
        return
    if threads < 1:
        raise ValueError(f"--threads must be >= 1, got {threads}")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(threads)


def _resolve_config(args) -> "PipelineConfig":  # noqa: F821
    from .model import PipelineConfig

    file_values = {}
    if args.config:
        with open(args.config) as handle:
            file_values = json.load(handle)
        unknown = set(file_values) - set(DEFAULTS)
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)} in {args.config}")
    values = {}
    for key in DEFAULTS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
        elif key in file_values:
            values[key] = file_values[key]
        else:
            values[key] = DEFAULTS[key]
    return PipelineConfig(**values)


def _emit(text: str, out_path: str | None) -> None:
    if out_path is None:
        sys.stdout.write(text)
    else:
        with open(out_path, "w") as handle:
            handle.write(text)


def _cmd_synth(args) -> int:
    from .storage import write_embeddings, write_likes
    from .synth import SyntheticSpec, generate_synthetic

    spec = SyntheticSpec(
        n_topics=args.n_topics,
        topic_dim=args.dim,
        n_users=args.n_users,
        common_topic_count=args.common_topics,
        common_like_prob=args.common_like_prob,
        niche_users_per_topic=args.niche_users,
        images_per_topic=args.images_per_topic,
        cluster_std=args.cluster_std,
        seed=args.seed if args.seed is not None else DEFAULTS["seed"],
    )
    records, likes, truth = generate_synthetic(spec)
    n_bytes = write_embeddings(records, args.out_embeddings)
    write_likes(likes, args.out_likes)
    if args.out_truth:
        doc = {
            "topic_of": dict(sorted(truth.topic_of.items())),
            "popularity": list(truth.popularity),
        }
        with open(args.out_truth, "w") as handle:
            handle.write(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")
    log.info("synth: %d records (%d bytes), %d users", len(records), n_bytes, likes.total_users)
    return 0


def _cmd_fit(args) -> int:
    import dataclasses

    from .pipeline import fit_partition_model
    from .storage import read_embeddings, read_likes, save_model

    config = _resolve_config(args)
    dim, records = read_embeddings(args.embeddings)
    if args.reducer == "identity" and args.reduced_dim is None:
        config = dataclasses.replace(config, reduced_dim=dim)
    likes = read_likes(args.likes)
    model = fit_partition_model(records, likes, config, reducer_kind=args.reducer)
    save_model(model, args.out)
    lines = ["partition_id,ci"]
    for pid in sorted(model.ci_scores, key=lambda p: (-model.ci_scores[p], p)):
        lines.append(f"{pid},{model.ci_scores[pid]!r}")
    sys.stdout.write("\n".join(lines) + "\n")
    return 0


def _cmd_train(args) -> int:
    from .model import PartitionModel
    from .pipeline import train_regressor
    from .storage import load_model, read_embeddings, save_model

    model = load_model(args.model)
    if not isinstance(model, PartitionModel):
        raise ValueError(f"{args.model} does not contain a partition model")
    _, records = read_embeddings(args.embeddings)
    seed = args.seed if args.seed is not None else DEFAULTS["seed"]
    regressor, r2_train, r2_test = train_regressor(
        model,
        records,
        train_fraction=args.train_fraction,
        ridge_lambda=args.ridge_lambda,
        seed=seed,
    )
    save_model(regressor, args.out)
    sys.stdout.write(f"r2_train,{r2_train!r}\nr2_test,{r2_test!r}\n")
    return 0


def _load_regressor(path):
    from .model import CiRegressor
    from .storage import load_model

    model = load_model(path)
    if not isinstance(model, CiRegressor):
        raise ValueError(f"{path} does not contain a regressor")
    return model


def _cmd_score(args, ranked: bool) -> int:
    from .analysis import rank_images
    from .regress import predict
    from .pipeline import stack_records
    from .storage import read_embeddings

    regressor = _load_regressor(args.regressor)
    _, records = read_embeddings(args.embeddings)
    lines = ["image_id,score"]
    if ranked:
        for image_id, score in rank_images(regressor, records, clamp=args.clamp):
            lines.append(f"{image_id},{score!r}")
    else:
        _, X = stack_records(records)
        scores = predict(regressor, X, clamp=args.clamp)
        for record, score in zip(records, scores):
            lines.append(f"{record.image_id},{float(score)!r}")
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def _load_partition_model(path):
    from .model import PartitionModel
    from .storage import load_model

    model = load_model(path)
    if not isinstance(model, PartitionModel):
        raise ValueError(f"{path} does not contain a partition model")
    return model


def _cmd_group(args) -> int:
    from .analysis import groups_for_model

    model = _load_partition_model(args.model)
    groups = groups_for_model(model)
    doc = {
        "schema_version": 1,
        "kind": "group_assignment",
        "group_of": {str(pid): g for pid, g in sorted(groups.group_of.items())},
        "boundaries": list(groups.boundaries),
    }
    _emit(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n", args.out)
    return 0


def _cmd_attrs(args) -> int:
    from .analysis import attribute_table, groups_for_model
    from .storage import read_attributes

    model = _load_partition_model(args.model)
    attributes = read_attributes(args.attributes)
    groups = groups_for_model(model)
    final_of = {img: model.leaf_to_final[leaf] for img, leaf in model.assignment.items()}
    table = attribute_table(attributes, groups, final_of)
    if args.format == "json":
        doc = {
            "rows": {
                name: {"comm": c, "inter": i, "subj": s, "delta": d}
                for name, (c, i, s, d) in table.rows.items()
            },
            "numeric_rows": {
                name: {
                    group: None if q is None else {"q25": q[0], "q50": q[1], "q75": q[2]}
                    for group, q in per_group.items()
                }
                for name, per_group in table.numeric_rows.items()
            },
        }
        _emit(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n", args.out)
    else:
        lines = ["attribute,comm,inter,subj,delta"]
        for name, (c, i, s, d) in table.rows.items():
            lines.append(f"{name},{c!r},{i!r},{s!r},{d!r}")
        _emit("\n".join(lines) + "\n", args.out)
    return 0


def _cmd_assign(args) -> int:
    from .analysis import assign_external
    from .storage import read_embeddings

    model = _load_partition_model(args.model)
    _, records = read_embeddings(args.embeddings)
    shares, _ = assign_external(model, records)
    doc = {
        "total": len(records),
        "shares": {
            group: {
                "count": int(frac * len(records)),
                "numerator": frac.numerator,
                "denominator": frac.denominator,
                "fraction": float(frac),
            }
            for group, frac in shares.items()
        },
    }
    _emit(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n", args.out)
    return 0


def _cmd_report(args) -> int:
    from collections import Counter

    model = _load_partition_model(args.model)
    counts = Counter(model.leaf_to_final[leaf] for leaf in model.assignment.values())
    lines = ["partition_id,ci,images"]
    for pid in sorted(model.ci_scores, key=lambda p: (-model.ci_scores[p], p)):
        lines.append(f"{pid},{model.ci_scores[pid]!r},{counts[pid]}")
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _setup_logging()
    try:
        _pin_threads(args.threads)
        if args.command == "synth":
            return _cmd_synth(args)
        if args.command == "fit":
            return _cmd_fit(args)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "score":
            return _cmd_score(args, ranked=False)
        if args.command == "rank":
            return _cmd_score(args, ranked=True)
        if args.command == "group":
            return _cmd_group(args)
        if args.command == "attrs":
            return _cmd_attrs(args)
        if args.command == "assign":
            return _cmd_assign(args)
        if args.command == "report":
            return _cmd_report(args)
        raise ValueError(f"unhandled command {args.command!r}")
    except Exception as exc:  # noqa: BLE001 - boundary: everything becomes JSON
        from .errors import PipelineError

        if isinstance(exc, (PipelineError, OSError, ValueError, json.JSONDecodeError)):
            print(json.dumps({"error": str(exc)}), file=sys.stderr)
            log.debug("command failed", exc_info=True)
            return 1
        raise


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
