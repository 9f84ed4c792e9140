"""Command-line entry point: synth, train, cluster, eval, export-*, sweep.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import data_io
from .clustering import SPECTRAL_MAX_N, kmeans, spectral_cluster, symmetrize
from .errors import ContractError, FormatError, NumericError
from .metrics import clustering_accuracy, nmi
from .model import ModelParams, embed, infer_affinity
from .trainer import TrainConfig, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _float_list(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("no values given")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a union-of-subspaces dataset")
    p.add_argument("--spec", required=True, help="JSON with SynthSpec fields")
    p.add_argument("--out", required=True)
    p.add_argument("--labels", required=True)

    p = sub.add_parser("train", help="train a model on an embedding file")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log")

    p = sub.add_parser("cluster", help="assign cluster labels with a trained model")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--method", choices=("spectral", "kmeans"), required=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--k", type=_positive_int)
    group.add_argument("--k-max", type=_positive_int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-n", type=_positive_int, default=SPECTRAL_MAX_N,
                   help="largest n accepted by the spectral path")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="ACC/NMI of predicted labels against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)

    p = sub.add_parser("export-affinity", help="write the learned affinity as CSV")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--sample", type=_positive_int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--symmetrize", action="store_true", help="export (|A|+|A^T|)/2 instead of A")
    p.add_argument("--out", required=True)

    p = sub.add_parser("export-scatter", help="write a 2-D PCA scatter of the latents")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("sweep", help="retrain over a grid of one loss parameter")
    p.add_argument("--param", choices=("lambda_reg", "t"), required=True)
    p.add_argument("--values", type=_float_list, required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--method", choices=("spectral", "kmeans"), default="spectral")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    return parser


def _load_model(path) -> ModelParams:
    return ModelParams.from_dict(data_io.read_checkpoint(path))


def _cluster(params: ModelParams, U: np.ndarray, method: str, k: int | None, k_max: int,
             seed: int, max_n: int = SPECTRAL_MAX_N):
    if method == "kmeans":
        return kmeans(embed(params, U), k, seed=seed)
    if len(U) > max_n:
        raise ContractError(f"{len(U)} rows exceed the spectral cap {max_n}; "
                            "subsample or use --method kmeans")
    _, A = infer_affinity(params, U)
    return spectral_cluster(symmetrize(A), k=k, seed=seed, k_max=k_max, max_n=max_n)


def cmd_synth(args) -> int:
    fields = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    unknown = set(fields) - set(data_io.SynthSpec.__dataclass_fields__)
    if unknown:
        raise ContractError(f"{args.spec}: unknown SynthSpec fields {sorted(unknown)}")
    spec = data_io.SynthSpec(**fields)
    X, labels = data_io.synth_subspace_dataset(spec)
    data_io.write_embeddings(args.out, X)
    data_io.write_labels(args.labels, labels)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = TrainConfig.from_json(args.config)
    U = data_io.read_embeddings(args.embeddings)
    _, report = train(U, cfg, checkpoint=args.out, log_csv=args.log)
    last = report.epochs[-1] if report.epochs else None
    if last is not None:
        print(f"trained {len(report.epochs)} epochs: loss {last.total_loss:.6f}, tau {last.tau:.4f}",
              file=sys.stderr)
    return EXIT_OK


def cmd_cluster(args) -> int:
    if args.method == "kmeans" and args.k is None:
        raise UsageError("cluster: --method kmeans needs --k")
    if args.method == "spectral" and args.k is not None and args.k < 2:
        raise UsageError("cluster: spectral clustering needs --k >= 2")
    if args.k is None and args.k_max < 2:
        raise UsageError("cluster: --k-max must be at least 2")
    U = data_io.read_embeddings(args.embeddings)
    params = _load_model(args.model)
    result = _cluster(params, U, args.method, args.k, args.k_max, args.seed, args.max_n)
    data_io.write_labels(args.out, result.labels)
    print(f"k={result.k}", file=sys.stderr)
    return EXIT_OK


def evaluate(pred, truth) -> dict:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    return {
        "acc": clustering_accuracy(pred, truth),
        "nmi": nmi(pred, truth),
        "n": int(len(truth)),
        "k_pred": int(len(np.unique(pred))),
        "k_true": int(len(np.unique(truth))),
    }


def cmd_eval(args) -> int:
    pred = data_io.read_labels(args.pred)
    truth = data_io.read_labels(args.truth)
    if len(pred) != len(truth):
        raise ContractError(f"{len(pred)} predicted labels vs {len(truth)} true labels")
    print(json.dumps(evaluate(pred, truth)))
    return EXIT_OK


def cmd_export_affinity(args) -> int:
    U = data_io.read_embeddings(args.embeddings)
    params = _load_model(args.model)
    if args.sample is not None:
        if args.sample < 2 or args.sample > len(U):
            raise ContractError(f"--sample must lie in [2, {len(U)}], got {args.sample}")
        rng = np.random.default_rng(args.seed)
        idx = np.sort(rng.choice(len(U), size=args.sample, replace=False))
        U = U[idx]
        data_io.write_labels(f"{args.out}.indices.txt", idx)
    _, A = infer_affinity(params, U)
    data_io.export_affinity_csv(args.out, symmetrize(A) if args.symmetrize else A)
    return EXIT_OK


def cmd_export_scatter(args) -> int:
    U = data_io.read_embeddings(args.embeddings)
    labels = data_io.read_labels(args.labels)
    params = _load_model(args.model)
    data_io.export_pca_scatter(embed(params, U), labels, args.out)
    return EXIT_OK


def run_sweep(U, truth, cfg: TrainConfig, param: str, values, method: str = "spectral",
              seed: int = 0) -> list[tuple[float, float, float]]:
    """Retrain once per value; cluster with k set to the true class count."""
    k = len(np.unique(truth))
    rows = []
    for value in values:
        run_cfg = dataclasses.replace(cfg, loss=dataclasses.replace(cfg.loss, **{param: value}))
        params, _ = train(U, run_cfg)
        result = _cluster(params, U, method, k, k, seed)
        rows.append((value, clustering_accuracy(result.labels, truth), nmi(result.labels, truth)))
    return rows


def cmd_sweep(args) -> int:
    cfg = TrainConfig.from_json(args.config)
    U = data_io.read_embeddings(args.embeddings)
    truth = data_io.read_labels(args.truth)
    if len(truth) != len(U):
        raise ContractError(f"{len(truth)} labels for {len(U)} embeddings")
    rows = run_sweep(U, truth, cfg, args.param, args.values, args.method, args.seed)
    body = "".join(f"{v!r},{acc!r},{score!r}\n" for v, acc, score in rows)
    data_io.atomic_write(args.out, "value,acc,nmi\n" + body)
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "cluster": cmd_cluster,
    "eval": cmd_eval,
    "export-affinity": cmd_export_affinity,
    "export-scatter": cmd_export_scatter,
    "sweep": cmd_sweep,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, ContractError, OSError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
