"""Command-line harness tying ingestion, training and experiments together.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Heavy imports happen after ``--threads`` is applied so the BLAS thread caps
take effect.
"""

from __future__ import annotations

import argparse
import json
import os
import sys


class _UsageError(Exception):
    pass


VARIANT_NAMES = ("mf", "mf_plus", "convmf", "convmf_plus", "ftmf", "ftmf_plus")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="debias-mf",
                     description="Bias-corrected weighted matrix factorization")
    parser.add_argument("--threads", type=int,
                        default=int(os.environ.get("DEBIAS_MF_THREADS", "0") or 0),
                        help="cap BLAS/internal threads (default: DEBIAS_MF_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load a ratings file, print stats, emit CSV")
    p.add_argument("dataset_pos", nargs="?", metavar="FILE", help="ratings file")
    p.add_argument("--dataset", help="ratings file (alternative to positional)")
    p.add_argument("--format", choices=["ml100k", "ml1m", "csv"], default="ml100k")
    p.add_argument("--keep-list", help="optional raw item id keep-list")
    p.add_argument("--out", help="write canonical user,item,rating CSV here")

    p = sub.add_parser("synth", help="generate a synthetic MNAR dataset")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-sd", type=float, default=0.0)
    p.add_argument("--propensity", default="0.5",
                   help="comma-separated levels, e.g. '0.3,0.5,0.8'")
    p.add_argument("--group-sizes", default=None,
                   help="comma-separated item counts per level (default: even)")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("fit-sam", help="fit bias-correction weights from text")
    p.add_argument("--dataset", required=True, help="canonical ratings CSV")
    p.add_argument("--corpus", required=True, help="item_id<TAB>text documents file")
    p.add_argument("--objective", choices=["spectral", "frobenius"],
                   default="spectral")
    p.add_argument("--seq-length", type=int, default=300)
    p.add_argument("--vocab-size", type=int, default=36000)
    p.add_argument("--learning-rate", type=float, default=1.0)
    p.add_argument("--max-iters", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train", help="train one model variant")
    p.add_argument("--dataset", required=True, help="canonical ratings CSV")
    p.add_argument("--variant", required=True, choices=VARIANT_NAMES)
    p.add_argument("--corpus", help="item_id<TAB>text documents file")
    p.add_argument("--train-fraction", type=float,
                   help="split before training and keep the rest as test")
    p.add_argument("--d", type=int, default=50)
    p.add_argument("--lambda-u", type=float, default=100.0)
    p.add_argument("--lambda-v", type=float, default=10.0)
    p.add_argument("--max-sweeps", type=int, default=200)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--objective", choices=["spectral", "frobenius"],
                   default="spectral")
    p.add_argument("--seq-length", type=int, default=300)
    p.add_argument("--vocab-size", type=int, default=36000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("evaluate", help="RMSE of a trained model on a test CSV")
    p.add_argument("--model", required=True, help="directory written by train")
    p.add_argument("--test", required=True, help="canonical ratings CSV")
    p.add_argument("--clip-predictions", action="store_true",
                   help="clip predictions to the training rating range")

    for name, help_text in [("table2", "overall comparison experiment"),
                            ("sweep", "sparsity sweep experiment")]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment JSON config")
        p.add_argument("--variant", choices=VARIANT_NAMES,
                       help="run only this variant")
        p.add_argument("--seed", type=int, help="run only this seed")
        p.add_argument("--fractions", help="comma-separated train fractions")
        p.add_argument("--d", type=int)
        p.add_argument("--lambda-u", type=float)
        p.add_argument("--lambda-v", type=float)
        p.add_argument("--objective", choices=["spectral", "frobenius"])
        p.add_argument("--clip-predictions", action="store_true", default=None)
        p.add_argument("--out", required=True, help="output directory")

    return parser


def _set_threads(n: int) -> None:
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(n)


def _parse_floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise _UsageError(f"not a comma-separated float list: {text!r}")


def _parse_ints(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise _UsageError(f"not a comma-separated int list: {text!r}")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _cmd_ingest(args) -> int:
    from .data import load_keep_list, load_movielens, load_ratings_csv, save_ratings_csv

    args.dataset = args.dataset or args.dataset_pos
    if not args.dataset:
        raise _UsageError("ingest needs a ratings file")
    keep = load_keep_list(args.keep_list) if args.keep_list else None
    if args.format == "csv":
        dataset = load_ratings_csv(args.dataset)
    else:
        dataset = load_movielens(args.dataset, format=args.format, keep_items=keep)
    print(f"m={dataset.num_users} n={dataset.num_items} "
          f"interactions={len(dataset)} density={100 * dataset.density:.4g}%")
    if args.out:
        save_ratings_csv(dataset, args.out)
        print(f"wrote {args.out}")
    return 0


def _cmd_synth(args) -> int:
    import numpy as np

    from .data import PropensityGroundTruth, generate_synthetic, save_synthetic

    levels = _parse_floats(args.propensity)
    if args.group_sizes:
        sizes = _parse_ints(args.group_sizes)
    else:
        sizes = [args.n // len(levels)] * len(levels)
        sizes[0] += args.n - sum(sizes)
    if len(sizes) != len(levels) or sum(sizes) != args.n:
        raise _UsageError("--group-sizes must match --propensity and sum to --n")
    p = np.repeat(np.asarray(levels), sizes)

    dataset, truth = generate_synthetic(args.m, args.n, args.rank,
                                        PropensityGroundTruth(p),
                                        noise_sd=args.noise_sd, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "ratings.csv")
    json_path = os.path.join(args.out, "truth.json")
    save_synthetic(dataset, truth, csv_path, json_path)
    print(f"m={dataset.num_users} n={dataset.num_items} "
          f"interactions={len(dataset)} density={100 * dataset.density:.4g}%")
    print(f"wrote {csv_path} and {json_path}")
    return 0


def _load_corpus(corpus_path, dataset, seq_length, vocab_size):
    from .textprep import build_vocabulary, encode_corpus, load_documents

    documents = load_documents(corpus_path)
    docs = [documents.get(j, "") for j in range(dataset.num_items)]
    vocab = build_vocabulary(docs, max_size=vocab_size)
    return encode_corpus(docs, vocab, seq_length)


def _cmd_fit_sam(args) -> int:
    import numpy as np

    from . import sam
    from .data import IndicatorView, load_ratings_csv
    from .encoder import init_params, save_params

    dataset = load_ratings_csv(args.dataset)
    corpus = _load_corpus(args.corpus, dataset, args.seq_length, args.vocab_size)
    head = init_params(vocab_size=corpus.vocab_size, output_dim=1, seed=args.seed)
    config = sam.SamFitConfig(learning_rate=args.learning_rate,
                              max_iters=args.max_iters,
                              objective=args.objective, seed=args.seed)
    model = sam.fit(head, corpus, IndicatorView.from_dataset(dataset), config)
    os.makedirs(args.out, exist_ok=True)
    sam.save_weights_csv(model, os.path.join(args.out, "weights.csv"))
    save_params(model.head_params, os.path.join(args.out, "weight_head.bin"),
                seed=args.seed)
    first = model.objective_trace[0] if model.objective_trace else float("nan")
    last = model.objective_trace[-1] if model.objective_trace else float("nan")
    print(f"objective: {first:.6g} -> {last:.6g} "
          f"({len(model.objective_trace) - 1} accepted steps)")
    print(f"weights: min={model.per_item_weight.min():.6g} "
          f"median={np.median(model.per_item_weight):.6g} "
          f"max={model.per_item_weight.max():.6g}")
    print(f"wrote {os.path.join(args.out, 'weights.csv')}")
    return 0


def _cmd_train(args) -> int:
    import numpy as np

    from . import factorization as fac
    from . import sam
    from .data import load_ratings_csv, save_ratings_csv, split
    from .encoder import save_params

    dataset = load_ratings_csv(args.dataset)
    test = None
    if args.train_fraction is not None:
        pair = split(dataset, args.train_fraction, args.seed)
        dataset, test = pair.train, pair.test

    corpus = None
    if args.corpus:
        corpus = _load_corpus(args.corpus, dataset, args.seq_length, args.vocab_size)

    config = fac.TrainConfig(
        d=args.d, lambda_u=args.lambda_u, lambda_v=args.lambda_v,
        max_sweeps=args.max_sweeps, val_fraction=args.val_fraction,
        seed=args.seed,
        sam_config=sam.SamFitConfig(objective=args.objective, seed=args.seed))
    state = fac.train(dataset, corpus, config, args.variant)

    os.makedirs(args.out, exist_ok=True)
    np.savetxt(os.path.join(args.out, "factors_u.csv"), state.model.U,
               fmt="%.17g", delimiter=",")
    np.savetxt(os.path.join(args.out, "factors_v.csv"), state.model.V,
               fmt="%.17g", delimiter=",")
    with open(os.path.join(args.out, "trace.csv"), "w", encoding="utf-8") as fh:
        fh.write("sweep,train_loss,val_rmse\n")
        for i, loss in enumerate(state.loss_trace):
            val = (f"{state.val_rmse_trace[i]:.17g}"
                   if i < len(state.val_rmse_trace) else "")
            fh.write(f"{i},{loss:.17g},{val}\n")
    manifest = {
        "variant": args.variant, "d": args.d, "lambda_u": args.lambda_u,
        "lambda_v": args.lambda_v, "seed": args.seed,
        "num_users": dataset.num_users, "num_items": dataset.num_items,
        "sweeps_used": state.sweeps_used, "stopped_early": state.stopped_early,
        "train_rating_min": float(dataset.ratings.min()),
        "train_rating_max": float(dataset.ratings.max()),
    }
    with open(os.path.join(args.out, "model.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    if state.sam_model is not None:
        sam.save_weights_csv(state.sam_model, os.path.join(args.out, "weights.csv"))
    if state.item_encoder is not None:
        save_params(state.item_encoder, os.path.join(args.out, "item_encoder.bin"),
                    seed=args.seed)
    if test is not None:
        save_ratings_csv(test, os.path.join(args.out, "test.csv"))
    print(f"trained {args.variant}: {state.sweeps_used} sweeps, "
          f"final train loss {state.loss_trace[-1]:.6g}")
    if state.val_rmse_trace:
        print(f"best validation RMSE {min(state.val_rmse_trace):.6g}")
    print(f"wrote model files to {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    import numpy as np

    from . import factorization as fac
    from .data import load_ratings_csv
    from .errors import DataError
    from .experiment import evaluate_model

    with open(os.path.join(args.model, "model.json"), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    U = np.loadtxt(os.path.join(args.model, "factors_u.csv"), delimiter=",",
                   ndmin=2)
    V = np.loadtxt(os.path.join(args.model, "factors_v.csv"), delimiter=",",
                   ndmin=2)
    model = fac.FactorModel(U=U, V=V, lambda_u=manifest["lambda_u"],
                            lambda_v=manifest["lambda_v"])
    test = load_ratings_csv(args.test, num_users=manifest["num_users"],
                            num_items=manifest["num_items"])
    if test.num_users > model.num_users or test.num_items > model.num_items:
        raise DataError("test set indexes users/items outside the trained model")
    clip = None
    if args.clip_predictions:
        clip = (manifest["train_rating_min"], manifest["train_rating_max"])
    print(f"rmse={evaluate_model(model, test, clip=clip):.17g}")
    return 0


def _experiment_config(args):
    from . import factorization as fac
    from . import sam
    from .errors import DataError
    from .experiment import ExperimentConfig

    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{args.config}: invalid JSON: {exc}")

    train_raw = dict(raw.get("train", {}))
    sam_raw = dict(train_raw.pop("sam", {}))
    if args.objective:
        sam_raw["objective"] = args.objective
    for flag in ("d", "lambda_u", "lambda_v"):
        value = getattr(args, flag)
        if value is not None:
            train_raw[flag] = value
    if "windows" in train_raw:
        train_raw["windows"] = tuple(train_raw["windows"])

    config = ExperimentConfig(
        datasets=raw.get("datasets", []),
        variants=[args.variant] if args.variant else raw.get("variants", ["mf"]),
        seeds=[args.seed] if args.seed is not None else raw.get("seeds", [0]),
        train_fraction=raw.get("train_fraction", 0.8),
        fractions=(_parse_floats(args.fractions) if args.fractions
                   else raw.get("fractions", [0.2, 0.4, 0.6, 0.8])),
        train=fac.TrainConfig(**train_raw, sam_config=sam.SamFitConfig(**sam_raw)),
        clip_predictions=(args.clip_predictions
                          if args.clip_predictions is not None
                          else raw.get("clip_predictions", False)),
    )
    if not config.datasets:
        raise DataError(f"{args.config}: no datasets configured")
    return config


def _cmd_experiment(args, sweep: bool) -> int:
    from .experiment import (render_table, run_sparsity_sweep, run_table2,
                             write_rows_csv, write_summary_csv, summarize)

    config = _experiment_config(args)
    rows, skipped = (run_sparsity_sweep if sweep else run_table2)(config)
    os.makedirs(args.out, exist_ok=True)
    write_rows_csv(rows, os.path.join(args.out, "results.csv"))
    medians, improve = summarize(rows)
    write_summary_csv(medians, improve, os.path.join(args.out, "summary.csv"))
    table = render_table(rows)
    with open(os.path.join(args.out, "table.txt"), "w", encoding="utf-8") as fh:
        fh.write(table)
    print(table)
    for name, fraction, seed, reason in skipped:
        print(f"skipped {name} fraction={fraction} seed={seed}: {reason}",
              file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)

    if args.threads and args.threads > 0:
        _set_threads(args.threads)

    from .errors import DataError, NumericalError

    handlers = {
        "ingest": _cmd_ingest,
        "synth": _cmd_synth,
        "fit-sam": _cmd_fit_sam,
        "train": _cmd_train,
        "evaluate": _cmd_evaluate,
        "table2": lambda a: _cmd_experiment(a, sweep=False),
        "sweep": lambda a: _cmd_experiment(a, sweep=True),
    }
    try:
        return handlers[args.command](args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, ValueError, FileNotFoundError, IsADirectoryError,
            PermissionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
