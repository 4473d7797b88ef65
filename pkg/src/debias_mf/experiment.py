"""Evaluation metrics and the experiment harness.

Covers the overall-RMSE comparison table, the sparsity sweep, and synthetic
oracle studies where ground-truth propensities and factors are known.  For
synthetic datasets with ground truth the reported error is measured against
the noiseless complete matrix on entries outside the training split, which
is the comparison the oracle makes possible; real datasets use held-out
test RMSE.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from statistics import median

import numpy as np

from . import factorization as fac
from .data import (PropensityGroundTruth, RatingDataset, TrueFactors, biscale,
                   generate_synthetic, load_movielens, load_keep_list,
                   load_ratings_csv, load_synthetic, split)
from .errors import DataError
from .textprep import Corpus, build_vocabulary, encode_corpus, load_documents

__all__ = [
    "ExperimentConfig",
    "ResultRow",
    "PreparedDataset",
    "rmse",
    "evaluate_model",
    "oracle_rmse",
    "improvement",
    "make_grouped_synthetic",
    "prepare_dataset",
    "run_table2",
    "run_sparsity_sweep",
    "write_rows_csv",
    "render_table",
]

BASELINE_OF = {"mf_plus": "mf", "convmf_plus": "convmf", "ftmf_plus": "ftmf"}


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def rmse(predictions, test: RatingDataset) -> float:
    """Root mean squared error of per-triple predictions on a test set."""
    if len(test) == 0:
        raise DataError("cannot compute RMSE on an empty test set")
    predictions = np.asarray(predictions, dtype=np.float64)
    if predictions.shape != (len(test),):
        raise ValueError(f"expected {len(test)} predictions, got {predictions.shape}")
    return float(np.sqrt(np.mean((test.ratings - predictions) ** 2)))


def evaluate_model(model: fac.FactorModel, test: RatingDataset, clip=None) -> float:
    return rmse(fac.predict_pairs(model, test.users, test.items, clip=clip), test)


def oracle_rmse(model: fac.FactorModel, truth: TrueFactors,
                exclude: RatingDataset | None = None) -> float:
    """RMSE against the noiseless complete matrix, outside ``exclude``."""
    full = truth.full_matrix()
    pred = model.U @ model.V.T
    mask = np.ones(full.shape, dtype=bool)
    if exclude is not None:
        mask[exclude.users, exclude.items] = False
    diff = (full - pred)[mask]
    return float(np.sqrt(np.mean(diff ** 2)))


def improvement(best_baseline: float, best_plus: float) -> float:
    """Relative RMSE improvement of the weighted models, in percent."""
    if best_baseline <= 0 or best_plus <= 0:
        raise ValueError("RMSE values must be positive")
    return 100.0 * (best_baseline - best_plus) / best_baseline


# ---------------------------------------------------------------------------
# Dataset preparation
# ---------------------------------------------------------------------------

@dataclass
class PreparedDataset:
    name: str
    ratings: RatingDataset
    corpus: Corpus | None = None
    truth: TrueFactors | None = None


def make_grouped_synthetic(m: int, n: int, rank: int, propensity_levels,
                           group_sizes, noise_sd: float, seed: int,
                           seq_length: int = 60) -> PreparedDataset:
    """Synthetic MNAR ratings whose observation rate is tied to item text.

    Items are partitioned into groups; all items in a group share one
    observation probability and one distinctive token, so a text model can
    recover the group structure.
    """
    if len(propensity_levels) != len(group_sizes) or sum(group_sizes) != n:
        raise ValueError("group sizes must partition the items")
    groups = np.repeat(np.arange(len(group_sizes)), group_sizes)
    p = np.asarray(propensity_levels, dtype=np.float64)[groups]
    dataset, truth = generate_synthetic(
        m, n, rank, PropensityGroundTruth(p), noise_sd=noise_sd, seed=seed)

    docs = [" ".join([f"group{g}"] * min(seq_length, 40)) for g in groups]
    vocab = build_vocabulary(docs, max_size=len(group_sizes) + 4)
    corpus = encode_corpus(docs, vocab, seq_length)
    return PreparedDataset(name=f"synthetic-mnar-{seed}", ratings=dataset,
                           corpus=corpus, truth=truth)


def make_readingtime_synthetic(m: int, n: int, rank: int, seed: int,
                               seq_length: int = 60) -> PreparedDataset:
    """Continuous positive 'reading time' values, bi-scaled before use.

    Stand-in for interaction-time data so the normalization path gets
    exercised; it is not a reproduction of any published dataset.
    """
    sizes = [n - 2 * (n // 3), n // 3, n // 3]
    base = make_grouped_synthetic(m, n, rank, [0.9, 0.5, 0.25], sizes,
                                  noise_sd=0.1, seed=seed, seq_length=seq_length)
    raw = np.exp(0.7 * base.ratings.ratings) * 30.0
    skewed = RatingDataset(num_users=m, num_items=n, users=base.ratings.users,
                           items=base.ratings.items, ratings=raw)
    scaled, _ = biscale(skewed, tol=1e-8, max_sweeps=30)
    return PreparedDataset(name=f"synthetic-readingtime-{seed}", ratings=scaled,
                           corpus=base.corpus, truth=None)


def prepare_dataset(spec: dict) -> PreparedDataset:
    """Build a PreparedDataset from one config entry.

    Recognized kinds: ``movielens`` (path + optional documents/keep_list),
    ``csv`` (canonical ratings, optional truth sidecar), ``synthetic`` and
    ``synthetic_readingtime``.
    """
    kind = spec.get("kind", "movielens")
    name = spec.get("name", kind)
    if kind == "movielens":
        keep = load_keep_list(spec["keep_list"]) if spec.get("keep_list") else None
        dataset = load_movielens(spec["path"], format=spec.get("format", "ml100k"),
                                 keep_items=keep)
        corpus = None
        if spec.get("documents"):
            raw_ids = _raw_item_ids(spec["path"], spec.get("format", "ml100k"), keep)
            documents = load_documents(spec["documents"])
            docs = [documents.get(rid, "") for rid in raw_ids]
            vocab = build_vocabulary(docs, max_size=spec.get("vocab_size", 36000))
            corpus = encode_corpus(docs, vocab, spec.get("seq_length", 300))
        return PreparedDataset(name=name, ratings=dataset, corpus=corpus)
    if kind == "csv":
        dataset = load_ratings_csv(spec["path"])
        truth = None
        if spec.get("truth"):
            dataset, truth = load_synthetic(spec["path"], spec["truth"])
        return PreparedDataset(name=name, ratings=dataset, truth=truth)
    if kind == "synthetic":
        return replace(make_grouped_synthetic(
            m=spec.get("m", 400), n=spec.get("n", 60), rank=spec.get("rank", 3),
            propensity_levels=spec.get("propensity_levels", [0.15, 0.45, 0.9]),
            group_sizes=spec.get("group_sizes", None) or _even_sizes(spec.get("n", 60), len(spec.get("propensity_levels", [0.15, 0.45, 0.9]))),
            noise_sd=spec.get("noise_sd", 0.2), seed=spec.get("seed", 0),
            seq_length=spec.get("seq_length", 60)), name=name)
    if kind == "synthetic_readingtime":
        return replace(make_readingtime_synthetic(
            m=spec.get("m", 300), n=spec.get("n", 60), rank=spec.get("rank", 3),
            seed=spec.get("seed", 0), seq_length=spec.get("seq_length", 60)),
            name=name)
    raise DataError(f"unknown dataset kind {kind!r}")


def _even_sizes(n, k):
    sizes = [n // k] * k
    sizes[0] += n - sum(sizes)
    return sizes


def _raw_item_ids(path, format, keep):
    """Sorted raw item ids present in a MovieLens file (after keep-list)."""
    sep = "\t" if format == "ml100k" else "::"
    ids = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                ids.add(int(line.split(sep)[1]))
    if keep is not None:
        ids &= set(keep)
    return sorted(ids)


# ---------------------------------------------------------------------------
# Harness
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    datasets: list
    variants: list = field(default_factory=lambda: ["mf", "mf_plus"])
    seeds: list = field(default_factory=lambda: [0])
    train_fraction: float = 0.8
    fractions: list = field(default_factory=lambda: [0.2, 0.4, 0.6, 0.8])
    train: fac.TrainConfig = field(default_factory=fac.TrainConfig)
    clip_predictions: bool = False

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("need at least one seed")
        for f in list(self.fractions) + [self.train_fraction]:
            if not (0.0 < f < 1.0):
                raise ValueError(f"fractions must be in (0, 1), got {f}")


@dataclass
class ResultRow:
    dataset: str
    variant: str
    fraction: float
    seed: int
    rmse: float
    train_density: float
    sweeps: int
    wall_time: float

    def __post_init__(self):
        if self.rmse < 0:
            raise ValueError("RMSE must be non-negative")


def _train_config_for(config: ExperimentConfig, seed: int) -> fac.TrainConfig:
    sam_cfg = replace(config.train.sam_config, seed=seed)
    return replace(config.train, seed=seed, sam_config=sam_cfg)


def _run_cells(config: ExperimentConfig, prepared, fractions):
    rows, skipped = [], []
    for ds in prepared:
        for fraction in fractions:
            for seed in config.seeds:
                try:
                    pair = split(ds.ratings, fraction, seed)
                except DataError as exc:
                    skipped.append((ds.name, fraction, seed, str(exc)))
                    continue
                clip = None
                if config.clip_predictions:
                    clip = (float(pair.train.ratings.min()),
                            float(pair.train.ratings.max()))
                for variant in config.variants:
                    if variant != "mf" and ds.corpus is None:
                        skipped.append((ds.name, fraction, seed,
                                        f"{variant}: no corpus available"))
                        continue
                    start = time.perf_counter()
                    try:
                        state = fac.train(pair.train, ds.corpus,
                                          _train_config_for(config, seed), variant)
                    except DataError as exc:
                        skipped.append((ds.name, fraction, seed, f"{variant}: {exc}"))
                        continue
                    elapsed = time.perf_counter() - start
                    if ds.truth is not None:
                        err = oracle_rmse(state.model, ds.truth, exclude=pair.train)
                    else:
                        err = evaluate_model(state.model, pair.test, clip=clip)
                    rows.append(ResultRow(
                        dataset=ds.name, variant=variant, fraction=fraction,
                        seed=seed, rmse=err, train_density=pair.train.density,
                        sweeps=state.sweeps_used, wall_time=elapsed))
    return rows, skipped


def run_table2(config: ExperimentConfig, prepared=None):
    """Train every variant on every dataset and seed at one train fraction."""
    prepared = prepared if prepared is not None else [prepare_dataset(s)
                                                      for s in config.datasets]
    return _run_cells(config, prepared, [config.train_fraction])


def run_sparsity_sweep(config: ExperimentConfig, prepared=None):
    """Same cells swept over training fractions."""
    prepared = prepared if prepared is not None else [prepare_dataset(s)
                                                      for s in config.datasets]
    return _run_cells(config, prepared, list(config.fractions))


def summarize(rows):
    """Median RMSE per (dataset, fraction, variant) plus the Improve rows.

    Improve compares the best baseline median against the best weighted
    median, mirroring the published comparison tables.
    """
    cells = {}
    for row in rows:
        cells.setdefault((row.dataset, row.fraction, row.variant), []).append(row.rmse)
    medians = {key: median(vals) for key, vals in cells.items()}

    improve = {}
    groups = sorted({(d, f) for d, f, _ in medians})
    for d, f in groups:
        base = [v for (dd, ff, var), v in medians.items()
                if dd == d and ff == f and not var.endswith("_plus")]
        plus = [v for (dd, ff, var), v in medians.items()
                if dd == d and ff == f and var.endswith("_plus")]
        if base and plus:
            improve[(d, f)] = improvement(min(base), min(plus))
    return medians, improve


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def write_rows_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("dataset,variant,fraction,seed,rmse,train_density,sweeps,wall_time\n")
        for r in rows:
            fh.write(f"{r.dataset},{r.variant},{r.fraction:.17g},{r.seed},"
                     f"{r.rmse:.17g},{r.train_density:.17g},{r.sweeps},"
                     f"{r.wall_time:.17g}\n")


def write_summary_csv(medians, improve, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("dataset,fraction,variant,median_rmse\n")
        for (d, f, v), val in sorted(medians.items()):
            fh.write(f"{d},{f:.17g},{v},{val:.17g}\n")
        for (d, f), val in sorted(improve.items()):
            fh.write(f"{d},{f:.17g},improve_percent,{val:.17g}\n")


def render_table(rows) -> str:
    """Plain-text summary table, one block per dataset."""
    medians, improve = summarize(rows)
    datasets = sorted({d for d, _, _ in medians})
    fractions = sorted({f for _, f, _ in medians})
    variants = []
    for _, _, v in medians:
        if v not in variants:
            variants.append(v)
    variants.sort(key=lambda v: (v.endswith("_plus"), v))

    density = {(r.dataset, r.fraction): r.train_density for r in rows}
    lines = []
    for d in datasets:
        lines.append(f"dataset: {d}")
        header = ["model"] + [f"{f:.0%} ({100 * density[(d, f)]:.2f}%)"
                              for f in fractions if (d, f) in density]
        widths = [max(12, len(h) + 2) for h in header]
        lines.append("".join(h.ljust(w) for h, w in zip(header, widths)))
        for v in variants:
            cells = [v]
            for f in fractions:
                val = medians.get((d, f, v))
                cells.append("-" if val is None else f"{val:.3f}")
            lines.append("".join(c.ljust(w) for c, w in zip(cells, widths)))
        cells = ["improve"]
        for f in fractions:
            val = improve.get((d, f))
            cells.append("-" if val is None else f"{val:.2f}%")
        lines.append("".join(c.ljust(w) for c, w in zip(cells, widths)))
        lines.append("")
    return "\n".join(lines)
