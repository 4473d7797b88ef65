"""Weighted matrix factorization with encoder-regularized item factors.

The training loop alternates exact ridge solves for user and item factors
(each block minimizes the loss exactly, so the per-sweep loss trace is
non-increasing) with a guarded gradient block for the item text encoder.
Item weights come from a fitted bias-correction model and stay frozen
during factor training.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import encoder as enc
from . import kernels, sam
from .data import IndicatorView, RatingDataset
from .errors import DataError, NumericalError
from .textprep import Corpus

__all__ = [
    "VARIANTS",
    "FactorModel",
    "TrainConfig",
    "TrainState",
    "predict",
    "predict_pairs",
    "loss_eq1",
    "weighted_risk",
    "loss_eq5",
    "update_users",
    "update_items",
    "update_item_encoder",
    "train",
]

VARIANTS = ("mf", "mf_plus", "convmf", "convmf_plus", "ftmf", "ftmf_plus")


@dataclass
class FactorModel:
    """Latent factors U (m x d), V (n x d) and their ridge weights."""

    U: np.ndarray
    V: np.ndarray
    lambda_u: float
    lambda_v: float

    @property
    def d(self) -> int:
        return self.U.shape[1]

    @property
    def num_users(self) -> int:
        return self.U.shape[0]

    @property
    def num_items(self) -> int:
        return self.V.shape[0]


@dataclass
class TrainConfig:
    d: int = 50
    lambda_u: float = 100.0
    lambda_v: float = 10.0
    max_sweeps: int = 200
    patience: int = 5
    val_fraction: float = 0.1
    init_scale: float = 0.05
    encoder_steps: int = 3
    embed_dim: int = 50
    filters: int = 50
    windows: tuple = (3, 4, 5)
    seed: int = 0
    sam_config: sam.SamFitConfig = field(default_factory=sam.SamFitConfig)


@dataclass
class TrainState:
    """Model plus everything produced while fitting it."""

    model: FactorModel
    variant: str
    weights: np.ndarray
    sam_model: sam.SamModel | None = None
    item_encoder: enc.EncoderParams | None = None
    loss_trace: list = field(default_factory=list)
    val_rmse_trace: list = field(default_factory=list)
    sweeps_used: int = 0
    stopped_early: bool = False


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def predict(model: FactorModel, user: int, item: int) -> float:
    """Inner product of one user row and one item row."""
    if not (0 <= user < model.num_users):
        raise IndexError(f"user index {user} out of range [0, {model.num_users})")
    if not (0 <= item < model.num_items):
        raise IndexError(f"item index {item} out of range [0, {model.num_items})")
    return float(model.U[user] @ model.V[item])


def predict_pairs(model: FactorModel, users, items, clip=None) -> np.ndarray:
    """Vectorized predictions; ``clip=(lo, hi)`` optionally bounds them."""
    preds = np.einsum("ij,ij->i", model.U[users], model.V[items])
    if clip is not None:
        preds = np.clip(preds, clip[0], clip[1])
    return preds


def _residuals(model: FactorModel, train: RatingDataset) -> np.ndarray:
    return train.ratings - predict_pairs(model, train.users, train.items)


def loss_eq1(model: FactorModel, train: RatingDataset) -> float:
    """Squared observed error plus plain L2 on both factor matrices."""
    res = _residuals(model, train)
    return float(res @ res
                 + model.lambda_u * np.sum(model.U ** 2)
                 + model.lambda_v * np.sum(model.V ** 2))


def weighted_risk(model: FactorModel, train: RatingDataset, weights) -> float:
    """Bias-corrected data term: sum of w_j * (r_ij - u_i.v_j)^2."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (train.num_items,):
        raise ValueError(f"weights must have length {train.num_items}")
    if (weights < 1.0).any():
        raise ValueError("bias-correction weights must all be >= 1")
    res = _residuals(model, train)
    return float(np.sum(weights[train.items] * res ** 2))


def _item_reg(model: FactorModel, item_targets) -> float:
    diff = model.V if item_targets is None else model.V - item_targets
    return model.lambda_v * float(np.sum(diff ** 2))


def _full_loss(model, train, weights, item_targets) -> float:
    return (weighted_risk(model, train, weights)
            + model.lambda_u * float(np.sum(model.U ** 2))
            + _item_reg(model, item_targets))


def loss_eq5(state: TrainState, train: RatingDataset, corpus: Corpus) -> float:
    """Complete loss: weighted risk + user L2 + item pull toward encoder outputs."""
    if state.item_encoder is None:
        raise ValueError("loss requires a fitted item encoder")
    targets, _ = enc.forward_corpus(state.item_encoder, corpus.sequences)
    return _full_loss(state.model, train, state.weights, targets)


# ---------------------------------------------------------------------------
# Alternating closed-form updates
# ---------------------------------------------------------------------------

def update_users(model: FactorModel, train: RatingDataset, weights) -> np.ndarray:
    """Exact minimizer of the loss over U with V fixed."""
    indptr, item_idx, ratings = train.by_user()
    new_u = kernels.solve_rows(indptr, item_idx, ratings,
                               np.asarray(weights)[item_idx], model.V,
                               model.lambda_u)
    model.U = new_u
    return new_u


def update_items(model: FactorModel, train: RatingDataset, weights,
                 item_targets=None) -> np.ndarray:
    """Exact minimizer over V with U fixed; rows with no data go to their target."""
    indptr, user_idx, ratings = train.by_item()
    weights = np.asarray(weights, dtype=np.float64)
    entry_w = np.repeat(weights, np.diff(indptr))
    side = None if item_targets is None else model.lambda_v * item_targets
    new_v = kernels.solve_rows(indptr, user_idx, ratings, entry_w, model.U,
                               model.lambda_v, side=side)
    model.V = new_v
    return new_v


def update_item_encoder(state: TrainState, corpus: Corpus, steps: int,
                        learning_rate: float):
    """Gradient steps pulling encoder outputs toward V, with block rollback.

    Runs ``steps`` plain gradient steps; if the encoder regularization term
    did not decrease, rolls the block back and halves the learning rate, up
    to 5 times.  Returns (accepted_learning_rate, flagged).
    """
    if state.item_encoder is None:
        raise ValueError("variant has no item encoder")
    model = state.model
    seqs = corpus.sequences

    def reg_term(params):
        targets, cache = enc.forward_corpus(params, seqs)
        diff = targets - model.V
        return model.lambda_v * float(np.sum(diff ** 2)), targets, cache

    before, _, _ = reg_term(state.item_encoder)
    lr = learning_rate
    for _ in range(6):  # initial try plus 5 halvings
        params = state.item_encoder.copy()
        diverged = False
        for _ in range(steps):
            targets, cache = enc.forward_corpus(params, seqs)
            upstream = 2.0 * model.lambda_v * (targets - model.V)
            grads = enc.backward_corpus(params, seqs, cache, upstream)
            params.iadd_scaled(grads, -lr)
            if not params.finite():
                diverged = True
                break
        if not diverged:
            after, _, _ = reg_term(params)
            if after <= before:
                state.item_encoder = params
                return lr, False
        lr *= 0.5
    return lr, True  # keep the previous parameters, flag the stall


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _holdout(train: RatingDataset, fraction: float, rng) -> tuple:
    """Random validation holdout (no coverage guarantee needed)."""
    size = len(train)
    k = int(round(fraction * size))
    if k == 0:
        return train, None
    perm = rng.permutation(size)
    val_mask = np.zeros(size, dtype=bool)
    val_mask[perm[:k]] = True

    def subset(mask):
        return RatingDataset(num_users=train.num_users, num_items=train.num_items,
                             users=train.users[mask], items=train.items[mask],
                             ratings=train.ratings[mask])

    return subset(~val_mask), subset(val_mask)


def _rmse_on(model: FactorModel, dataset: RatingDataset) -> float:
    res = _residuals(model, dataset)
    return float(np.sqrt(np.mean(res ** 2)))


def train(train_data: RatingDataset, corpus: Corpus | None, config: TrainConfig,
          variant: str = "mf") -> TrainState:
    """Fit one model variant.

    ``mf`` uses unit weights and no encoder; ``convmf``/``ftmf`` add the
    conv/average item encoder; the ``*_plus`` variants first fit the
    bias-correction weights on the training indicator (independently of U
    and V) and then keep them frozen.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    needs_corpus = variant != "mf"
    if needs_corpus and corpus is None:
        raise DataError(f"variant {variant!r} requires an item corpus")
    if corpus is not None and corpus.num_items != train_data.num_items:
        raise DataError(f"corpus has {corpus.num_items} items, "
                        f"dataset has {train_data.num_items}")

    seeds = np.random.SeedSequence(config.seed).spawn(4)
    rng_init = np.random.default_rng(seeds[0])
    rng_val = np.random.default_rng(seeds[1])

    m, n = train_data.num_users, train_data.num_items
    model = FactorModel(
        U=rng_init.uniform(-config.init_scale, config.init_scale, (m, config.d)),
        V=rng_init.uniform(-config.init_scale, config.init_scale, (n, config.d)),
        lambda_u=config.lambda_u,
        lambda_v=config.lambda_v,
    )

    sam_model = None
    weights = np.ones(n)
    if variant.endswith("_plus"):
        head = enc.init_params(
            vocab_size=corpus.vocab_size, output_dim=1,
            embed_dim=config.embed_dim, windows=config.windows,
            filters=config.filters, variant="conv",
            seed=int(seeds[2].generate_state(1)[0]), scale=config.init_scale)
        sam_model = sam.fit(head, corpus, IndicatorView.from_dataset(train_data),
                            config.sam_config)
        weights = sam_model.per_item_weight

    item_encoder = None
    if variant.startswith("convmf") or variant.startswith("ftmf"):
        kind = "conv" if variant.startswith("convmf") else "average"
        item_encoder = enc.init_params(
            vocab_size=corpus.vocab_size, output_dim=config.d,
            embed_dim=config.embed_dim, windows=config.windows,
            filters=config.filters, variant=kind,
            seed=int(seeds[3].generate_state(1)[0]), scale=config.init_scale)

    fit_data, val_data = _holdout(train_data, config.val_fraction, rng_val)
    state = TrainState(model=model, variant=variant, weights=weights,
                       sam_model=sam_model, item_encoder=item_encoder)

    # encoder block step size; scaled so a dense-bias step cannot overshoot
    enc_lr = 1.0 / (2.0 * config.lambda_v * max(n, 1)) if item_encoder is not None else 0.0

    targets = None
    if item_encoder is not None:
        targets, _ = enc.forward_corpus(item_encoder, corpus.sequences)

    best_val = np.inf
    best_snapshot = None
    stall = 0
    for sweep in range(config.max_sweeps):
        update_users(model, fit_data, weights)
        update_items(model, fit_data, weights, item_targets=targets)
        if item_encoder is not None:
            enc_lr, _ = update_item_encoder(state, corpus,
                                            config.encoder_steps, enc_lr)
            targets, _ = enc.forward_corpus(state.item_encoder, corpus.sequences)

        loss = _full_loss(model, fit_data, weights, targets)
        if not np.isfinite(loss):
            raise NumericalError(f"training loss diverged at sweep {sweep}")
        state.loss_trace.append(loss)
        state.sweeps_used = sweep + 1

        if val_data is not None:
            val_rmse = _rmse_on(model, val_data)
            state.val_rmse_trace.append(val_rmse)
            if val_rmse < best_val - 1e-6:
                best_val = val_rmse
                best_snapshot = (model.U.copy(), model.V.copy())
                stall = 0
            else:
                stall += 1
                if stall >= config.patience:
                    state.stopped_early = True
                    break

    if best_snapshot is not None:
        model.U, model.V = best_snapshot
    return state
