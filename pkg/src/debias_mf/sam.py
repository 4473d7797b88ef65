"""Text-conditioned bias-correction weights fitted by spectral-norm descent.

The weight model assigns every item a weight w_j = 1 + softplus(z_j) where
z_j is the scalar output of a text encoder head, so the w >= 1 constraint
holds by construction and weights depend on item text only (one weight per
column).  Fitting minimizes the largest singular value of the masked
residual, the matrix holding w_j - 1 at observed entries and -1 elsewhere;
training never looks at ratings or factors.

A Frobenius objective (sum of squared residual entries) is available as a
config option; note it is minimized by w = 1 and performs no propensity
correction, which is exactly why the spectral objective exists.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import encoder as enc
from .data import IndicatorView
from .errors import NumericalError
from .textprep import Corpus

__all__ = [
    "SamModel",
    "SamFitConfig",
    "MaskedResidual",
    "SpectralResult",
    "weights_from_text",
    "spectral_norm",
    "objective_and_gradient",
    "fit",
    "save_weights_csv",
]

OBJECTIVES = ("spectral", "frobenius")


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class SamModel:
    """Fitted weight head plus the per-item weights it induces."""

    head_params: enc.EncoderParams
    per_item_weight: np.ndarray
    objective_trace: list = field(default_factory=list)
    converged: bool = True


@dataclass
class SamFitConfig:
    learning_rate: float = 1.0
    max_iters: int = 300
    tol: float = 1e-6
    armijo: float = 1e-4
    objective: str = "spectral"
    power_tol: float = 1e-8
    power_max_iters: int = 1000
    seed: int = 0


def _head_weights(head: enc.EncoderParams, corpus: Corpus):
    values, cache = enc.forward_corpus(head, corpus.sequences)
    z = values[:, 0]
    return 1.0 + _softplus(z), z, cache


def weights_from_text(head: enc.EncoderParams, corpus: Corpus) -> np.ndarray:
    """Per-item weights 1 + softplus(head(x_j)); always >= 1."""
    w, _, _ = _head_weights(head, corpus)
    return w


# ---------------------------------------------------------------------------
# Masked residual and its spectral norm
# ---------------------------------------------------------------------------

@dataclass
class MaskedResidual:
    """The m x n matrix with w_j - 1 at observed entries and -1 elsewhere.

    Stored matrix-free: all -1 plus a sparse correction of w_j at observed
    positions, so each matvec costs O(nnz + m + n).
    """

    num_users: int
    num_items: int
    users: np.ndarray
    items: np.ndarray
    weights: np.ndarray

    @classmethod
    def from_indicator(cls, indicator: IndicatorView, weights) -> "MaskedResidual":
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (indicator.num_items,):
            raise ValueError(f"weights must have length {indicator.num_items}")
        return cls(num_users=indicator.num_users, num_items=indicator.num_items,
                   users=indicator.users, items=indicator.items, weights=weights)

    @property
    def shape(self):
        return (self.num_users, self.num_items)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        correction = np.bincount(self.users,
                                 weights=self.weights[self.items] * x[self.items],
                                 minlength=self.num_users)
        return correction - x.sum()

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        colsum = np.bincount(self.items, weights=y[self.users],
                             minlength=self.num_items)
        return self.weights * colsum - y.sum()

    def to_dense(self) -> np.ndarray:
        out = np.full(self.shape, -1.0)
        out[self.users, self.items] = self.weights[self.items] - 1.0
        return out


class _DenseOperator:
    def __init__(self, a):
        self.a = np.asarray(a, dtype=np.float64)
        self.shape = self.a.shape

    def matvec(self, x):
        return self.a @ x

    def rmatvec(self, y):
        return self.a.T @ y


@dataclass
class SpectralResult:
    value: float
    u: np.ndarray
    v: np.ndarray
    converged: bool
    iterations: int


def spectral_norm(residual, tol: float = 1e-8, max_iters: int = 1000,
                  seed: int = 0) -> SpectralResult:
    """Top singular triple by power iteration on the Gram operator.

    Accepts a MaskedResidual or a plain 2-D array.  Converged once
    successive value estimates differ by less than ``tol``; otherwise the
    best estimate is returned flagged as non-converged.
    """
    op = _DenseOperator(residual) if isinstance(residual, np.ndarray) else residual
    m, n = op.shape
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    u = np.zeros(m)
    value = np.inf
    for it in range(1, max_iters + 1):
        y = op.matvec(v)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return SpectralResult(0.0, np.zeros(m), np.zeros(n), True, it)
        u = y / ny
        z = op.rmatvec(u)
        nz = np.linalg.norm(z)
        if nz == 0.0:
            return SpectralResult(0.0, np.zeros(m), np.zeros(n), True, it)
        v = z / nz
        if abs(nz - value) < tol:
            return SpectralResult(float(nz), u, v, True, it)
        value = nz
    return SpectralResult(float(value), u, v, False, max_iters)


# ---------------------------------------------------------------------------
# Objective and gradient
# ---------------------------------------------------------------------------

def _objective_from_weights(w, indicator, config):
    """Objective value and its gradient with respect to the weights."""
    m, n = indicator.num_users, indicator.num_items
    if config.objective == "frobenius":
        counts = indicator.item_counts()
        value = float(np.sum(counts * (w - 1.0) ** 2) + (m * n - indicator.nnz))
        return value, 2.0 * counts * (w - 1.0), True
    residual = MaskedResidual.from_indicator(indicator, w)
    res = spectral_norm(residual, tol=config.power_tol,
                        max_iters=config.power_max_iters, seed=config.seed)
    # d||M||_S / dM = u1 v1^T; M depends on w_j only at observed entries
    colsum_u = np.bincount(indicator.items, weights=res.u[indicator.users],
                           minlength=n)
    return res.value, colsum_u * res.v, res.converged


def objective_and_gradient(head: enc.EncoderParams, corpus: Corpus,
                           indicator: IndicatorView,
                           config: SamFitConfig | None = None):
    """Weight objective and its gradient in the head parameters.

    Returns (value, gradients, converged); a non-converged spectral norm
    still yields a usable (flagged) gradient.
    """
    config = config or SamFitConfig()
    if config.objective not in OBJECTIVES:
        raise ValueError(f"unknown objective {config.objective!r}")
    if corpus.num_items != indicator.num_items:
        raise ValueError("corpus and indicator disagree on the number of items")
    w, z, cache = _head_weights(head, corpus)
    value, dw, converged = _objective_from_weights(w, indicator, config)
    dz = dw * _sigmoid(z)  # through w = 1 + softplus(z)
    grads = enc.backward_corpus(head, corpus.sequences, cache, dz[:, None])
    return value, grads, converged


def fit(head: enc.EncoderParams, corpus: Corpus, indicator: IndicatorView,
        config: SamFitConfig | None = None) -> SamModel:
    """Plain gradient descent with backtracking on the weight objective.

    The w >= 1 constraint holds by reparameterization, so no projection is
    needed; steps that fail the Armijo test are halved and the objective is
    non-increasing over accepted steps.
    """
    config = config or SamFitConfig()
    if config.objective not in OBJECTIVES:
        raise ValueError(f"unknown objective {config.objective!r}")
    head = head.copy()
    trace = []

    if config.learning_rate == 0.0 or config.max_iters == 0:
        w = weights_from_text(head, corpus)
        return SamModel(head_params=head, per_item_weight=w,
                        objective_trace=trace, converged=False)

    def evaluate(params):
        w, z, cache = _head_weights(params, corpus)
        value, dw, _ = _objective_from_weights(w, indicator, config)
        return w, z, cache, value, dw

    w, z, cache, value, dw = evaluate(head)
    trace.append(value)
    step = config.learning_rate
    for _ in range(config.max_iters):
        if not np.isfinite(value):
            raise NumericalError("weight objective diverged (NaN or Inf)")
        grads = enc.backward_corpus(head, corpus.sequences, cache,
                                    (dw * _sigmoid(z))[:, None])
        if not grads.finite():
            raise NumericalError("weight gradient diverged (NaN or Inf)")
        gnorm2 = grads.dot(grads)
        if gnorm2 == 0.0:
            break
        accepted = False
        while step > 1e-15 * config.learning_rate:
            trial = head.copy()
            trial.iadd_scaled(grads, -step)
            w_t, z_t, cache_t, val_t, dw_t = evaluate(trial)
            if val_t <= value - config.armijo * step * gnorm2:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        decrease = value - val_t
        head, w, z, cache, value, dw = trial, w_t, z_t, cache_t, val_t, dw_t
        trace.append(value)
        step = min(step * 2.0, 1e8)
        if decrease < config.tol:
            break

    return SamModel(head_params=head, per_item_weight=w, objective_trace=trace,
                    converged=len(trace) > 1)


def save_weights_csv(model: SamModel, path) -> None:
    """Write (item_index, weight) rows at full precision."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("item,weight\n")
        for j, w in enumerate(model.per_item_weight):
            fh.write(f"{j},{w:.17g}\n")
