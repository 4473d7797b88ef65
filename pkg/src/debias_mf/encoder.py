"""Convolutional text encoder with hand-written backpropagation.

Two instantiations share this code: the item-latent model (output_dim = d)
and the weight head used for bias correction (output_dim = 1).  The
``average`` variant swaps convolution + pooling for a plain mean of
embeddings (FastText-like); everything else is identical.

Forward pipeline (conv variant): embedding lookup -> per-window 1-D
convolution -> tanh -> max-over-time pooling -> concatenate -> dense layer.
Gradients flow only through each filter's argmax position, so the backward
pass caches those positions instead of whole feature maps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "EncoderParams",
    "EncoderOutput",
    "init_params",
    "forward",
    "backward",
    "forward_corpus",
    "backward_corpus",
    "save_params",
    "load_params",
]

VARIANTS = ("conv", "average")

_CHUNK = 128  # items per batched forward/backward block


@dataclass
class EncoderParams:
    """Trainable arrays for one encoder instance."""

    variant: str
    embedding: np.ndarray                 # |vocab| x e
    conv_w: dict = field(default_factory=dict)   # window -> (f, window, e)
    conv_b: dict = field(default_factory=dict)   # window -> (f,)
    dense_w: np.ndarray = None            # k x pooled_dim
    dense_b: np.ndarray = None            # (k,)

    @property
    def windows(self):
        return tuple(sorted(self.conv_w))

    @property
    def output_dim(self) -> int:
        return len(self.dense_b)

    @property
    def embed_dim(self) -> int:
        return self.embedding.shape[1]

    def _arrays(self):
        yield self.embedding
        for w in self.windows:
            yield self.conv_w[w]
            yield self.conv_b[w]
        yield self.dense_w
        yield self.dense_b

    def zeros_like(self) -> "EncoderParams":
        return EncoderParams(
            variant=self.variant,
            embedding=np.zeros_like(self.embedding),
            conv_w={w: np.zeros_like(a) for w, a in self.conv_w.items()},
            conv_b={w: np.zeros_like(a) for w, a in self.conv_b.items()},
            dense_w=np.zeros_like(self.dense_w),
            dense_b=np.zeros_like(self.dense_b),
        )

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            variant=self.variant,
            embedding=self.embedding.copy(),
            conv_w={w: a.copy() for w, a in self.conv_w.items()},
            conv_b={w: a.copy() for w, a in self.conv_b.items()},
            dense_w=self.dense_w.copy(),
            dense_b=self.dense_b.copy(),
        )

    def iadd_scaled(self, other: "EncoderParams", alpha: float) -> None:
        """In-place self += alpha * other."""
        for a, b in zip(self._arrays(), other._arrays()):
            a += alpha * b

    def dot(self, other: "EncoderParams") -> float:
        return float(sum(np.vdot(a, b) for a, b in zip(self._arrays(), other._arrays())))

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self._arrays()])

    def with_flat(self, vec: np.ndarray) -> "EncoderParams":
        """Copy of self with parameters replaced by the flat vector."""
        out = self.copy()
        pos = 0
        for a in out._arrays():
            a[...] = vec[pos:pos + a.size].reshape(a.shape)
            pos += a.size
        assert pos == len(vec)
        return out

    def finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self._arrays())


@dataclass
class EncoderOutput:
    """Forward result plus what backward needs (sequence, pooled, argmax)."""

    value: np.ndarray
    sequence: np.ndarray
    pooled: np.ndarray
    argmax: dict  # window -> (f,) positions; empty for the average variant


def init_params(vocab_size: int, output_dim: int, embed_dim: int = 50,
                windows=(3, 4, 5), filters: int = 50, variant: str = "conv",
                seed: int = 0, scale: float = 0.05) -> EncoderParams:
    """Uniform [-scale, scale] initialization; the pad embedding row starts at zero."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown encoder variant {variant!r}")
    rng = np.random.default_rng(seed)

    def draw(*shape):
        return rng.uniform(-scale, scale, size=shape)

    embedding = draw(vocab_size, embed_dim)
    embedding[0] = 0.0
    if variant == "conv":
        conv_w = {w: draw(filters, w, embed_dim) for w in sorted(windows)}
        conv_b = {w: draw(filters) for w in sorted(windows)}
        pooled_dim = filters * len(windows)
    else:
        conv_w, conv_b = {}, {}
        pooled_dim = embed_dim
    return EncoderParams(
        variant=variant,
        embedding=embedding,
        conv_w=conv_w,
        conv_b=conv_b,
        dense_w=draw(output_dim, pooled_dim),
        dense_b=draw(output_dim),
    )


# ---------------------------------------------------------------------------
# Single-sequence forward / backward
# ---------------------------------------------------------------------------

def forward(params: EncoderParams, sequence) -> EncoderOutput:
    """Deterministic forward pass over one token-id sequence."""
    seq = np.asarray(sequence, dtype=np.int64)
    if seq.ndim != 1:
        raise ValueError("sequence must be one-dimensional")
    emb = params.embedding[seq]  # L x e

    if params.variant == "average":
        pooled = emb.mean(axis=0)
        argmax = {}
    else:
        wmax = max(params.windows)
        if len(seq) < wmax:
            raise ValueError(f"sequence length {len(seq)} is shorter than the "
                             f"largest window {wmax}; pad before encoding")
        parts, argmax = [], {}
        for w in params.windows:
            x = sliding_window_view(emb, w, axis=0).transpose(0, 2, 1)  # T x w x e
            z = np.tensordot(x, params.conv_w[w], axes=([1, 2], [1, 2])) + params.conv_b[w]
            h = np.tanh(z)  # T x f
            am = h.argmax(axis=0)
            argmax[w] = am
            parts.append(h[am, np.arange(h.shape[1])])
        pooled = np.concatenate(parts)

    value = params.dense_w @ pooled + params.dense_b
    return EncoderOutput(value=value, sequence=seq, pooled=pooled, argmax=argmax)


def backward(params: EncoderParams, output: EncoderOutput,
             upstream: np.ndarray) -> EncoderParams:
    """Exact parameter gradients of ``upstream . forward(params, seq)``."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != output.value.shape:
        raise ValueError(f"upstream gradient has shape {upstream.shape}, "
                         f"expected {output.value.shape}")
    grads = params.zeros_like()
    grads.dense_w += np.outer(upstream, output.pooled)
    grads.dense_b += upstream
    d_pooled = params.dense_w.T @ upstream

    seq = output.sequence
    emb = params.embedding[seq]
    d_emb = np.zeros_like(emb)

    if params.variant == "average":
        d_emb += d_pooled[None, :] / len(seq)
    else:
        filters = len(params.conv_b[params.windows[0]])
        for wi, w in enumerate(params.windows):
            dp = d_pooled[wi * filters:(wi + 1) * filters]
            h = output.pooled[wi * filters:(wi + 1) * filters]
            dz = dp * (1.0 - h ** 2)  # tanh'
            pos = output.argmax[w][:, None] + np.arange(w)[None, :]  # f x w
            seg = emb[pos]  # f x w x e
            grads.conv_w[w] += dz[:, None, None] * seg
            grads.conv_b[w] += dz
            np.add.at(d_emb, pos, dz[:, None, None] * params.conv_w[w])

    np.add.at(grads.embedding, seq, d_emb)
    return grads


# ---------------------------------------------------------------------------
# Batched corpus forward / backward
# ---------------------------------------------------------------------------

@dataclass
class CorpusCache:
    pooled: np.ndarray   # N x pooled_dim
    argmax: dict         # window -> N x f


def forward_corpus(params: EncoderParams, sequences: np.ndarray):
    """Forward over all rows of an (N, L) id matrix; returns (values, cache)."""
    n, length = sequences.shape
    values = np.empty((n, params.output_dim))
    pooled_all = np.empty((n, params.dense_w.shape[1]))
    argmax_all = {w: np.empty((n, len(params.conv_b[w])), dtype=np.int64)
                  for w in params.windows}
    if params.variant == "conv" and length < max(params.windows):
        raise ValueError("corpus sequences shorter than the largest window")

    for lo in range(0, n, _CHUNK):
        hi = min(lo + _CHUNK, n)
        emb = params.embedding[sequences[lo:hi]]  # B x L x e
        if params.variant == "average":
            pooled = emb.mean(axis=1)
        else:
            parts = []
            for w in params.windows:
                x = sliding_window_view(emb, w, axis=1).transpose(0, 1, 3, 2)  # B,T,w,e
                b, t = x.shape[0], x.shape[1]
                z = x.reshape(b * t, -1) @ params.conv_w[w].reshape(len(params.conv_b[w]), -1).T
                h = np.tanh(z.reshape(b, t, -1) + params.conv_b[w])
                am = h.argmax(axis=1)  # B x f
                argmax_all[w][lo:hi] = am
                parts.append(np.take_along_axis(h, am[:, None, :], axis=1)[:, 0, :])
            pooled = np.concatenate(parts, axis=1)
        pooled_all[lo:hi] = pooled
        values[lo:hi] = pooled @ params.dense_w.T + params.dense_b

    return values, CorpusCache(pooled=pooled_all, argmax=argmax_all)


def backward_corpus(params: EncoderParams, sequences: np.ndarray,
                    cache: CorpusCache, upstream: np.ndarray) -> EncoderParams:
    """Gradients summed over all corpus rows."""
    n = sequences.shape[0]
    if upstream.shape != (n, params.output_dim):
        raise ValueError(f"upstream gradient has shape {upstream.shape}, "
                         f"expected {(n, params.output_dim)}")
    grads = params.zeros_like()
    grads.dense_w += upstream.T @ cache.pooled
    grads.dense_b += upstream.sum(axis=0)
    d_pooled = upstream @ params.dense_w  # N x pooled_dim

    for lo in range(0, n, _CHUNK):
        hi = min(lo + _CHUNK, n)
        seqs = sequences[lo:hi]
        emb = params.embedding[seqs]
        d_emb = np.zeros_like(emb)
        if params.variant == "average":
            d_emb += d_pooled[lo:hi, None, :] / sequences.shape[1]
        else:
            filters = len(params.conv_b[params.windows[0]])
            rows = np.arange(hi - lo)[:, None, None]
            for wi, w in enumerate(params.windows):
                sl = slice(wi * filters, (wi + 1) * filters)
                dp = d_pooled[lo:hi, sl]
                h = cache.pooled[lo:hi, sl]
                dz = dp * (1.0 - h ** 2)  # B x f
                pos = cache.argmax[w][lo:hi][:, :, None] + np.arange(w)  # B,f,w
                seg = emb[rows, pos]  # B,f,w,e
                grads.conv_w[w] += np.einsum("bf,bfwe->fwe", dz, seg)
                grads.conv_b[w] += dz.sum(axis=0)
                np.add.at(d_emb, (rows, pos), dz[:, :, None, None] * params.conv_w[w])
        np.add.at(grads.embedding, seqs, d_emb)
    return grads


# ---------------------------------------------------------------------------
# Serialization: JSON header line + float64 blob
# ---------------------------------------------------------------------------

def save_params(params: EncoderParams, path, seed=None) -> None:
    header = {
        "variant": params.variant,
        "vocab_size": params.embedding.shape[0],
        "embed_dim": params.embed_dim,
        "windows": list(params.windows),
        "filters": len(params.conv_b[params.windows[0]]) if params.windows else 0,
        "output_dim": params.output_dim,
        "seed": seed,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for a in params._arrays():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_params(path) -> EncoderParams:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        blob = np.frombuffer(fh.read(), dtype="<f8")
    windows = tuple(header["windows"])
    filters = header["filters"]
    vocab, e, k = header["vocab_size"], header["embed_dim"], header["output_dim"]
    pooled_dim = filters * len(windows) if header["variant"] == "conv" else e

    shapes = [(vocab, e)]
    for w in windows:
        shapes += [(filters, w, e), (filters,)]
    shapes += [(k, pooled_dim), (k,)]

    arrays, pos = [], 0
    for shape in shapes:
        size = int(np.prod(shape))
        arrays.append(blob[pos:pos + size].reshape(shape).copy())
        pos += size
    if pos != len(blob):
        raise ValueError(f"{path}: parameter blob has {len(blob)} values, expected {pos}")

    conv_w = {w: arrays[1 + 2 * i] for i, w in enumerate(windows)}
    conv_b = {w: arrays[2 + 2 * i] for i, w in enumerate(windows)}
    return EncoderParams(variant=header["variant"], embedding=arrays[0],
                         conv_w=conv_w, conv_b=conv_b,
                         dense_w=arrays[-2], dense_b=arrays[-1])
