"""Temporal four-chunk pooling and the softmax classifier head."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeMismatchError, Tensor
from .adapter import glorot

N_CHUNKS = 4


def chunk_bounds(n_steps: int) -> list[tuple[int, int]]:
    """Four contiguous chunks covering n_steps; sizes differ by at most one,
    earlier chunks absorb the remainder."""
    if n_steps < N_CHUNKS:
        raise ShapeMismatchError(f"aggregation needs at least {N_CHUNKS} steps, got {n_steps}")
    base, rem = divmod(n_steps, N_CHUNKS)
    sizes = [base + 1] * rem + [base] * (N_CHUNKS - rem)
    bounds = []
    start = 0
    for size in sizes:
        bounds.append((start, start + size))
        start += size
    return bounds


def aggregate(embeddings: Tensor) -> Tensor:
    """(d_enc, T) -> concatenated per-chunk time means, a (4 * d_enc,) vector."""
    pooled = [embeddings[:, lo:hi].mean(axis=1) for lo, hi in chunk_bounds(embeddings.shape[1])]
    return ad.concat(pooled, axis=0)


class ClassifierHead:
    """Linear layer over the pooled features with softmax probabilities."""

    def __init__(self, d_enc: int, n_classes: int, rng: np.random.Generator):
        self.d_in = N_CHUNKS * d_enc
        self.n_classes = n_classes
        self._params = {
            "weight": Tensor(glorot(rng, (self.d_in, n_classes)), requires_grad=True),
            "bias": Tensor(np.zeros(n_classes), requires_grad=True),
        }

    @classmethod
    def from_params(cls, d_enc: int, n_classes: int,
                    params: dict[str, Tensor]) -> "ClassifierHead":
        head = cls.__new__(cls)
        head.d_in = N_CHUNKS * d_enc
        head.n_classes = n_classes
        head._params = dict(params)
        return head

    def parameters(self) -> dict[str, Tensor]:
        return dict(self._params)

    def logits(self, pooled: Tensor) -> Tensor:
        out = pooled.reshape(1, self.d_in) @ self._params["weight"] + self._params["bias"]
        return out.reshape(self.n_classes)


def classify(pooled: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Class probabilities softmax(W x + b); rows sum to one."""
    logits = pooled.reshape(1, weight.shape[0]) @ weight + bias
    return ad.softmax(logits.reshape(weight.shape[1]), axis=0)


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    """-log p(label), computed through a numerically stable log-softmax."""
    if label not in range(logits.shape[-1]):
        raise ValueError(f"label {label} out of range for {logits.shape[-1]} classes")
    return -ad.log_softmax(logits, axis=-1)[int(label)]
