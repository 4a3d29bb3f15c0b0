"""Diagonal Fisher information estimated from squared cross-entropy gradients.

The unit of averaging is the per-batch mean-loss gradient: each batch
contributes the elementwise square of its gradient, and the score is the
mean over batches. Scores are accumulated and stored in float64 so that
later rank-based selection survives extreme rescaling.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Optional

import numpy as np

from . import autodiff as ad
from .errors import InputError, NumericError
from .rng import substream
from .vit import ViTModel, classify, forward


@dataclass
class FisherScores:
    """Per-parameter nonnegative importance values plus the sample budget used."""

    scores: Dict[str, np.ndarray]
    sample_count: int

    def congruent_with(self, other: "FisherScores") -> bool:
        if self.scores.keys() != other.scores.keys():
            return False
        return all(self.scores[n].shape == other.scores[n].shape for n in self.scores)

    def scaled(self, factor: float) -> "FisherScores":
        return FisherScores({n: s * factor for n, s in self.scores.items()}, self.sample_count)

    @classmethod
    def zeros_like(cls, other: "FisherScores") -> "FisherScores":
        return cls({n: np.zeros_like(s) for n, s in other.scores.items()}, 0)


def accumulate_squared_gradients(
    params: Dict[str, ad.Tensor],
    batch_loss: Callable[[object], ad.Tensor],
    batches: Iterable,
) -> FisherScores:
    """Mean over batches of the squared batch-mean loss gradient.

    batch_loss must build a fresh scalar loss from one batch; gradients
    are zeroed between batches so squares never mix.
    """
    accum = {n: np.zeros(p.shape, dtype=np.float64) for n, p in params.items()}
    num_batches = 0
    num_samples = 0
    for batch in batches:
        for p in params.values():
            p.zero_grad()
        loss = batch_loss(batch)
        ad.backward(loss)
        for name, p in params.items():
            grad = p.grad if p.grad is not None else np.zeros(p.shape)
            if not np.isfinite(grad).all():
                raise NumericError(f"non-finite gradient for parameter {name!r}")
            g = grad.astype(np.float64)
            accum[name] += g * g
        num_batches += 1
        num_samples += _batch_size(batch)
    if num_batches == 0:
        raise InputError("no batches to accumulate")
    return FisherScores({n: a / num_batches for n, a in accum.items()}, num_samples)


def _batch_size(batch) -> int:
    target = batch[1] if isinstance(batch, tuple) else batch
    try:
        return len(target)
    except TypeError:
        return 1


def estimate_fim(
    model: ViTModel,
    dataset,
    num_batches: int,
    batch_size: int,
    seed: int,
    replacement: bool = False,
    loss_scale: float = 1.0,
) -> FisherScores:
    """Score every model parameter on a dataset (no refinement plan active).

    Batches are drawn without replacement from a seeded shuffle unless
    replacement is requested; num_batches * batch_size must then fit in
    the dataset.
    """
    n = len(dataset.labels)
    if n == 0:
        raise InputError("cannot estimate Fisher scores on an empty dataset")
    if num_batches < 1 or batch_size < 1:
        raise InputError("num_batches and batch_size must be positive")
    rng = substream(seed, "fim-batches")
    if replacement:
        picks = rng.integers(0, n, size=(num_batches, batch_size))
    else:
        if num_batches * batch_size > n:
            raise InputError(
                f"{num_batches} x {batch_size} samples requested from {n} examples; "
                "pass replacement=True to sample with replacement"
            )
        perm = rng.permutation(n)
        picks = perm[: num_batches * batch_size].reshape(num_batches, batch_size)

    def batch_loss(idx):
        trace = forward(model, dataset.images[idx], plan=None)
        loss = ad.cross_entropy(classify(trace), dataset.labels[idx])
        if loss_scale != 1.0:
            loss = ad.scale(loss, loss_scale)
        return loss

    return accumulate_squared_gradients(model.params, batch_loss, picks)


def merge_scores(a: FisherScores, b: FisherScores) -> FisherScores:
    """Sample-count-weighted mean of two shards' scores."""
    if not a.congruent_with(b):
        raise InputError("cannot merge Fisher scores over different registries")
    if b.sample_count == 0:
        return FisherScores({n: s.copy() for n, s in a.scores.items()}, a.sample_count)
    if a.sample_count == 0:
        return FisherScores({n: s.copy() for n, s in b.scores.items()}, b.sample_count)
    total = a.sample_count + b.sample_count
    wa = a.sample_count / total
    wb = b.sample_count / total
    merged = {n: wa * a.scores[n] + wb * b.scores[n] for n in a.scores}
    return FisherScores(merged, total)
