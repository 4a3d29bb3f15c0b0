"""Token refinement: keep the tokens the [CLS] query attends to, merge the rest.

At a refining layer the current sequence is scored by the head-averaged
[CLS] attention row, the top floor(rho * n) tokens survive in their
original order, and the remainder collapses into one attention-weighted
average token appended at the end. Refinement is progressive: a merged
token from an earlier layer competes like any other token later on.

Functions accept both a single sequence ``[1 + n, d]`` and a batch
``[B, 1 + n, d]``; row 0 is always [CLS].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .autodiff import (
    Tensor,
    concat,
    gather_rows,
    index_select,
    mean,
    reshape,
    weighted_row_mean,
)
from .errors import ConfigurationError, InputError
from .rng import substream

PLACEMENT_MODES = ("sparse", "dense", "random", "explicit")

# Per-token [CLS] attention mass; shape [n] or [B, n] over non-[CLS] tokens.
TokenScores = Tensor


@dataclass(frozen=True)
class RefinePlan:
    """Which layers refine the token sequence, and how aggressively."""

    layers: tuple
    rho: float
    placement_mode: str = "explicit"

    def __post_init__(self):
        layers = tuple(int(i) for i in self.layers)
        object.__setattr__(self, "layers", layers)
        if any(b <= a for a, b in zip(layers, layers[1:])):
            raise ConfigurationError(f"refine layers must be strictly increasing, got {layers}")
        if any(i < 0 for i in layers):
            raise ConfigurationError(f"refine layer indices must be >= 0, got {layers}")
        if not (0.0 < self.rho <= 1.0):
            raise ConfigurationError(f"select rate must lie in (0, 1], got {self.rho}")
        if self.placement_mode not in PLACEMENT_MODES:
            raise ConfigurationError(
                f"unknown placement mode {self.placement_mode!r}; expected one of {PLACEMENT_MODES}"
            )

    def to_dict(self) -> dict:
        return {
            "layers": list(self.layers),
            "rho": self.rho,
            "placement_mode": self.placement_mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RefinePlan":
        return cls(tuple(d["layers"]), float(d["rho"]), str(d["placement_mode"]))


def keep_count(rho: float, n: int) -> int:
    """floor(rho * n), guarded against float noise just below an integer."""
    return int(math.floor(rho * n + 1e-9))


def cls_attention_row(attention: Tensor) -> Tensor:
    """Head-averaged [CLS] query row of an attention tensor, full length.

    attention: [B, h, T, T] or [h, T, T]; result [B, T] or [T], summing
    to 1 per sample (the [CLS] self-attention mass is included).
    """
    row = index_select(attention, attention.ndim - 2, [0])
    squeezed = reshape(row, row.shape[:-2] + row.shape[-1:])
    return mean(squeezed, squeezed.ndim - 2)


def cls_attention_scores(attention: Tensor) -> TokenScores:
    """[CLS] attention row restricted to non-[CLS] tokens, head-averaged."""
    row = cls_attention_row(attention)
    t = row.shape[-1]
    return index_select(row, row.ndim - 1, list(range(1, t)))


def _score_array(scores) -> np.ndarray:
    return scores.data if isinstance(scores, Tensor) else np.asarray(scores)


def select_tokens(scores, rho: float, n: int) -> np.ndarray:
    """Indices of the floor(rho * n) highest-scoring tokens, in original order.

    Ties break toward the lower index. Returns [k] or [B, k] int indices.
    """
    arr = _score_array(scores)
    if arr.shape[-1] != n:
        raise InputError(f"got {arr.shape[-1]} scores for {n} tokens")
    k = keep_count(rho, n)
    if k < 1:
        raise ConfigurationError(
            f"select rate {rho} keeps floor({rho} * {n}) = {k} tokens; need at least 1"
        )
    order = np.argsort(-arr, axis=-1, kind="stable")
    return np.sort(order[..., :k], axis=-1)


def merge_tokens(scores, tokens: Tensor, discarded) -> Tensor:
    """Attention-weighted average of the discarded token rows.

    tokens: [..., n, d] non-[CLS] rows; discarded: index array [..., m],
    m >= 1. Weights below 1e-12 total fall back to the plain mean.
    """
    discarded = np.asarray(discarded, dtype=np.int64)
    if discarded.shape[-1] == 0:
        raise InputError("empty discarded set; caller must skip merging")
    rows = gather_rows(tokens, discarded)
    weights = _gather_scores(scores, discarded)
    return weighted_row_mean(rows, weights)


def _gather_scores(scores, idx: np.ndarray) -> Tensor:
    arr = scores if isinstance(scores, Tensor) else Tensor(np.asarray(scores))
    column = reshape(arr, arr.shape + (1,))
    picked = gather_rows(column, idx)
    return reshape(picked, picked.shape[:-1])


def refine(hidden: Tensor, scores, rho: float) -> Tensor:
    """Refined sequence: [CLS], kept tokens in order, merged token last.

    hidden: [1 + n, d] or [B, 1 + n, d] with [CLS] at row 0. When nothing
    is discarded (floor(rho * n) == n) the input is returned unchanged
    and no merged token is appended.
    """
    refined, _, _ = refine_with_indices(hidden, scores, rho)
    return refined


def refine_with_indices(hidden: Tensor, scores, rho: float):
    """Like refine() but also returns (kept, discarded) token index arrays."""
    n = hidden.shape[-2] - 1
    kept = select_tokens(scores, rho, n)
    k = kept.shape[-1]
    if k == n:
        empty = np.zeros(kept.shape[:-1] + (0,), dtype=np.int64)
        return hidden, kept, empty

    arr = _score_array(scores)
    order = np.argsort(-arr, axis=-1, kind="stable")
    discarded = np.sort(order[..., k:], axis=-1)

    cls_row = index_select(hidden, hidden.ndim - 2, [0])
    kept_rows = gather_rows(hidden, kept + 1)
    dropped_rows = gather_rows(hidden, discarded + 1)
    merged = weighted_row_mean(dropped_rows, _gather_scores(scores, discarded))
    refined = concat([cls_row, kept_rows, merged], axis=hidden.ndim - 2)
    return refined, kept, discarded


def plan_refining_layers(
    layer_weights,
    num_refine_layers: int,
    mode: str,
    seed: Optional[int] = None,
    rho: float = 0.95,
    explicit_layers: Optional[Sequence[int]] = None,
) -> RefinePlan:
    """Place refining layers by layer importance (Eq. 4 weights).

    sparse picks the layers with the smallest importance weights, dense the
    largest; ties resolve toward the deeper layer. random draws from a
    seeded stream. Layer 0 is never auto-selected: tokens must attend once
    before their scores mean anything. explicit passes a caller list
    through validation.
    """
    w = np.asarray(getattr(layer_weights, "w", layer_weights), dtype=np.float64)
    num_layers = w.shape[0]
    if mode not in PLACEMENT_MODES:
        raise ConfigurationError(f"unknown placement mode {mode!r}")
    if mode == "explicit":
        if explicit_layers is None:
            raise ConfigurationError("explicit placement requires a layer list")
        layers = tuple(int(i) for i in explicit_layers)
        if any(i >= num_layers for i in layers):
            raise ConfigurationError(
                f"explicit refine layers {layers} exceed model depth {num_layers}"
            )
        return RefinePlan(layers, rho, "explicit")

    if num_refine_layers >= num_layers:
        raise ConfigurationError(
            f"cannot refine {num_refine_layers} of {num_layers} layers"
        )
    eligible = list(range(1, num_layers))
    if mode == "sparse":
        ranked = sorted(eligible, key=lambda l: (w[l], -l))
    elif mode == "dense":
        ranked = sorted(eligible, key=lambda l: (-w[l], -l))
    else:  # random
        rng = substream(0 if seed is None else seed, "refine-plan")
        ranked = list(rng.choice(eligible, size=num_refine_layers, replace=False))
    chosen = tuple(sorted(int(l) for l in ranked[:num_refine_layers]))
    return RefinePlan(chosen, rho, mode)


def planned_token_counts(num_tokens: int, num_layers: int, plan: Optional[RefinePlan]) -> list:
    """Input sequence length (incl. [CLS]) of every layer under a plan."""
    planned = set(plan.layers) if plan is not None else set()
    if planned and max(planned) >= num_layers:
        raise ConfigurationError(
            f"plan refers to layer {max(planned)} of a {num_layers}-layer model"
        )
    t = num_tokens + 1
    counts = []
    for layer in range(num_layers):
        counts.append(t)
        if layer in planned:
            n = t - 1
            k = keep_count(plan.rho, n)
            if k < 1:
                raise ConfigurationError(
                    f"select rate {plan.rho} keeps no tokens at layer {layer} ({n} tokens)"
                )
            if k < n:
                t = 1 + k + 1
    return counts
