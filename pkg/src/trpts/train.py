"""Masked fine-tuning: gradients are gated by a binary mask before the optimizer.

Frozen entries stay bit-identical forever: their gradients are zeroed
before the optimizer transform, so Adam's moments never leave zero there
and the computed update is exactly 0.0.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, InputError, NumericError
from .refine import RefinePlan
from .rng import substream
from .selection import SelectionMask
from .vit import ViTModel, classify, forward

OPTIMIZERS = ("adam", "sgd")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 10
    batch_size: int = 64
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    final_lr: float = 0.0
    warmup_steps: int = 0
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigurationError(f"learning rate must be positive, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch size must be >= 1, got {self.batch_size}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        if self.warmup_steps < 0 or self.final_lr < 0 or self.weight_decay < 0:
            raise ConfigurationError("warmup_steps, final_lr, and weight_decay must be >= 0")


def cosine_lr(config: TrainConfig, step: int, total_steps: int) -> float:
    """Linear warmup to the base rate, then cosine decay to final_lr.

    The first post-warmup step runs at exactly the base rate and the last
    step at exactly final_lr.
    """
    w = config.warmup_steps
    if step < w:
        return config.learning_rate * (step + 1) / w
    last = total_steps - 1
    progress = 1.0 if last <= w else (step - w) / (last - w)
    return config.final_lr + 0.5 * (config.learning_rate - config.final_lr) * (
        1.0 + math.cos(math.pi * progress)
    )


@dataclass
class TrainState:
    """Model plus optimizer moments, the step counter, and the mask in force."""

    model: ViTModel
    mask: Optional[SelectionMask]
    config: TrainConfig
    total_steps: int
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.mask is not None:
            for name, p in self.model.params.items():
                if name not in self.mask.masks or self.mask.masks[name].shape != p.shape:
                    raise InputError(f"mask is not congruent with parameter {name!r}")
        if self.config.optimizer == "adam" and not self.m:
            self.m = {n: np.zeros(p.shape, dtype=p.dtype) for n, p in self.model.params.items()}
            self.v = {n: np.zeros(p.shape, dtype=p.dtype) for n, p in self.model.params.items()}


def masked_step(state: TrainState, batch: Tuple[np.ndarray, np.ndarray],
                plan: Optional[RefinePlan] = None) -> float:
    """One optimization step on (images, labels); returns the batch loss."""
    images, labels = batch
    cfg = state.config
    lr = cosine_lr(cfg, state.step, state.total_steps)

    model = state.model
    model.zero_grads()
    loss = ad.cross_entropy(classify(forward(model, images, plan=plan)), labels)
    if not np.isfinite(loss.data):
        raise NumericError(f"non-finite loss at step {state.step}")
    ad.backward(loss)

    state.step += 1
    t = state.step
    for name, p in model.params.items():
        g = p.grad if p.grad is not None else np.zeros(p.shape, dtype=p.dtype)
        if cfg.weight_decay:
            g = g + cfg.weight_decay * p.data
        if state.mask is not None:
            g = g * state.mask.masks[name]
        if cfg.optimizer == "sgd":
            p.data -= (lr * g).astype(p.dtype)
        else:
            m = state.m[name]
            v = state.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            m_hat = m / (1.0 - cfg.beta1 ** t)
            v_hat = v / (1.0 - cfg.beta2 ** t)
            p.data -= (lr * m_hat / (np.sqrt(v_hat) + cfg.eps)).astype(p.dtype)
    return float(loss.data)


def evaluate(model: ViTModel, plan: Optional[RefinePlan], dataset,
             batch_size: int = 256) -> float:
    """Top-1 accuracy; argmax ties resolve to the lower class index."""
    n = len(dataset.labels)
    if n == 0:
        raise InputError("cannot evaluate on an empty dataset")
    correct = 0
    with ad.no_grad():
        for start in range(0, n, batch_size):
            idx = slice(start, min(start + batch_size, n))
            logits = classify(forward(model, dataset.images[idx], plan=plan)).data
            correct += int((np.argmax(logits, axis=1) == dataset.labels[idx]).sum())
    return correct / n


def fine_tune(
    model: ViTModel,
    mask: Optional[SelectionMask],
    plan: Optional[RefinePlan],
    train_ds,
    val_ds,
    config: TrainConfig,
) -> Tuple[TrainState, List[dict]]:
    """Run the full schedule; returns final state and per-epoch metrics."""
    n = len(train_ds.labels)
    if n == 0 or len(val_ds.labels) == 0:
        raise InputError("training and validation sets must be nonempty")
    steps_per_epoch = math.ceil(n / config.batch_size)
    state = TrainState(model, mask, config, total_steps=config.epochs * steps_per_epoch)
    rng = substream(config.seed, "batching")

    history: List[dict] = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        losses = []
        last_lr = cosine_lr(config, state.step, state.total_steps)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            last_lr = cosine_lr(config, state.step, state.total_steps)
            losses.append(masked_step(state, (train_ds.images[idx], train_ds.labels[idx]), plan))
        history.append({
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "val_accuracy": evaluate(model, plan, val_ds),
            "lr": last_lr,
        })
    return state, history


def write_metrics_csv(history: List[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "val_accuracy", "lr"])
        writer.writeheader()
        for row in history:
            writer.writerow(row)


def full_mask(model: ViTModel) -> SelectionMask:
    """Everything trainable (the full fine-tuning / pretraining regime)."""
    return SelectionMask({n: np.ones(p.shape, dtype=np.uint8) for n, p in model.params.items()})


def head_only_mask(model: ViTModel) -> SelectionMask:
    """Only the classifier head trainable (linear probing)."""
    masks = {}
    for name, p in model.params.items():
        value = 1 if name.startswith("head.") else 0
        masks[name] = np.full(p.shape, value, dtype=np.uint8)
    return SelectionMask(masks)
