"""Minimal vision transformer with inspectable attention and mid-stack token refinement.

Pre-norm blocks (norm, attention, residual; norm, MLP, residual). The
forward pass records every layer's attention matrix and its head-averaged
[CLS] row, and can hand the sequence to the token refiner after any
block's output. Weight matrices are stored [out_features, in_features],
so a row is one output neuron's input connections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, InputError, UsageError
from .refine import (
    RefinePlan,
    cls_attention_row,
    index_select,
    keep_count,
    refine_with_indices,
)
from .rng import substream, truncated_normal


@dataclass(frozen=True)
class ModelConfig:
    image_height: int = 32
    image_width: int = 32
    channels: int = 1
    patch_size: int = 4
    embed_dim: int = 64
    num_layers: int = 12
    num_heads: int = 4
    mlp_ratio: int = 4
    num_classes: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.image_height % self.patch_size or self.image_width % self.patch_size:
            raise ConfigurationError(
                f"image {self.image_height}x{self.image_width} is not divisible by "
                f"patch size {self.patch_size}"
            )
        if self.embed_dim % self.num_heads:
            raise ConfigurationError(
                f"embed dim {self.embed_dim} is not divisible by {self.num_heads} heads"
            )

    @property
    def grid_rows(self) -> int:
        return self.image_height // self.patch_size

    @property
    def grid_cols(self) -> int:
        return self.image_width // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid_rows * self.grid_cols

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    @property
    def seq_len(self) -> int:
        return self.num_patches + 1

    @property
    def mlp_hidden(self) -> int:
        return self.mlp_ratio * self.embed_dim

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    def to_dict(self) -> dict:
        return {
            "image_height": self.image_height,
            "image_width": self.image_width,
            "channels": self.channels,
            "patch_size": self.patch_size,
            "embed_dim": self.embed_dim,
            "num_layers": self.num_layers,
            "num_heads": self.num_heads,
            "mlp_ratio": self.mlp_ratio,
            "num_classes": self.num_classes,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: int(v) for k, v in d.items()})


class ParamInfo(NamedTuple):
    """Stable identity of one parameter tensor; layer_index -1 = non-block."""

    name: str
    shape: tuple
    layer_index: int


def layer_of(name: str) -> int:
    """Transformer block index encoded in a parameter name, or -1."""
    if name.startswith("block"):
        return int(name.split(".", 1)[0][len("block"):])
    return -1


class ViTModel:
    """Parameter store plus the config that fixes all shapes."""

    def __init__(self, config: ModelConfig, params: Dict[str, Tensor]):
        self.config = config
        self.params = params

    @property
    def dtype(self):
        return self.params["patch.weight"].dtype

    def registry(self) -> List[ParamInfo]:
        return [ParamInfo(n, tuple(p.shape), layer_of(n)) for n, p in self.params.items()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state_arrays(self) -> Dict[str, np.ndarray]:
        return {n: p.data for n, p in self.params.items()}

    def load_state(self, arrays: Dict[str, np.ndarray], skip: tuple = ()) -> None:
        """Copy values in place; shapes must match exactly."""
        for name, param in self.params.items():
            if name in skip:
                continue
            if name not in arrays:
                raise InputError(f"checkpoint is missing parameter {name!r}")
            value = np.asarray(arrays[name], dtype=param.dtype)
            if value.shape != param.shape:
                raise InputError(
                    f"checkpoint shape {value.shape} != model shape {param.shape} for {name!r}"
                )
            param.data = value.copy()


def param_shapes(config: ModelConfig) -> List[ParamInfo]:
    """The full parameter registry a model of this config will carry."""
    d, hidden = config.embed_dim, config.mlp_hidden
    infos = [
        ParamInfo("patch.weight", (d, config.patch_dim), -1),
        ParamInfo("patch.bias", (d,), -1),
        ParamInfo("pos", (config.seq_len, d), -1),
        ParamInfo("cls", (1, d), -1),
    ]
    for i in range(config.num_layers):
        prefix = f"block{i}"
        infos.append(ParamInfo(f"{prefix}.norm1.gain", (d,), i))
        infos.append(ParamInfo(f"{prefix}.norm1.bias", (d,), i))
        for proj in ("q", "k", "v", "o"):
            infos.append(ParamInfo(f"{prefix}.attn.{proj}.weight", (d, d), i))
            infos.append(ParamInfo(f"{prefix}.attn.{proj}.bias", (d,), i))
        infos.append(ParamInfo(f"{prefix}.norm2.gain", (d,), i))
        infos.append(ParamInfo(f"{prefix}.norm2.bias", (d,), i))
        infos.append(ParamInfo(f"{prefix}.mlp.fc1.weight", (hidden, d), i))
        infos.append(ParamInfo(f"{prefix}.mlp.fc1.bias", (hidden,), i))
        infos.append(ParamInfo(f"{prefix}.mlp.fc2.weight", (d, hidden), i))
        infos.append(ParamInfo(f"{prefix}.mlp.fc2.bias", (d,), i))
    infos.append(ParamInfo("norm.gain", (d,), -1))
    infos.append(ParamInfo("norm.bias", (d,), -1))
    infos.append(ParamInfo("head.weight", (config.num_classes, d), -1))
    infos.append(ParamInfo("head.bias", (config.num_classes,), -1))
    return infos


def init_model(config: ModelConfig, dtype=None) -> ViTModel:
    """Seeded init: truncated normal (std 0.02) weights, zero biases, unit gains."""
    rng = substream(config.seed, "init")
    params: Dict[str, Tensor] = {}
    for info in param_shapes(config):
        leaf = info.name.rsplit(".", 1)[-1]
        if leaf == "bias" or info.name.endswith("norm1.bias") or info.name.endswith("norm2.bias"):
            value = np.zeros(info.shape)
        elif leaf == "gain":
            value = np.ones(info.shape)
        else:
            value = truncated_normal(rng, info.shape, std=0.02)
        params[info.name] = ad.parameter(value, dtype=dtype)
    return ViTModel(config, params)


def patchify(image, config: ModelConfig) -> np.ndarray:
    """Flatten an [H, W, C] image into [N, P*P*C] patch rows.

    Patch rows follow row-major order over the patch grid; within a patch,
    row-major over pixels with channels last.
    """
    arr = image.data if isinstance(image, Tensor) else np.asarray(image)
    expected = (config.image_height, config.image_width, config.channels)
    if arr.shape != expected:
        raise InputError(f"image shape {arr.shape} does not match config {expected}")
    p = config.patch_size
    grid = arr.reshape(config.grid_rows, p, config.grid_cols, p, config.channels)
    return grid.transpose(0, 2, 1, 3, 4).reshape(config.num_patches, config.patch_dim)


def patchify_batch(images: np.ndarray, config: ModelConfig) -> np.ndarray:
    arr = np.asarray(images)
    expected = (config.image_height, config.image_width, config.channels)
    if arr.ndim != 4 or arr.shape[1:] != expected:
        raise InputError(f"batch shape {arr.shape} does not match [B, {expected}]")
    p = config.patch_size
    grid = arr.reshape(arr.shape[0], config.grid_rows, p, config.grid_cols, p, config.channels)
    return grid.transpose(0, 1, 3, 2, 4, 5).reshape(
        arr.shape[0], config.num_patches, config.patch_dim
    )


class FlopCounter:
    """Tallies executed block matmuls, one multiply-accumulate = 2 FLOPs."""

    def __init__(self):
        self.total = 0

    def add_matmul(self, batch: int, m: int, k: int, n: int) -> None:
        self.total += 2 * batch * m * k * n


@dataclass
class RefineRecord:
    """Bookkeeping of one refinement event (exportable for visualization)."""

    layer: int
    kept: np.ndarray          # [B, k] indices into the pre-refinement token order
    merged_from: np.ndarray   # [B, m] indices merged into the appended token

    def to_dict(self) -> dict:
        return {
            "layer": self.layer,
            "kept_patch_indices": self.kept.tolist(),
            "merged_from_indices": self.merged_from.tolist(),
        }


@dataclass
class ForwardTrace:
    """Everything one forward pass exposes for scoring, refinement, and reports."""

    attention: List[Tensor] = field(default_factory=list)   # per layer [B, h, T, T]
    cls_rows: List[Tensor] = field(default_factory=list)    # per layer [B, T], head-averaged
    token_counts: List[int] = field(default_factory=list)   # per layer input length
    refinements: List[RefineRecord] = field(default_factory=list)
    final_cls: Optional[Tensor] = None
    logits: Optional[Tensor] = None


def _linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return ad.add(ad.matmul(x, ad.transpose(weight)), bias)


def forward(
    model: ViTModel,
    images: np.ndarray,
    plan: Optional[RefinePlan] = None,
    flops: Optional[FlopCounter] = None,
) -> ForwardTrace:
    """Run the model on [B, H, W, C] images, refining where the plan says.

    Attention recorded in the trace is always the pre-refinement attention
    of its layer.
    """
    patches = patchify_batch(images, model.config)
    return forward_patches(model, patches, plan=plan, flops=flops)


def forward_patches(
    model: ViTModel,
    patches: np.ndarray,
    plan: Optional[RefinePlan] = None,
    flops: Optional[FlopCounter] = None,
) -> ForwardTrace:
    cfg = model.config
    p = model.params
    if plan is not None and plan.layers and max(plan.layers) >= cfg.num_layers:
        raise ConfigurationError(
            f"plan refers to layer {max(plan.layers)} of a {cfg.num_layers}-layer model"
        )
    planned = set(plan.layers) if plan is not None else set()

    batch = patches.shape[0]
    x = ad.tensor(patches, dtype=model.dtype)
    proj = _linear(x, p["patch.weight"], p["patch.bias"])
    cls_rows = ad.repeat_leading(p["cls"], batch)  # [B, 1, d]
    h = ad.add(ad.concat([cls_rows, proj], axis=1), p["pos"])

    d, heads, dh = cfg.embed_dim, cfg.num_heads, cfg.head_dim
    trace = ForwardTrace()

    for layer in range(cfg.num_layers):
        t = h.shape[1]
        trace.token_counts.append(t)

        normed = ad.layer_norm(h, p[f"block{layer}.norm1.gain"], p[f"block{layer}.norm1.bias"])
        q = _linear(normed, p[f"block{layer}.attn.q.weight"], p[f"block{layer}.attn.q.bias"])
        k = _linear(normed, p[f"block{layer}.attn.k.weight"], p[f"block{layer}.attn.k.bias"])
        v = _linear(normed, p[f"block{layer}.attn.v.weight"], p[f"block{layer}.attn.v.bias"])

        def split_heads(tns):
            return ad.transpose(ad.reshape(tns, (batch, t, heads, dh)), (0, 2, 1, 3))

        qh, kh, vh = split_heads(q), split_heads(k), split_heads(v)
        scores = ad.scale(ad.matmul(qh, ad.transpose(kh, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
        attn = ad.softmax(scores, axis=-1)
        ctx = ad.matmul(attn, vh)
        merged_heads = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (batch, t, d))
        attn_out = _linear(merged_heads, p[f"block{layer}.attn.o.weight"], p[f"block{layer}.attn.o.bias"])
        h = ad.add(h, attn_out)

        normed2 = ad.layer_norm(h, p[f"block{layer}.norm2.gain"], p[f"block{layer}.norm2.bias"])
        inner = ad.gelu(_linear(normed2, p[f"block{layer}.mlp.fc1.weight"], p[f"block{layer}.mlp.fc1.bias"]))
        mlp_out = _linear(inner, p[f"block{layer}.mlp.fc2.weight"], p[f"block{layer}.mlp.fc2.bias"])
        h = ad.add(h, mlp_out)

        if flops is not None:
            for _ in range(4):  # q, k, v, o projections
                flops.add_matmul(batch, t, d, d)
            flops.add_matmul(batch * heads, t, dh, t)  # q @ k^T
            flops.add_matmul(batch * heads, t, t, dh)  # attn @ v
            flops.add_matmul(batch, t, d, cfg.mlp_hidden)  # fc1
            flops.add_matmul(batch, t, cfg.mlp_hidden, d)  # fc2

        trace.attention.append(attn)
        row = cls_attention_row(attn)
        trace.cls_rows.append(row)

        if layer in planned:
            token_scores = index_select(row, 1, list(range(1, t)))
            n = t - 1
            if keep_count(plan.rho, n) < 1:
                raise ConfigurationError(
                    f"select rate {plan.rho} keeps no tokens at layer {layer} ({n} tokens)"
                )
            h, kept, dropped = refine_with_indices(h, token_scores, plan.rho)
            trace.refinements.append(RefineRecord(layer, kept, dropped))

    cls_final = ad.reshape(ad.index_select(h, 1, [0]), (batch, d))
    trace.final_cls = ad.layer_norm(cls_final, p["norm.gain"], p["norm.bias"])
    trace.logits = _linear(trace.final_cls, p["head.weight"], p["head.bias"])
    return trace


def classify(trace: ForwardTrace) -> Tensor:
    """Logits of a completed forward trace (head over the final [CLS] state)."""
    if trace.logits is None:
        raise UsageError("trace is incomplete; run forward() first")
    return trace.logits
