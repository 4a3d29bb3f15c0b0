"""Analysis artifacts: FLOPs accounting, layer histograms, overlap matrices, ablation tables.

FLOPs are analytic integer counts over the transformer blocks' matmuls
only (QKV and output projections, the two attention products, and the
two MLP layers), with one multiply-accumulate counted as 2 FLOPs.
LayerNorm, softmax, and GELU are dominated terms and excluded.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import InputError
from .refine import RefinePlan, planned_token_counts
from .selection import SelectionMask, TopSet, mask_overlap
from .vit import ModelConfig, ParamInfo

TABLE4_CELLS = ("neither", "token-only", "param-only", "both")
TABLE5_MODES = ("dense", "random", "sparse")
TABLE5_RATIOS = (0.95, 0.8)


@dataclass
class LayerFlops:
    layer: int
    tokens: int
    attention_flops: int
    mlp_flops: int

    @property
    def total(self) -> int:
        return self.attention_flops + self.mlp_flops


@dataclass
class FlopsReport:
    per_layer: List[LayerFlops]
    total_planned: int
    total_unplanned: int

    @property
    def reduction_fraction(self) -> float:
        return 1.0 - self.total_planned / self.total_unplanned

    def to_dict(self) -> dict:
        return {
            "per_layer": [
                {
                    "layer": lf.layer,
                    "tokens": lf.tokens,
                    "attention_flops": lf.attention_flops,
                    "mlp_flops": lf.mlp_flops,
                }
                for lf in self.per_layer
            ],
            "total_planned": self.total_planned,
            "total_unplanned": self.total_unplanned,
            "reduction_fraction": self.reduction_fraction,
        }


def _block_flops(tokens: int, d: int, hidden: int) -> tuple:
    attention = 8 * tokens * d * d + 4 * tokens * tokens * d
    mlp = 4 * tokens * d * hidden
    return attention, mlp


def flops_report(config: ModelConfig, plan: Optional[RefinePlan]) -> FlopsReport:
    """Exact per-image FLOPs of the transformer stack, with and without the plan."""
    counts = planned_token_counts(config.num_patches, config.num_layers, plan)
    d, hidden = config.embed_dim, config.mlp_hidden
    per_layer = []
    total_planned = 0
    for layer, t in enumerate(counts):
        attn, mlp = _block_flops(t, d, hidden)
        per_layer.append(LayerFlops(layer, t, attn, mlp))
        total_planned += attn + mlp
    full_attn, full_mlp = _block_flops(config.seq_len, d, hidden)
    total_unplanned = config.num_layers * (full_attn + full_mlp)
    return FlopsReport(per_layer, total_planned, total_unplanned)


def write_flops_csv(report: FlopsReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "tokens", "attention_flops", "mlp_flops"])
        for lf in report.per_layer:
            writer.writerow([lf.layer, lf.tokens, lf.attention_flops, lf.mlp_flops])
        writer.writerow(["total_planned", report.total_planned, "", ""])
        writer.writerow(["total_unplanned", report.total_unplanned, "", ""])


@dataclass
class LayerDistribution:
    """Where the top-scored parameters live, block by block."""

    counts: np.ndarray       # per transformer block
    fractions: np.ndarray
    non_block: int
    top_size: int

    def to_dict(self) -> dict:
        return {
            "counts": self.counts.tolist(),
            "fractions": self.fractions.tolist(),
            "non_block": self.non_block,
            "top_size": self.top_size,
        }


def layer_distribution(top_set: TopSet, registry: List[ParamInfo]) -> LayerDistribution:
    if top_set.indices.size == 0:
        raise InputError("top set is empty")
    layer_by_name = {info.name: info.layer_index for info in registry}
    num_layers = max((info.layer_index for info in registry), default=-1) + 1
    param_layers = np.array([layer_by_name[n] for n in top_set.names], dtype=np.int64)
    member_layers = param_layers[top_set.param_of(top_set.indices)]
    counts = np.bincount(member_layers[member_layers >= 0], minlength=num_layers)
    non_block = int((member_layers < 0).sum())
    total = top_set.indices.size
    return LayerDistribution(counts, counts / total, non_block, int(total))


def overlap_matrix(masks: Sequence[SelectionMask]) -> np.ndarray:
    """Pairwise Jaccard overlap; symmetric with a unit diagonal."""
    if len(masks) < 2:
        raise InputError("need at least two masks to compare")
    n = len(masks)
    out = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = mask_overlap(masks[i], masks[j])
    return out


@dataclass
class ExperimentReport:
    """One experiment's outcome plus everything needed to audit it."""

    task: str
    variant: str
    accuracy: float
    trainable_fraction: float
    layer_weights: List[float]
    budgets: List[int]
    plan: Optional[dict]
    flops: dict
    seed: int
    config_hash: str
    rho: Optional[float] = None
    timestamp: str = ""

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "variant": self.variant,
            "accuracy": self.accuracy,
            "trainable_fraction": self.trainable_fraction,
            "layer_weights": self.layer_weights,
            "budgets": self.budgets,
            "plan": self.plan,
            "flops": self.flops,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "rho": self.rho,
            "timestamp": self.timestamp,
        }


def ablation_table(results: Sequence[ExperimentReport], table: str = "components") -> List[dict]:
    """One row per expected cell; missing cells are marked, never dropped.

    components covers {neither, token-only, param-only, both}; placement
    covers {dense, random, sparse} x select ratios {0.95, 0.8}.
    """
    if table == "components":
        cells = [(v, None) for v in TABLE4_CELLS]

        def key_of(r):
            return (r.variant, None)
    elif table == "placement":
        cells = [(m, r) for m in TABLE5_MODES for r in TABLE5_RATIOS]

        def key_of(r):
            if r.rho not in TABLE5_RATIOS:
                raise InputError(
                    f"placement table admits select ratios {TABLE5_RATIOS}, got {r.rho}"
                )
            return (r.variant, r.rho)
    else:
        raise InputError(f"unknown ablation table {table!r}")

    by_cell = {}
    for result in results:
        key = key_of(result)
        if key in by_cell:
            raise InputError(f"duplicate configuration {key}")
        by_cell[key] = result

    rows = []
    for variant, rho in cells:
        result = by_cell.get((variant, rho))
        row = {"variant": variant, "rho": rho if rho is not None else ""}
        if result is None:
            row.update({"accuracy": "absent", "trainable_fraction": "absent"})
        else:
            row.update({
                "accuracy": result.accuracy,
                "trainable_fraction": result.trainable_fraction,
            })
        rows.append(row)
    return rows


def write_ablation_csv(rows: List[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["variant", "rho", "accuracy", "trainable_fraction"])
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
