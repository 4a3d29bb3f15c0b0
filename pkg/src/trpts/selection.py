"""Turn Fisher scores into a binary training mask with layer-wise budgets.

Pipeline: the globally top-M% scored parameters define per-layer
importance weights; weights become per-neuron connection budgets
(floored at one connection so no layer goes dead); each output neuron
then keeps its budget's worth of highest-scoring input connections.
"""

from __future__ import annotations

import fnmatch
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, InputError
from .fisher import FisherScores
from .vit import ParamInfo

DEFAULT_SCOPE = ("block*.attn.*.weight", "block*.mlp.*.weight")
DEFAULT_ALWAYS_TRAINABLE = ("head.weight", "head.bias")

# Budget ratios sit within float noise of exact fractions (counts divided by
# counts); nudge before flooring so 3.0 never truncates to 2.
_RATIO_EPS = 1e-9


@dataclass(frozen=True)
class SelectorConfig:
    top_m_percent: float = 1.0
    c_min: int = 1
    scope: tuple = DEFAULT_SCOPE
    always_trainable: tuple = DEFAULT_ALWAYS_TRAINABLE

    def __post_init__(self):
        if not (0.0 < self.top_m_percent <= 100.0):
            raise ConfigurationError(f"top_m_percent must lie in (0, 100], got {self.top_m_percent}")
        if self.c_min < 1:
            raise ConfigurationError(f"c_min must be >= 1, got {self.c_min}")


def _matches(name: str, patterns: Sequence[str]) -> bool:
    return any(fnmatch.fnmatchcase(name, pat) for pat in patterns)


@dataclass
class TopSet:
    """Flat indices of the globally top-scored scoped parameters.

    The global ordering concatenates scoped parameters in lexicographic
    name order, row-major within each parameter, which is also the
    tie-break order for equal scores.
    """

    names: tuple
    sizes: tuple
    offsets: np.ndarray       # start offset of each named parameter
    indices: np.ndarray       # selected global indices, ascending
    total_scoped: int

    def param_of(self, global_indices: np.ndarray) -> np.ndarray:
        """Map global indices to positions into .names."""
        return np.searchsorted(self.offsets, global_indices, side="right") - 1


@dataclass
class LayerImportance:
    """Fraction of the top set falling in each transformer block (Eq.-style w)."""

    w: np.ndarray
    top_m_size: int


@dataclass
class ConnectionBudget:
    """Trainable input connections granted to each neuron, per block."""

    c: np.ndarray


@dataclass
class SelectionMask:
    """0/1 mask per parameter; ones mark trainable entries."""

    masks: Dict[str, np.ndarray]

    @property
    def selected(self) -> int:
        return int(sum(int(m.sum()) for m in self.masks.values()))

    @property
    def total(self) -> int:
        return int(sum(m.size for m in self.masks.values()))

    def congruent_with(self, other: "SelectionMask") -> bool:
        if self.masks.keys() != other.masks.keys():
            return False
        return all(self.masks[n].shape == other.masks[n].shape for n in self.masks)


def top_m_set(scores: FisherScores, config: SelectorConfig) -> TopSet:
    """Global indices of the ceil(M% of scoped) highest Fisher scores.

    Ties break toward the lower global index (parameter-name
    lexicographic order, then flat offset).
    """
    names = tuple(sorted(n for n in scores.scores if _matches(n, config.scope)))
    if not names:
        raise ConfigurationError(f"selector scope {config.scope} matches no parameter")
    sizes = tuple(scores.scores[n].size for n in names)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
    flat = np.concatenate([scores.scores[n].reshape(-1) for n in names])
    total = flat.size
    k = math.ceil(config.top_m_percent / 100.0 * total)
    order = np.argsort(-flat, kind="stable")
    chosen = np.sort(order[:k])
    return TopSet(names, sizes, offsets, chosen, total)


def layer_weights(top_set: TopSet, registry: List[ParamInfo]) -> LayerImportance:
    """Per-block share of the top set; blocks holding none score zero."""
    if top_set.indices.size == 0:
        raise InputError("top set is empty")
    layer_by_name = {info.name: info.layer_index for info in registry}
    num_layers = max((info.layer_index for info in registry), default=-1) + 1
    param_layers = np.array([layer_by_name[n] for n in top_set.names], dtype=np.int64)
    member_layers = param_layers[top_set.param_of(top_set.indices)]
    counts = np.bincount(member_layers[member_layers >= 0], minlength=num_layers)
    w = counts.astype(np.float64) / top_set.indices.size
    return LayerImportance(w, int(top_set.indices.size))


def connection_budget(
    importance: LayerImportance,
    config: SelectorConfig,
    max_fan_in: Optional[object] = None,
) -> ConnectionBudget:
    """Budget per layer: max(1, w_l / min positive w * c_min), truncated.

    Layers with zero importance receive the floor of one connection.
    max_fan_in (scalar or per-layer array) caps budgets at what a weight
    matrix row can actually hold.
    """
    w = np.asarray(importance.w, dtype=np.float64)
    positive = w[w > 0]
    if positive.size == 0:
        raise ConfigurationError("all layer weights are zero; nothing to allocate")
    smallest = positive.min()
    ratio = w / smallest * config.c_min
    budget = np.floor(ratio + _RATIO_EPS).astype(np.int64)
    budget = np.maximum(budget, 1)
    if max_fan_in is not None:
        budget = np.minimum(budget, np.asarray(max_fan_in, dtype=np.int64))
        budget = np.maximum(budget, 1)
    return ConnectionBudget(budget)


def select_per_neuron(
    scores: FisherScores,
    budget: ConnectionBudget,
    registry: List[ParamInfo],
    config: SelectorConfig,
) -> SelectionMask:
    """Mark each output neuron's top-budget input connections by score.

    Rows of an eligible weight matrix are output neurons; each keeps
    min(C_layer, fan_in) entries, ties toward the lower column index.
    always_trainable parameters are fully unmasked; everything else is
    frozen.
    """
    masks: Dict[str, np.ndarray] = {}
    for info in registry:
        if _matches(info.name, config.always_trainable):
            masks[info.name] = np.ones(info.shape, dtype=np.uint8)
            continue
        mask = np.zeros(info.shape, dtype=np.uint8)
        eligible = (
            _matches(info.name, config.scope)
            and len(info.shape) == 2
            and 0 <= info.layer_index < budget.c.shape[0]
        )
        if eligible:
            fan_in = info.shape[1]
            keep = min(int(budget.c[info.layer_index]), fan_in)
            score = scores.scores[info.name]
            cols = np.argsort(-score, axis=1, kind="stable")[:, :keep]
            np.put_along_axis(mask, cols, 1, axis=1)
        masks[info.name] = mask
    return SelectionMask(masks)


def mask_overlap(a: SelectionMask, b: SelectionMask) -> float:
    """Jaccard overlap of the two selected index sets."""
    if not a.congruent_with(b):
        raise InputError("masks cover different registries")
    inter = 0
    union = 0
    for name in a.masks:
        am = a.masks[name].astype(bool)
        bm = b.masks[name].astype(bool)
        inter += int((am & bm).sum())
        union += int((am | bm).sum())
    return 1.0 if union == 0 else inter / union
