"""Strict YAML run configuration: every key checked, unknown keys fatal.

One file drives the whole pipeline. All randomness flows from the single
top-level seed through named substreams, and the hash of the resolved
configuration is stamped into every report.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

import yaml

from .data import SyntheticTaskSpec
from .errors import ConfigurationError
from .rng import substream
from .train import TrainConfig
from .vit import ModelConfig


def derive_seed(seed: int, name: str) -> int:
    """A child seed keyed by (seed, name), stable across runs."""
    return int(substream(seed, name).integers(0, 2**63 - 1))


_MODEL_DEFAULTS = {
    "image_size": 32,
    "channels": 1,
    "patch_size": 4,
    "embed_dim": 64,
    "num_layers": 12,
    "num_heads": 4,
    "mlp_ratio": 4,
}

_TASK_DEFAULTS = {
    "family": None,  # required
    "num_classes": 4,
    "train": 2000,
    "val": 500,
    "test": 500,
    "noise": 0.05,
}

_TRAIN_DEFAULTS = {
    "epochs": 10,
    "batch_size": 64,
    "learning_rate": 1e-3,
    "optimizer": "adam",
    "beta1": 0.9,
    "beta2": 0.999,
    "eps": 1e-8,
    "final_lr": 1e-5,
    "warmup_steps": 0,
    "weight_decay": 0.0,
}

_SCORE_DEFAULTS = {
    "num_batches": 0,  # 0 = as many full batches as one pass allows
    "batch_size": 64,
}

_SELECTOR_DEFAULTS = {
    "top_m_percent": 1.0,
    "c_min": 1,
}

_REFINE_DEFAULTS = {
    "rho": 0.95,
    "num_refine_layers": 3,
    "mode": "sparse",
    "layers": None,  # explicit mode only
}

_ABLATE_DEFAULTS = {
    "table": "components",
}

_SECTIONS = {
    "model": _MODEL_DEFAULTS,
    "task_a": _TASK_DEFAULTS,
    "task_b": _TASK_DEFAULTS,
    "pretrain": _TRAIN_DEFAULTS,
    "finetune": _TRAIN_DEFAULTS,
    "score": _SCORE_DEFAULTS,
    "selector": _SELECTOR_DEFAULTS,
    "refine": _REFINE_DEFAULTS,
    "ablate": _ABLATE_DEFAULTS,
}


def _merge_section(section: str, defaults: dict, raw: dict) -> dict:
    unknown = set(raw) - set(defaults)
    if unknown:
        raise ConfigurationError(
            f"unknown key(s) {sorted(unknown)} in section {section!r}"
        )
    merged = dict(defaults)
    merged.update(raw)
    missing = [k for k, v in merged.items() if v is None and defaults[k] is None
               and k != "layers"]
    if missing:
        raise ConfigurationError(f"section {section!r} is missing required key(s) {missing}")
    return merged


@dataclass(frozen=True)
class RunConfig:
    seed: int
    sections: dict

    @classmethod
    def from_dict(cls, raw: dict, seed_override: Optional[int] = None) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigurationError("configuration root must be a mapping")
        unknown = set(raw) - set(_SECTIONS) - {"seed"}
        if unknown:
            raise ConfigurationError(f"unknown top-level key(s) {sorted(unknown)}")
        seed = raw.get("seed", 0)
        if seed_override is not None:
            seed = seed_override
        sections = {}
        for name, defaults in _SECTIONS.items():
            entry = raw.get(name, {})
            if entry is None:
                entry = {}
            if not isinstance(entry, dict):
                raise ConfigurationError(f"section {name!r} must be a mapping")
            sections[name] = _merge_section(name, defaults, entry)
        return cls(int(seed), sections)

    def model_config(self, num_classes: int, init_tag: str) -> ModelConfig:
        m = self.sections["model"]
        return ModelConfig(
            image_height=m["image_size"],
            image_width=m["image_size"],
            channels=m["channels"],
            patch_size=m["patch_size"],
            embed_dim=m["embed_dim"],
            num_layers=m["num_layers"],
            num_heads=m["num_heads"],
            mlp_ratio=m["mlp_ratio"],
            num_classes=num_classes,
            seed=derive_seed(self.seed, init_tag),
        )

    def task_spec(self, which: str, family: Optional[str] = None) -> SyntheticTaskSpec:
        t = self.sections[f"task_{which}"]
        fam = family if family is not None else t["family"]
        return SyntheticTaskSpec(
            family=fam,
            image_size=self.sections["model"]["image_size"],
            num_classes=t["num_classes"],
            num_train=t["train"],
            num_val=t["val"],
            num_test=t["test"],
            noise=float(t["noise"]),
            seed=derive_seed(self.seed, f"task-{which}-{fam}"),
        )

    def train_config(self, section: str) -> TrainConfig:
        t = self.sections[section]
        return TrainConfig(
            learning_rate=float(t["learning_rate"]),
            epochs=int(t["epochs"]),
            batch_size=int(t["batch_size"]),
            optimizer=t["optimizer"],
            beta1=float(t["beta1"]),
            beta2=float(t["beta2"]),
            eps=float(t["eps"]),
            final_lr=float(t["final_lr"]),
            warmup_steps=int(t["warmup_steps"]),
            weight_decay=float(t["weight_decay"]),
            seed=derive_seed(self.seed, f"train-{section}"),
        )

    def config_hash(self) -> str:
        canonical = json.dumps({"seed": self.seed, "sections": self.sections},
                               sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def load_config(path, seed_override: Optional[int] = None) -> RunConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"configuration file {path} does not exist")
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"cannot parse {path}: {exc}")
    if raw is None:
        raise ConfigurationError(f"configuration file {path} is empty")
    return RunConfig.from_dict(raw, seed_override=seed_override)
