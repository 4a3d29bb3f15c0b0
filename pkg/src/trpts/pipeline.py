"""Experiment pipeline: generate, pretrain, score, select, plan, finetune, evaluate, report.

Every stage persists its outputs under one experiment directory and reads
its inputs back from there, so any stage can be deleted and re-run in
isolation with identical results:

    data/task_a/{train,val,test}.tpk, manifest.json
    pretrain/checkpoint.tpk, model.json, metrics.csv
    score/fisher.tpk
    select/mask.tpk, selection.json
    plan/plan.json
    finetune/checkpoint.tpk, metrics.csv
    eval/eval.json
    report/report.json, flops.csv, layer_distribution.csv
    ablate/<variant>/..., ablate/ablation.csv
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .config import RunConfig, derive_seed
from .data import Dataset, generate_task
from .errors import ConfigurationError
from .fisher import FisherScores, estimate_fim
from .refine import RefinePlan, plan_refining_layers
from .reporting import (
    ExperimentReport,
    ablation_table,
    flops_report,
    layer_distribution,
    write_ablation_csv,
    write_flops_csv,
)
from .selection import (
    SelectionMask,
    SelectorConfig,
    connection_budget,
    layer_weights,
    select_per_neuron,
    top_m_set,
)
from .tensorpack import read_tensorpack, write_tensorpack
from .train import evaluate, fine_tune, head_only_mask, write_metrics_csv
from .vit import ModelConfig, ViTModel, init_model, param_shapes


def _prepare_dir(path: Path, force: bool) -> Path:
    path = Path(path)
    if path.exists() and any(path.iterdir()) and not force:
        raise ConfigurationError(f"output directory {path} exists; pass --force to overwrite")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _require(path: Path, producer: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"{path} is missing; run `trpts {producer}` first")
    return path


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path: Path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def save_dataset(ds: Dataset, path: Path) -> None:
    write_tensorpack(path, {"images": ds.images, "labels": ds.labels})


def load_dataset(path: Path) -> Dataset:
    entries = read_tensorpack(path)
    return Dataset(entries["images"], entries["labels"])


def save_fisher(scores: FisherScores, path: Path) -> None:
    entries = dict(scores.scores)
    entries["sample_count"] = np.array(scores.sample_count, dtype=np.int64)
    write_tensorpack(path, entries)


def load_fisher(path: Path) -> FisherScores:
    entries = read_tensorpack(path)
    count = int(entries.pop("sample_count"))
    return FisherScores(entries, count)


def save_mask(mask: SelectionMask, path: Path) -> None:
    write_tensorpack(path, {n: m.astype(np.uint8) for n, m in mask.masks.items()})


def load_mask(path: Path) -> SelectionMask:
    return SelectionMask(read_tensorpack(path))


# ---------------------------------------------------------------------------
# stages


def stage_gen_data(cfg: RunConfig, out: Path, force: bool = False) -> Dict[str, Path]:
    """Render both task families to tensor packs plus JSON manifests."""
    written = {}
    for which in ("a", "b"):
        spec = cfg.task_spec(which)
        task_dir = _prepare_dir(Path(out) / "data" / f"task_{which}", force)
        task = generate_task(spec)
        for split, ds in task.items():
            save_dataset(ds, task_dir / f"{split}.tpk")
        _write_json(task_dir / "manifest.json", {
            "spec": spec.to_dict(),
            "splits": {s: len(task[s]) for s in task},
            "config_hash": cfg.config_hash(),
        })
        written[which] = task_dir
    return written


def _load_task(out: Path, which: str) -> Dict[str, Dataset]:
    task_dir = _require(Path(out) / "data" / f"task_{which}", "gen-data")
    return {s: load_dataset(task_dir / f"{s}.tpk") for s in ("train", "val", "test")}


def stage_pretrain(cfg: RunConfig, out: Path, force: bool = False) -> Path:
    """Full fine-tuning on task A from scratch; the 'pre-trained' backbone."""
    task = _load_task(out, "a")
    stage_dir = _prepare_dir(Path(out) / "pretrain", force)
    k = cfg.sections["task_a"]["num_classes"]
    model = init_model(cfg.model_config(k, "init-a"))
    _, history = fine_tune(model, None, None, task["train"], task["val"],
                           cfg.train_config("pretrain"))
    write_tensorpack(stage_dir / "checkpoint.tpk", model.state_arrays())
    _write_json(stage_dir / "model.json", model.config.to_dict())
    write_metrics_csv(history, stage_dir / "metrics.csv")
    return stage_dir


def load_backbone_for_task_b(cfg: RunConfig, out: Path) -> ViTModel:
    """Pretrained backbone with a fresh, seeded classifier head for task B."""
    checkpoint = _require(Path(out) / "pretrain" / "checkpoint.tpk", "pretrain")
    arrays = read_tensorpack(checkpoint)
    k = cfg.sections["task_b"]["num_classes"]
    model = init_model(cfg.model_config(k, "init-b"))
    model.load_state(arrays, skip=("head.weight", "head.bias"))
    return model


def stage_score(cfg: RunConfig, out: Path, force: bool = False) -> FisherScores:
    """Fisher scores of the pretrained weights on the downstream training split."""
    model = load_backbone_for_task_b(cfg, out)
    train_b = _load_task(out, "b")["train"]
    stage_dir = _prepare_dir(Path(out) / "score", force)
    section = cfg.sections["score"]
    batch_size = int(section["batch_size"])
    num_batches = int(section["num_batches"])
    if num_batches == 0:
        num_batches = max(1, len(train_b) // batch_size)
    fisher = estimate_fim(model, train_b, num_batches, batch_size,
                          seed=derive_seed(cfg.seed, "score"))
    save_fisher(fisher, stage_dir / "fisher.tpk")
    return fisher


def _selector_config(cfg: RunConfig, top_m: Optional[float], c_min: Optional[int]) -> SelectorConfig:
    section = cfg.sections["selector"]
    return SelectorConfig(
        top_m_percent=float(section["top_m_percent"] if top_m is None else top_m),
        c_min=int(section["c_min"] if c_min is None else c_min),
    )


def _registry_for_task_b(cfg: RunConfig) -> list:
    k = cfg.sections["task_b"]["num_classes"]
    return param_shapes(cfg.model_config(k, "init-b"))


def _eligible_fan_in_caps(registry, selector: SelectorConfig) -> np.ndarray:
    """Widest eligible weight-matrix fan-in per transformer block."""
    import fnmatch
    num_layers = max((i.layer_index for i in registry), default=-1) + 1
    caps = np.ones(num_layers, dtype=np.int64)
    for info in registry:
        if info.layer_index < 0 or len(info.shape) != 2:
            continue
        if any(fnmatch.fnmatchcase(info.name, p) for p in selector.scope):
            caps[info.layer_index] = max(caps[info.layer_index], info.shape[1])
    return caps


def stage_select(
    cfg: RunConfig,
    out: Path,
    force: bool = False,
    top_m: Optional[float] = None,
    c_min: Optional[int] = None,
) -> SelectionMask:
    """Fisher scores -> layer weights -> budgets -> per-neuron binary mask."""
    fisher = load_fisher(_require(Path(out) / "score" / "fisher.tpk", "score"))
    stage_dir = _prepare_dir(Path(out) / "select", force)
    selector = _selector_config(cfg, top_m, c_min)
    registry = _registry_for_task_b(cfg)

    top = top_m_set(fisher, selector)
    importance = layer_weights(top, registry)
    budget = connection_budget(importance, selector,
                               max_fan_in=_eligible_fan_in_caps(registry, selector))
    mask = select_per_neuron(fisher, budget, registry, selector)

    save_mask(mask, stage_dir / "mask.tpk")
    _write_json(stage_dir / "selection.json", {
        "layer_weights": importance.w.tolist(),
        "budgets": budget.c.tolist(),
        "top_m_percent": selector.top_m_percent,
        "c_min": selector.c_min,
        "top_size": importance.top_m_size,
        "selected": mask.selected,
        "total": mask.total,
        "trainable_fraction": mask.selected / mask.total,
        "config_hash": cfg.config_hash(),
    })
    return mask


def stage_plan(
    cfg: RunConfig,
    out: Path,
    force: bool = False,
    rho: Optional[float] = None,
    mode: Optional[str] = None,
    layers: Optional[list] = None,
) -> RefinePlan:
    """Place refining layers using the persisted layer weights."""
    selection = _read_json(_require(Path(out) / "select" / "selection.json", "select"))
    stage_dir = _prepare_dir(Path(out) / "plan", force)
    section = cfg.sections["refine"]
    plan = plan_refining_layers(
        np.asarray(selection["layer_weights"]),
        num_refine_layers=int(section["num_refine_layers"]),
        mode=section["mode"] if mode is None else mode,
        seed=derive_seed(cfg.seed, "plan"),
        rho=float(section["rho"] if rho is None else rho),
        explicit_layers=layers if layers is not None else section["layers"],
    )
    _write_json(stage_dir / "plan.json", plan.to_dict())
    return plan


def load_plan(out: Path) -> RefinePlan:
    return RefinePlan.from_dict(_read_json(_require(Path(out) / "plan" / "plan.json", "plan")))


def stage_finetune(cfg: RunConfig, out: Path, force: bool = False) -> Path:
    """Masked fine-tuning on task B with the persisted mask and plan."""
    model = load_backbone_for_task_b(cfg, out)
    mask = load_mask(_require(Path(out) / "select" / "mask.tpk", "select"))
    plan = load_plan(out)
    task = _load_task(out, "b")
    stage_dir = _prepare_dir(Path(out) / "finetune", force)
    _, history = fine_tune(model, mask, plan, task["train"], task["val"],
                           cfg.train_config("finetune"))
    write_tensorpack(stage_dir / "checkpoint.tpk", model.state_arrays())
    _write_json(stage_dir / "model.json", model.config.to_dict())
    write_metrics_csv(history, stage_dir / "metrics.csv")
    return stage_dir


def stage_eval(cfg: RunConfig, out: Path, force: bool = False) -> float:
    """Top-1 accuracy of the fine-tuned model on the task-B test split."""
    checkpoint = _require(Path(out) / "finetune" / "checkpoint.tpk", "finetune")
    k = cfg.sections["task_b"]["num_classes"]
    model = init_model(cfg.model_config(k, "init-b"))
    model.load_state(read_tensorpack(checkpoint))
    plan = load_plan(out)
    test_b = _load_task(out, "b")["test"]
    stage_dir = _prepare_dir(Path(out) / "eval", force)
    accuracy = evaluate(model, plan, test_b)
    _write_json(stage_dir / "eval.json", {
        "accuracy": accuracy,
        "num_examples": len(test_b),
        "config_hash": cfg.config_hash(),
    })
    return accuracy


def stage_report(cfg: RunConfig, out: Path, force: bool = False,
                 variant: str = "both") -> ExperimentReport:
    """Assemble the experiment report from the persisted stage outputs."""
    out = Path(out)
    eval_payload = _read_json(_require(out / "eval" / "eval.json", "eval"))
    selection = _read_json(_require(out / "select" / "selection.json", "select"))
    fisher = load_fisher(_require(out / "score" / "fisher.tpk", "score"))
    plan = load_plan(out)
    stage_dir = _prepare_dir(out / "report", force)

    k = cfg.sections["task_b"]["num_classes"]
    model_cfg = cfg.model_config(k, "init-b")
    flops = flops_report(model_cfg, plan)
    selector = _selector_config(cfg, selection["top_m_percent"], selection["c_min"])
    registry = param_shapes(model_cfg)
    dist = layer_distribution(top_m_set(fisher, selector), registry)

    report = ExperimentReport(
        task=cfg.sections["task_b"]["family"],
        variant=variant,
        accuracy=eval_payload["accuracy"],
        trainable_fraction=selection["trainable_fraction"],
        layer_weights=selection["layer_weights"],
        budgets=selection["budgets"],
        plan=plan.to_dict(),
        flops=flops.to_dict(),
        seed=cfg.seed,
        config_hash=cfg.config_hash(),
        rho=plan.rho,
        timestamp=datetime.now(timezone.utc).isoformat(),
    )
    _write_json(stage_dir / "report.json", report.to_dict())
    write_flops_csv(flops, stage_dir / "flops.csv")
    with open(stage_dir / "layer_distribution.csv", "w") as fh:
        fh.write("block,count,fraction\n")
        for i, (c, f) in enumerate(zip(dist.counts, dist.fractions)):
            fh.write(f"{i},{c},{f}\n")
        fh.write(f"non_block,{dist.non_block},{dist.non_block / dist.top_size}\n")
    return report


_PIPELINE = (
    ("score", stage_score),
    ("select", stage_select),
    ("plan", stage_plan),
    ("finetune", stage_finetune),
    ("eval", stage_eval),
    ("report", stage_report),
)


def run_pipeline(cfg: RunConfig, out: Path, force: bool = False) -> ExperimentReport:
    """Score through report in one call; partial outputs survive a failure."""
    result = None
    for name, stage in _PIPELINE:
        try:
            result = stage(cfg, out, force)
        except Exception as exc:
            raise type(exc)(f"stage {name!r} failed: {exc}") from exc
    return result


# ---------------------------------------------------------------------------
# ablation drivers


@dataclass
class _Variant:
    name: str
    use_param_mask: bool
    use_plan: bool
    mode: Optional[str] = None
    rho: Optional[float] = None


def _run_variant(cfg: RunConfig, out: Path, variant: _Variant,
                 fisher: FisherScores, mask: SelectionMask,
                 selection: dict, force: bool) -> ExperimentReport:
    model = load_backbone_for_task_b(cfg, out)
    task = _load_task(out, "b")
    section = cfg.sections["refine"]

    if variant.use_plan:
        plan = plan_refining_layers(
            np.asarray(selection["layer_weights"]),
            num_refine_layers=int(section["num_refine_layers"]),
            mode=variant.mode or section["mode"],
            seed=derive_seed(cfg.seed, "plan"),
            rho=float(variant.rho if variant.rho is not None else section["rho"]),
        )
    else:
        plan = None

    active_mask = mask if variant.use_param_mask else head_only_mask(model)
    _, history = fine_tune(model, active_mask, plan, task["train"], task["val"],
                           cfg.train_config("finetune"))
    accuracy = evaluate(model, plan, task["test"])

    k = cfg.sections["task_b"]["num_classes"]
    flops = flops_report(cfg.model_config(k, "init-b"), plan)
    variant_dir = _prepare_dir(Path(out) / "ablate" / variant.name, force)
    write_metrics_csv(history, variant_dir / "metrics.csv")
    report = ExperimentReport(
        task=cfg.sections["task_b"]["family"],
        variant=variant.name.split("-rho")[0] if variant.rho is not None else variant.name,
        accuracy=accuracy,
        trainable_fraction=active_mask.selected / active_mask.total,
        layer_weights=selection["layer_weights"],
        budgets=selection["budgets"],
        plan=plan.to_dict() if plan else None,
        flops=flops.to_dict(),
        seed=cfg.seed,
        config_hash=cfg.config_hash(),
        rho=variant.rho,
        timestamp=datetime.now(timezone.utc).isoformat(),
    )
    _write_json(variant_dir / "report.json", report.to_dict())
    return report


def stage_ablate(cfg: RunConfig, out: Path, force: bool = False) -> List[dict]:
    """Run the component (4-cell) or placement (6-cell) ablation study."""
    table = cfg.sections["ablate"]["table"]
    if table == "components":
        variants = [
            _Variant("neither", use_param_mask=False, use_plan=False),
            _Variant("token-only", use_param_mask=False, use_plan=True),
            _Variant("param-only", use_param_mask=True, use_plan=False),
            _Variant("both", use_param_mask=True, use_plan=True),
        ]
    elif table == "placement":
        variants = [
            _Variant(f"{mode}-rho{rho}", use_param_mask=True, use_plan=True,
                     mode=mode, rho=rho)
            for mode in ("dense", "random", "sparse")
            for rho in (0.95, 0.8)
        ]
    else:
        raise ConfigurationError(f"unknown ablation table {table!r}")

    fisher_path = Path(out) / "score" / "fisher.tpk"
    if not fisher_path.exists():
        stage_score(cfg, out, force)
    fisher = load_fisher(fisher_path)
    mask_path = Path(out) / "select" / "mask.tpk"
    if not mask_path.exists():
        stage_select(cfg, out, force)
    mask = load_mask(mask_path)
    selection = _read_json(Path(out) / "select" / "selection.json")

    reports = [
        _run_variant(cfg, out, v, fisher, mask, selection, force) for v in variants
    ]
    rows = ablation_table(reports, table=table)
    write_ablation_csv(rows, Path(out) / "ablate" / "ablation.csv")
    return rows
