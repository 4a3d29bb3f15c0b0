"""Dev probe: one-seed dry run of the two-task transfer protocol with timings."""

import time

import numpy as np

from trpts.data import SyntheticTaskSpec, generate_task
from trpts.fisher import estimate_fim
from trpts.refine import plan_refining_layers
from trpts.selection import (
    SelectorConfig, connection_budget, layer_weights, select_per_neuron, top_m_set,
)
from trpts.train import TrainConfig, evaluate, fine_tune, head_only_mask
from trpts.vit import ModelConfig, init_model, param_shapes

t0 = time.time()


def tick(msg):
    print(f"[{time.time() - t0:6.1f}s] {msg}", flush=True)


SEED = 0
model_cfg_a = ModelConfig(patch_size=8, num_classes=4, seed=1000 + SEED)
spec_a = SyntheticTaskSpec("shape-class", num_train=1500, num_val=250, num_test=250,
                           noise=0.03, seed=11 + SEED)
spec_b = SyntheticTaskSpec("quadrant-class", num_train=1000, num_val=250, num_test=500,
                           noise=0.03, seed=77 + SEED)
task_a = generate_task(spec_a)
task_b = generate_task(spec_b)
tick("data generated")

model = init_model(model_cfg_a)
pre_cfg = TrainConfig(learning_rate=1e-3, epochs=28, batch_size=64,
                      final_lr=1e-5, warmup_steps=20, seed=42 + SEED)
_, hist = fine_tune(model, None, None, task_a["train"], task_a["val"], pre_cfg)
tick(f"pretrain val acc: {hist[-1]['val_accuracy']:.3f} "
     f"(epoch curve {[round(h['val_accuracy'], 2) for h in hist[::6]]})")
backbone = model.state_arrays()

model_cfg_b = ModelConfig(patch_size=8, num_classes=4, seed=2000 + SEED)


def fresh_model_b():
    m = init_model(model_cfg_b)
    m.load_state(backbone, skip=("head.weight", "head.bias"))
    return m


scorer = fresh_model_b()
fisher = estimate_fim(scorer, task_b["train"], num_batches=15, batch_size=64, seed=5 + SEED)
tick("fisher scored")

sel_cfg = SelectorConfig(top_m_percent=1.0, c_min=1)
registry = param_shapes(model_cfg_b)
top = top_m_set(fisher, sel_cfg)
imp = layer_weights(top, registry)
budget = connection_budget(imp, sel_cfg)
mask = select_per_neuron(fisher, budget, registry, sel_cfg)
tick(f"w_l={np.round(imp.w, 3).tolist()}")
tick(f"budgets={budget.c.tolist()} trainable fraction={mask.selected / mask.total:.4%}")

ft_cfg = TrainConfig(learning_rate=1e-3, epochs=10, batch_size=64,
                     final_lr=1e-5, warmup_steps=10, seed=900 + SEED)
plans = {
    "sparse": plan_refining_layers(imp.w, 3, "sparse", rho=0.95),
    "dense": plan_refining_layers(imp.w, 3, "dense", rho=0.95),
}
tick(f"plans: sparse={plans['sparse'].layers} dense={plans['dense'].layers}")

results = {}
for name, (use_mask, plan) in {
    "linear": (False, None),
    "param-only": (True, None),
    "trpts-sparse": (True, plans["sparse"]),
    "trpts-dense": (True, plans["dense"]),
}.items():
    m = fresh_model_b()
    active = mask if use_mask else head_only_mask(m)
    _, h = fine_tune(m, active, plan, task_b["train"], task_b["val"], ft_cfg)
    acc = evaluate(m, plan, task_b["test"])
    results[name] = acc
    tick(f"{name}: test acc {acc:.3f} (val curve {[round(x['val_accuracy'], 2) for x in h[::3]]})")

print("\nsummary:", {k: round(v, 4) for k, v in results.items()})

# Criterion-12 style: masks from two different task-B families should differ.
spec_c = SyntheticTaskSpec("count-class", num_classes=3, num_train=1000, num_val=250,
                           num_test=250, noise=0.03, seed=99 + SEED)
task_c = generate_task(spec_c)
model_cfg_c = ModelConfig(patch_size=8, num_classes=3, seed=3000 + SEED)
mc = init_model(model_cfg_c)
mc.load_state(backbone, skip=("head.weight", "head.bias"))
fisher_c = estimate_fim(mc, task_c["train"], num_batches=15, batch_size=64, seed=6 + SEED)
top_c = top_m_set(fisher_c, sel_cfg)
imp_c = layer_weights(top_c, registry)
tick(f"count-class w_l={np.round(imp_c.w, 3).tolist()}")
tick(f"argmax blocks: quadrant={int(np.argmax(imp.w))} count={int(np.argmax(imp_c.w))}")
