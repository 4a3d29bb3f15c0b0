"""Shared fixtures: a fast desk-scale configuration and a prepared experiment dir."""

import shutil

import pytest

TINY_CONFIG = """\
seed: 7
model:
  image_size: 16
  patch_size: 8
  embed_dim: 16
  num_layers: 3
  num_heads: 2
  mlp_ratio: 2
task_a:
  family: shape-class
  num_classes: 4
  train: 48
  val: 16
  test: 16
  noise: 0.03
task_b:
  family: quadrant-class
  num_classes: 4
  train: 40
  val: 16
  test: 16
  noise: 0.03
pretrain:
  epochs: 2
  batch_size: 16
  learning_rate: 0.001
finetune:
  epochs: 2
  batch_size: 16
  learning_rate: 0.001
score:
  num_batches: 2
  batch_size: 8
selector:
  top_m_percent: 1.0
  c_min: 1
refine:
  rho: 0.8
  num_refine_layers: 1
  mode: sparse
"""


@pytest.fixture(scope="session")
def tiny_config_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.yaml"
    path.write_text(TINY_CONFIG)
    return path


@pytest.fixture(scope="session")
def prepared_experiment(tiny_config_path, tmp_path_factory):
    """Experiment dir with data and a pretrained checkpoint, built once."""
    from trpts.config import load_config
    from trpts.pipeline import stage_gen_data, stage_pretrain

    out = tmp_path_factory.mktemp("exp") / "run"
    cfg = load_config(tiny_config_path)
    stage_gen_data(cfg, out)
    stage_pretrain(cfg, out)
    return cfg, out


@pytest.fixture
def experiment_copy(prepared_experiment, tmp_path):
    """Writable copy of the prepared experiment for stage-mutation tests."""
    cfg, out = prepared_experiment
    dest = tmp_path / "run"
    shutil.copytree(out, dest)
    return cfg, dest
