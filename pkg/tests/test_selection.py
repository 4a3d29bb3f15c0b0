"""Parameter-selection tests: top-M sets, layer budgets, per-neuron masks."""

import numpy as np
import pytest

from trpts.errors import ConfigurationError, InputError
from trpts.fisher import FisherScores
from trpts.selection import (
    ConnectionBudget,
    LayerImportance,
    SelectorConfig,
    connection_budget,
    layer_weights,
    mask_overlap,
    select_per_neuron,
    top_m_set,
)
from trpts.vit import ParamInfo


def fake_registry():
    return [
        ParamInfo("block0.attn.q.weight", (4, 6), 0),
        ParamInfo("block0.attn.q.bias", (4,), 0),
        ParamInfo("block1.mlp.fc1.weight", (8, 6), 1),
        ParamInfo("head.weight", (3, 6), -1),
        ParamInfo("head.bias", (3,), -1),
    ]


def fake_scores(rng):
    return FisherScores(
        {
            "block0.attn.q.weight": rng.uniform(size=(4, 6)),
            "block0.attn.q.bias": rng.uniform(size=(4,)),
            "block1.mlp.fc1.weight": rng.uniform(size=(8, 6)),
            "head.weight": rng.uniform(size=(3, 6)),
            "head.bias": rng.uniform(size=(3,)),
        },
        sample_count=16,
    )


class TestTopMSet:
    def test_m_100_selects_everything(self):
        rng = np.random.default_rng(0)
        top = top_m_set(fake_scores(rng), SelectorConfig(top_m_percent=100.0))
        assert top.indices.size == top.total_scoped == 4 * 6 + 8 * 6

    def test_ties_break_to_lowest_canonical_index(self):
        scores = FisherScores({"z.weight": np.ones(4), "a.weight": np.ones(6)}, 1)
        cfg = SelectorConfig(top_m_percent=50.0, scope=("*.weight",))
        top = top_m_set(scores, cfg)
        # Canonical order is a.weight then z.weight; the lowest 5 win the tie.
        np.testing.assert_array_equal(top.indices, [0, 1, 2, 3, 4])
        assert top.names == ("a.weight", "z.weight")

    def test_matches_full_sort_oracle(self):
        rng = np.random.default_rng(1)
        scores = FisherScores({"p.weight": rng.uniform(size=1000)}, 1)
        top = top_m_set(scores, SelectorConfig(top_m_percent=1.0, scope=("p.weight",)))
        oracle = np.sort(np.argsort(-scores.scores["p.weight"], kind="stable")[:10])
        np.testing.assert_array_equal(top.indices, oracle)

    def test_count_is_ceiling(self):
        scores = FisherScores({"p.weight": np.arange(7.0)}, 1)
        top = top_m_set(scores, SelectorConfig(top_m_percent=30.0, scope=("p.weight",)))
        assert top.indices.size == 3  # ceil(0.3 * 7)

    def test_empty_scope_rejected(self):
        rng = np.random.default_rng(2)
        with pytest.raises(ConfigurationError):
            top_m_set(fake_scores(rng), SelectorConfig(scope=("nothing.*",)))


class TestLayerWeights:
    def test_direct_fractions(self):
        rng = np.random.default_rng(3)
        scores = fake_scores(rng)
        # Force exactly 4 of the top 10 into block0 by inflating scores.
        scores.scores["block0.attn.q.weight"][:] = 0.0
        scores.scores["block0.attn.q.weight"].reshape(-1)[:4] = 100.0
        scores.scores["block1.mlp.fc1.weight"][:] = 0.0
        scores.scores["block1.mlp.fc1.weight"].reshape(-1)[:6] = 99.0
        cfg = SelectorConfig(top_m_percent=100.0 * 10 / 72)
        imp = layer_weights(top_m_set(scores, cfg), fake_registry())
        np.testing.assert_allclose(imp.w, [0.4, 0.6])
        assert imp.top_m_size == 10

    def test_single_layer_takes_all(self):
        rng = np.random.default_rng(4)
        scores = fake_scores(rng)
        scores.scores["block1.mlp.fc1.weight"][:] = 0.0
        cfg = SelectorConfig(top_m_percent=10.0)
        imp = layer_weights(top_m_set(scores, cfg), fake_registry())
        np.testing.assert_allclose(imp.w, [1.0, 0.0])

    def test_weights_sum_to_at_most_one(self):
        rng = np.random.default_rng(5)
        imp = layer_weights(top_m_set(fake_scores(rng), SelectorConfig()), fake_registry())
        assert imp.w.sum() <= 1.0 + 1e-12


class TestConnectionBudget:
    def test_ratio_two_to_one(self):
        c = connection_budget(LayerImportance(np.array([0.5, 0.25, 0.25]), 4), SelectorConfig(c_min=1))
        np.testing.assert_array_equal(c.c, [2, 1, 1])

    def test_zero_weight_layer_gets_floor(self):
        c = connection_budget(LayerImportance(np.array([0.6, 0.4, 0.0]), 5), SelectorConfig(c_min=2))
        np.testing.assert_array_equal(c.c, [3, 2, 1])

    def test_uniform_weights_give_c_min(self):
        for c_min in (1, 2, 7):
            imp = LayerImportance(np.full(6, 1 / 6), 60)
            c = connection_budget(imp, SelectorConfig(c_min=c_min))
            np.testing.assert_array_equal(c.c, c_min)

    def test_all_zero_rejected(self):
        with pytest.raises(ConfigurationError):
            connection_budget(LayerImportance(np.zeros(3), 0), SelectorConfig())

    def test_fan_in_cap(self):
        imp = LayerImportance(np.array([0.9, 0.1]), 10)
        c = connection_budget(imp, SelectorConfig(c_min=3), max_fan_in=8)
        np.testing.assert_array_equal(c.c, [8, 3])

    def test_budget_laws_on_random_vectors(self):
        """C >= 1 everywhere and monotone in w, for many random weightings."""
        rng = np.random.default_rng(6)
        cfg = SelectorConfig(c_min=3)
        for _ in range(200):
            w = rng.uniform(size=rng.integers(2, 12))
            w[rng.uniform(size=w.size) < 0.2] = 0.0
            if (w > 0).sum() == 0:
                w[0] = 0.5
            c = connection_budget(LayerImportance(w, 100), cfg).c
            assert (c >= 1).all()
            order = np.argsort(w)
            assert (np.diff(c[order]) >= 0).all()


class TestSelectPerNeuron:
    def test_budget_at_fan_in_keeps_full_row(self):
        rng = np.random.default_rng(7)
        budget = ConnectionBudget(np.array([6, 2]))
        mask = select_per_neuron(fake_scores(rng), budget, fake_registry(), SelectorConfig())
        assert (mask.masks["block0.attn.q.weight"] == 1).all()

    def test_top2_of_three(self):
        reg = [ParamInfo("block0.attn.q.weight", (1, 3), 0)]
        scores = FisherScores({"block0.attn.q.weight": np.array([[0.9, 0.1, 0.9]])}, 1)
        mask = select_per_neuron(scores, ConnectionBudget(np.array([2])), reg,
                                 SelectorConfig(always_trainable=()))
        np.testing.assert_array_equal(mask.masks["block0.attn.q.weight"], [[1, 0, 1]])

    def test_rows_match_per_row_sort_oracle(self):
        rng = np.random.default_rng(8)
        reg = [ParamInfo("block0.attn.q.weight", (8, 8), 0)]
        s = rng.uniform(size=(8, 8))
        scores = FisherScores({"block0.attn.q.weight": s}, 1)
        mask = select_per_neuron(scores, ConnectionBudget(np.array([3])), reg,
                                 SelectorConfig(always_trainable=()))
        for r in range(8):
            oracle = sorted(range(8), key=lambda j: (-s[r, j], j))[:3]
            np.testing.assert_array_equal(np.flatnonzero(mask.masks["block0.attn.q.weight"][r]),
                                          np.sort(oracle))

    def test_always_trainable_and_frozen_rest(self):
        rng = np.random.default_rng(9)
        mask = select_per_neuron(fake_scores(rng), ConnectionBudget(np.array([1, 1])),
                                 fake_registry(), SelectorConfig())
        assert (mask.masks["head.weight"] == 1).all()
        assert (mask.masks["head.bias"] == 1).all()
        assert (mask.masks["block0.attn.q.bias"] == 0).all()

    def test_selected_count_identity(self):
        """Total ones = sum over matrices of rows * min(C_l, fan_in) + always sizes."""
        rng = np.random.default_rng(10)
        budget = ConnectionBudget(np.array([4, 9]))
        scores = fake_scores(rng)
        mask = select_per_neuron(scores, budget, fake_registry(), SelectorConfig())
        expected = 4 * min(4, 6) + 8 * min(9, 6) + 3 * 6 + 3
        assert mask.selected == expected

    def test_fraction_monotone_in_c_min_and_m(self):
        rng = np.random.default_rng(11)
        scores = fake_scores(rng)
        reg = fake_registry()
        fractions = []
        for c_min in (1, 2, 4):
            cfg = SelectorConfig(c_min=c_min)
            imp = layer_weights(top_m_set(scores, cfg), reg)
            mask = select_per_neuron(scores, connection_budget(imp, cfg), reg, cfg)
            fractions.append(mask.selected / mask.total)
        assert fractions == sorted(fractions)

        sizes = []
        for m in (1.0, 10.0, 50.0):
            top = top_m_set(scores, SelectorConfig(top_m_percent=m))
            sizes.append(top.indices.size)
        assert sizes == sorted(sizes)


class TestScaleInvariance:
    @pytest.mark.parametrize("factor", [1e-6, 1.0, 1e6])
    def test_mask_unchanged_under_score_scaling(self, factor):
        rng = np.random.default_rng(12)
        scores = fake_scores(rng)
        reg = fake_registry()
        cfg = SelectorConfig(top_m_percent=5.0, c_min=2)

        def build(s):
            imp = layer_weights(top_m_set(s, cfg), reg)
            return select_per_neuron(s, connection_budget(imp, cfg), reg, cfg)

        base = build(scores)
        scaled = build(scores.scaled(factor))
        for name in base.masks:
            np.testing.assert_array_equal(base.masks[name], scaled.masks[name])


class TestMaskOverlap:
    def test_self_overlap_is_one(self):
        rng = np.random.default_rng(13)
        mask = select_per_neuron(fake_scores(rng), ConnectionBudget(np.array([2, 2])),
                                 fake_registry(), SelectorConfig())
        assert mask_overlap(mask, mask) == 1.0

    def test_disjoint_masks_overlap_zero(self):
        from trpts.selection import SelectionMask
        a = SelectionMask({"x": np.array([1, 1, 0, 0], dtype=np.uint8)})
        b = SelectionMask({"x": np.array([0, 0, 1, 1], dtype=np.uint8)})
        assert mask_overlap(a, b) == 0.0

    def test_symmetry(self):
        from trpts.selection import SelectionMask
        rng = np.random.default_rng(14)
        a = SelectionMask({"x": (rng.uniform(size=50) < 0.4).astype(np.uint8)})
        b = SelectionMask({"x": (rng.uniform(size=50) < 0.4).astype(np.uint8)})
        assert mask_overlap(a, b) == mask_overlap(b, a)

    def test_incongruent_rejected(self):
        from trpts.selection import SelectionMask
        a = SelectionMask({"x": np.zeros(3, dtype=np.uint8)})
        b = SelectionMask({"y": np.zeros(3, dtype=np.uint8)})
        with pytest.raises(InputError):
            mask_overlap(a, b)
