"""Reporting tests: FLOPs vs an instrumented forward, histograms, overlap, tables."""

import numpy as np
import pytest

from trpts.errors import InputError
from trpts.fisher import FisherScores
from trpts.refine import RefinePlan
from trpts.reporting import (
    ExperimentReport,
    ablation_table,
    flops_report,
    layer_distribution,
    overlap_matrix,
    write_ablation_csv,
)
from trpts.selection import SelectionMask, SelectorConfig, top_m_set
from trpts.vit import FlopCounter, ModelConfig, forward, init_model, param_shapes


class TestFlopsReport:
    def test_no_plan_equals_rho_one(self):
        cfg = ModelConfig(embed_dim=16, num_heads=2, num_layers=4, patch_size=8,
                          num_classes=2)
        none = flops_report(cfg, None)
        identity = flops_report(cfg, RefinePlan((1, 2), rho=1.0))
        assert none.total_planned == identity.total_planned
        assert none.total_planned == none.total_unplanned

    def test_formula_structure_under_token_halving(self):
        """Halving tokens: the T^2 attention term quarters, the T terms halve."""
        from trpts.reporting import _block_flops
        d, hidden, t = 16, 64, 32
        attn_full, mlp_full = _block_flops(t, d, hidden)
        attn_half, mlp_half = _block_flops(t // 2, d, hidden)
        assert mlp_half * 2 == mlp_full
        linear_full, quad_full = 8 * t * d * d, 4 * t * t * d
        assert attn_full == linear_full + quad_full
        assert attn_half == linear_full // 2 + quad_full // 4

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_instrumented_forward(self, seed):
        rng = np.random.default_rng(seed)
        heads = int(rng.choice([2, 4]))
        cfg = ModelConfig(
            image_height=16, image_width=16, channels=1,
            patch_size=int(rng.choice([4, 8])),
            embed_dim=heads * int(rng.choice([4, 8])),
            num_layers=int(rng.integers(2, 5)),
            num_heads=heads,
            mlp_ratio=int(rng.choice([2, 4])),
            num_classes=3, seed=seed,
        )
        if rng.uniform() < 0.3:
            plan = None
        else:
            n_layers = int(rng.integers(1, cfg.num_layers))
            layers = tuple(sorted(rng.choice(range(1, cfg.num_layers), size=n_layers,
                                             replace=False).tolist()))
            plan = RefinePlan(layers, rho=float(rng.choice([0.5, 0.8, 0.95, 1.0])))
        model = init_model(cfg)
        counter = FlopCounter()
        forward(model, rng.uniform(0, 1, size=(1, 16, 16, 1)), plan=plan, flops=counter)
        report = flops_report(cfg, plan)
        assert counter.total == report.total_planned

    def test_reduction_fraction_positive_for_real_plan(self):
        cfg = ModelConfig()  # 12 layers, 64 tokens
        report = flops_report(cfg, RefinePlan((4, 7, 10), rho=0.8))
        assert 0 < report.reduction_fraction < 1

    def test_counts_are_reproducible_integers(self):
        cfg = ModelConfig(num_layers=3, patch_size=8)
        plan = RefinePlan((1,), rho=0.8)
        a, b = flops_report(cfg, plan), flops_report(cfg, plan)
        assert isinstance(a.total_planned, int)
        assert a.to_dict() == b.to_dict()


class TestLayerDistribution:
    def _scores_and_registry(self):
        cfg = ModelConfig(image_height=8, image_width=8, patch_size=4, embed_dim=8,
                          num_layers=2, num_heads=2, num_classes=2)
        registry = param_shapes(cfg)
        rng = np.random.default_rng(0)
        scores = FisherScores(
            {info.name: rng.uniform(size=info.shape) for info in registry}, 1
        )
        return scores, registry

    def test_single_block_takes_all(self):
        scores, registry = self._scores_and_registry()
        for name in scores.scores:
            if not name.startswith("block0.attn"):
                scores.scores[name][:] = 0.0
        cfg = SelectorConfig(top_m_percent=2.0)
        dist = layer_distribution(top_m_set(scores, cfg), registry)
        assert dist.fractions[0] == 1.0
        assert dist.non_block == 0

    def test_fractions_match_layer_weights(self):
        from trpts.selection import layer_weights
        scores, registry = self._scores_and_registry()
        cfg = SelectorConfig(top_m_percent=7.0)
        top = top_m_set(scores, cfg)
        dist = layer_distribution(top, registry)
        imp = layer_weights(top, registry)
        np.testing.assert_array_equal(dist.fractions, imp.w)

    def test_counts_sum_to_top_size(self):
        scores, registry = self._scores_and_registry()
        top = top_m_set(scores, SelectorConfig(top_m_percent=13.0))
        dist = layer_distribution(top, registry)
        assert dist.counts.sum() + dist.non_block == dist.top_size == top.indices.size


class TestOverlapMatrix:
    def _mask(self, bits):
        return SelectionMask({"x": np.array(bits, dtype=np.uint8)})

    def test_identical_masks_give_all_ones(self):
        m = self._mask([1, 0, 1, 1])
        out = overlap_matrix([m, m, m])
        np.testing.assert_array_equal(out, np.ones((3, 3)))

    def test_symmetric_unit_diagonal_bounded(self):
        rng = np.random.default_rng(1)
        masks = [self._mask((rng.uniform(size=30) < 0.5).astype(np.uint8))
                 for _ in range(4)]
        out = overlap_matrix(masks)
        np.testing.assert_array_equal(out, out.T)
        np.testing.assert_array_equal(np.diag(out), 1.0)
        assert ((out >= 0) & (out <= 1)).all()

    def test_half_shared_constructed_case(self):
        """|A| = |B| = 2k with k shared: Jaccard = k / 3k = 1/3."""
        a = self._mask([1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0])
        b = self._mask([1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0])
        out = overlap_matrix([a, b])
        assert out[0, 1] == pytest.approx(1 / 3)

    def test_single_mask_rejected(self):
        with pytest.raises(InputError):
            overlap_matrix([self._mask([1, 0])])


def _report(variant, rho=None, accuracy=0.5):
    return ExperimentReport(
        task="quadrant-class", variant=variant, accuracy=accuracy,
        trainable_fraction=0.01, layer_weights=[0.5, 0.5], budgets=[1, 1],
        plan=None, flops={}, seed=0, config_hash="abc", rho=rho,
    )


class TestAblationTable:
    def test_four_cells(self):
        rows = ablation_table([_report(v) for v in
                               ("neither", "token-only", "param-only", "both")])
        assert len(rows) == 4
        assert all(row["accuracy"] == 0.5 for row in rows)

    def test_missing_cell_marked_absent(self):
        rows = ablation_table([_report("both")])
        by_variant = {r["variant"]: r for r in rows}
        assert by_variant["neither"]["accuracy"] == "absent"
        assert by_variant["both"]["accuracy"] == 0.5

    def test_duplicate_rejected(self):
        with pytest.raises(InputError):
            ablation_table([_report("both"), _report("both")])

    def test_placement_restricts_rho(self):
        with pytest.raises(InputError):
            ablation_table([_report("sparse", rho=0.7)], table="placement")

    def test_placement_six_cells(self, tmp_path):
        reports = [_report(m, rho=r) for m in ("dense", "random", "sparse")
                   for r in (0.95, 0.8)]
        rows = ablation_table(reports, table="placement")
        assert len(rows) == 6
        write_ablation_csv(rows, tmp_path / "ablation.csv")
        lines = (tmp_path / "ablation.csv").read_text().strip().splitlines()
        assert len(lines) == 7
