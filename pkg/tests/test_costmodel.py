"""Cost-accounting tests: worked arithmetic points, surface shape, exact pair
ratios, and the serial fallback path."""

import math

import numpy as np
import pytest

from t3s.costmodel import (
    CostReport,
    count_pairs,
    dense_score_entries,
    exact_pair_ratio,
    measure,
    theoretical_costs,
)
from t3s.errors import ContractError
from t3s.numkernel import Rng
from t3s.packer import pack
from t3s.sampler import SamplerConfig, TrialPlan, build_trial_plans
from t3s.toymodel import (
    ModelConfig,
    NeedleProbe,
    StreamSpec,
    build_model,
    embed_frames,
    needle_direction,
)

CFG = ModelConfig(layers=2, model_dim=16, heads=2, vocab=16, max_positions=8192, init_seed=2)


def _setup(total_frames=16, tokens_per_frame=4, per_trial=16, ratios=(0.5, 0.3), seed=0):
    video = embed_frames(StreamSpec(total_frames, tokens_per_frame), CFG, Rng(seed))
    L = per_trial * tokens_per_frame
    full = TrialPlan(
        np.arange(per_trial, dtype=np.int64), np.arange(L, dtype=np.int64), 1.0
    )
    baseline = pack([full], video, [])
    sampler = SamplerConfig(
        total_frames=total_frames,
        frames_per_trial=per_trial,
        tokens_per_frame=tokens_per_frame,
        trials=len(ratios),
        ratios=ratios,
    )
    plans = build_trial_plans(sampler, Rng(seed, 1))
    multi = pack(plans, video, [])
    return video, baseline, multi, plans, L


class TestTheoreticalCosts:
    def test_worked_point_point_six_squared(self):
        base, multi, speedup = theoretical_costs(1000, [0.6, 0.6])
        assert multi / base == 0.72  # exact in binary floating point
        assert abs(speedup - 1.0 / 0.72) < 1e-12

    def test_identity_ratio(self):
        base, multi, speedup = theoretical_costs(64, [1.0])
        assert multi == base
        assert speedup == 1.0

    def test_reference_ratios(self):
        _, _, speedup = theoretical_costs(4096, [0.5, 0.3])
        assert abs(speedup - 1.0 / (0.5**2 + 0.3**2)) < 1e-12
        assert abs(speedup - 2.9411764705882355) < 1e-12

    def test_savings_iff_sum_of_squares_below_one(self):
        for alphas in ([0.9, 0.5], [0.71, 0.71], [1.0], [0.4, 0.4, 0.4]):
            base, multi, _ = theoretical_costs(100, alphas)
            assert (multi < base) == (sum(a * a for a in alphas) < 1.0)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ContractError):
            theoretical_costs(0, [0.5])
        with pytest.raises(ContractError):
            theoretical_costs(10, [0.0])
        with pytest.raises(ContractError):
            theoretical_costs(10, [1.5])


class TestSpeedupSurface:
    def test_strictly_decreasing_in_each_ratio(self):
        grid = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
        for a2 in grid:
            speedups = [theoretical_costs(64, [a1, a2])[2] for a1 in grid]
            assert all(b < a for a, b in zip(speedups, speedups[1:]))
        for a1 in grid:
            speedups = [theoretical_costs(64, [a1, a2])[2] for a2 in grid]
            assert all(b < a for a, b in zip(speedups, speedups[1:]))

    def test_equal_ratio_diagonal(self):
        for a in (0.3, 0.5, 0.9):
            _, _, speedup = theoretical_costs(128, [a, a])
            assert abs(speedup - 1.0 / (2 * a * a)) < 1e-12
        _, _, at_crossing = theoretical_costs(128, [1 / math.sqrt(2)] * 2)
        assert abs(at_crossing - 1.0) < 1e-12


class TestPairCounts:
    def test_single_segment_triangle(self):
        video, baseline, _, _, L = _setup()
        model = build_model(CFG)
        assert (
            count_pairs(model, baseline)
            == CFG.layers * CFG.heads * L * (L + 1) // 2
        )

    def test_ratio_matches_floor_formula_exactly(self):
        # integer identity: pairs_multi * L(L+1) == pairs_base * sum(l_i(l_i+1))
        for ratios in [(0.5, 0.3), (0.6, 0.6), (0.9, 0.2, 0.4)]:
            _, baseline, multi, _, L = _setup(ratios=ratios)
            probe = NeedleProbe(
                needle_direction(CFG.model_dim), 1, CFG.vocab, noise_scale=0.0
            )
            pairs_base = count_pairs(probe, baseline)
            pairs_multi = count_pairs(probe, multi)
            num = sum(int(a * L) * (int(a * L) + 1) for a in ratios)
            assert pairs_multi * L * (L + 1) == pairs_base * num
            assert abs(
                pairs_multi / pairs_base - exact_pair_ratio(L, ratios)
            ) < 1e-15

    def test_invariant_under_segment_reordering(self):
        video, _, _, plans, _ = _setup(ratios=(0.7, 0.4, 0.2))
        probe = NeedleProbe(
            needle_direction(CFG.model_dim), 1, CFG.vocab, noise_scale=0.0
        )
        forward_order = count_pairs(probe, pack(plans, video, [1]))
        reverse_order = count_pairs(probe, pack(plans[::-1], video, [1]))
        assert forward_order == reverse_order


class TestMeasure:
    def test_report_fields_and_bounds(self):
        _, baseline, multi, _, L = _setup()
        probe = NeedleProbe(
            needle_direction(CFG.model_dim), 1, CFG.vocab, noise_scale=0.0
        )
        report = measure(probe, baseline, multi, [0.5, 0.3], repeats=3)
        assert report.L == L
        assert report.alpha == [0.5, 0.3]
        assert report.tau1 > 0 and report.tau2 > 0
        assert report.measured_speedup == report.tau1 / report.tau2
        assert not report.fallback_serial
        assert report.measured_pairs_multi < report.measured_pairs_base

    def test_serial_fallback_triggers_on_budget(self):
        _, baseline, multi, _, _ = _setup()
        probe = NeedleProbe(
            needle_direction(CFG.model_dim), 1, CFG.vocab, noise_scale=0.0
        )
        assert dense_score_entries(multi) > 1
        report = measure(
            probe, baseline, multi, [0.5, 0.3], repeats=3, memory_budget_entries=1
        )
        assert report.fallback_serial
        # serial per-trial forwards count exactly the same pairs
        direct = measure(probe, baseline, multi, [0.5, 0.3], repeats=3)
        assert report.measured_pairs_multi == direct.measured_pairs_multi

    def test_repeats_floor(self):
        _, baseline, multi, _, _ = _setup()
        probe = NeedleProbe(
            needle_direction(CFG.model_dim), 1, CFG.vocab, noise_scale=0.0
        )
        with pytest.raises(ContractError):
            measure(probe, baseline, multi, [0.5, 0.3], repeats=2)

    def test_baseline_must_be_single_segment(self):
        _, baseline, multi, _, _ = _setup()
        probe = NeedleProbe(
            needle_direction(CFG.model_dim), 1, CFG.vocab, noise_scale=0.0
        )
        with pytest.raises(ContractError):
            measure(probe, multi, multi, [0.5, 0.3], repeats=3)


class TestCostReportJson:
    def test_exact_field_names(self):
        report = CostReport(
            L=10,
            alpha=[0.5],
            theoretical_base=100.0,
            theoretical_multi=25.0,
            theoretical_speedup=4.0,
            measured_pairs_base=55,
            measured_pairs_multi=15,
        )
        d = report.to_json_dict()
        assert list(d) == [
            "L",
            "alpha",
            "theoretical_base",
            "theoretical_multi",
            "theoretical_speedup",
            "measured_pairs_base",
            "measured_pairs_multi",
            "tau1",
            "tau2",
            "measured_speedup",
            "fallback_serial",
        ]
        assert d["tau1"] is None
        assert d["fallback_serial"] is False
