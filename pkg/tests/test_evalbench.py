import json

import numpy as np
import pytest

from volseg.evalbench import (
    BenchmarkConfig,
    EvalCase,
    dice3d,
    run_benchmark,
    run_oracle_eval,
    run_slice_benchmark,
    run_volume_benchmark,
)
from volseg.phantom import PhantomSpec, phantom_generate
from volseg.propagate import PerfectOracleSegmenter
from volseg.report import emit_report


def perfect_factory(volume, labels, class_id):
    return PerfectOracleSegmenter(labels.labels, class_id, lowres_size=8)


@pytest.fixture(scope="module")
def cases():
    out = []
    for seed in range(3):
        spec = PhantomSpec(
            dims=(13, 40, 40), kind="sphere", center=(6, 20, 20),
            radii=(4.0 + seed * 0.5,), noise_sigma_hu=5.0, seed=seed,
        )
        vol, labels = phantom_generate(spec)
        out.append(EvalCase(f"vol{seed}", vol, labels, [1]))
    return out


class TestDice3d:
    def test_equal(self):
        m = np.zeros((4, 5, 5), dtype=bool)
        m[1:3, 1:4, 1:4] = True
        assert dice3d(m, m.copy()) == 1.0

    def test_disjoint(self):
        a = np.zeros((2, 4, 4), dtype=bool)
        b = np.zeros((2, 4, 4), dtype=bool)
        a[0, 0, 0] = True
        b[1, 3, 3] = True
        assert dice3d(a, b) == 0.0

    def test_half_overlap(self):
        a = np.zeros((1, 4, 4), dtype=bool)
        b = np.zeros((1, 4, 4), dtype=bool)
        a.flat[:8] = True
        b.flat[4:12] = True
        assert dice3d(a, b) == 0.5

    def test_both_empty(self):
        z = np.zeros((2, 2, 2), dtype=bool)
        assert dice3d(z, z) == 1.0

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        a = rng.uniform(size=(3, 6, 6)) > 0.5
        b = rng.uniform(size=(3, 6, 6)) > 0.5
        assert dice3d(a, b) == dice3d(b, a)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            dice3d(np.zeros((2, 2, 2), bool), np.zeros((3, 2, 2), bool))


class TestVolumeBenchmark:
    def test_perfect_oracle_all_ones(self, cases):
        for budget in (0, 3):
            cfg = BenchmarkConfig(protocol="volume", edit_budget=budget, seed=1)
            report = run_volume_benchmark(perfect_factory, cases, cfg)
            assert len(report.rows) == 3
            assert all(r.dice == 1.0 for r in report.rows)

    def test_budget_zero_trajectory(self, cases):
        cfg = BenchmarkConfig(protocol="volume", edit_budget=0, seed=1)
        report = run_volume_benchmark(perfect_factory, cases, cfg)
        assert all(len(r.trajectory) == 1 for r in report.rows)

    def test_absent_class_skipped(self, cases):
        bad = [EvalCase(cases[0].volume_id, cases[0].volume, cases[0].labels, [1, 7])]
        cfg = BenchmarkConfig(protocol="volume", seed=0)
        report = run_volume_benchmark(perfect_factory, bad, cfg)
        assert report.skipped == 1
        assert len(report.rows) == 1

    def test_one_initial_prompt_plus_boundaries(self, cases):
        # volume protocol issues exactly one prompt; edits only extend it
        calls = []

        class CountingOracle(PerfectOracleSegmenter):
            def predict(self, volume, k, prompt_set):
                calls.append((k, prompt_set))
                return super().predict(volume, k, prompt_set)

        def factory(volume, labels, class_id):
            return CountingOracle(labels.labels, class_id, lowres_size=8)

        cfg = BenchmarkConfig(protocol="volume", edit_budget=0, seed=1)
        run_volume_benchmark(factory, cases[:1], cfg)
        initial = [ps for _, ps in calls if ps.mask is None and (ps.box or ps.points)]
        assert len(initial) == 1


class TestSliceBenchmark:
    def test_perfect_oracle(self, cases):
        cfg = BenchmarkConfig(protocol="slice", edit_budget=0, seed=1)
        report = run_slice_benchmark(perfect_factory, cases, cfg)
        assert all(r.dice == 1.0 for r in report.rows)

    def test_single_slice_object_matches_volume_protocol(self):
        spec = PhantomSpec(dims=(9, 24, 24), kind="ellipsoid", center=(4, 12, 12),
                           radii=(1.2, 6.0, 6.0), seed=3)
        vol, labels = phantom_generate(spec)
        zs = np.flatnonzero((labels.labels == 1).any(axis=(1, 2)))
        case = EvalCase("one", vol, labels, [1])
        v = run_volume_benchmark(perfect_factory, [case], BenchmarkConfig(protocol="volume", seed=2))
        s = run_slice_benchmark(perfect_factory, [case], BenchmarkConfig(protocol="slice", seed=2))
        assert v.rows[0].dice == s.rows[0].dice == 1.0

    def test_oracle_eval_reports_both(self, cases):
        cfg = BenchmarkConfig(protocol="slice", prompt_type="box", seed=4)
        report = run_oracle_eval(perfect_factory, cases, cfg)
        assert all(r.dice_oracle is not None for r in report.rows)
        assert all(r.dice_oracle >= 0 for r in report.rows)
        assert report.summaries[0].mean_dice_oracle == 1.0


class TestDeterminism:
    def test_reports_byte_identical(self, cases):
        cfg = BenchmarkConfig(protocol="volume", edit_budget=2, seed=9)
        a = emit_report(run_volume_benchmark(perfect_factory, cases, cfg))
        b = emit_report(run_volume_benchmark(perfect_factory, cases, cfg))
        assert a == b


def test_config_validation():
    with pytest.raises(ValueError):
        BenchmarkConfig(edit_budget=-1)
    with pytest.raises(ValueError):
        BenchmarkConfig(protocol="slice", mode="bbox")


def test_run_benchmark_dispatch(cases):
    v = run_benchmark(perfect_factory, cases, BenchmarkConfig(protocol="volume", seed=1))
    s = run_benchmark(perfect_factory, cases, BenchmarkConfig(protocol="slice", seed=1))
    assert v.config["protocol"] == "volume"
    assert s.config["protocol"] == "slice"
