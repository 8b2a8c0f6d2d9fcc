"""Ablation matrix and throughput bench."""

import numpy as np

from pose9d.harness import (VARIANTS, ablation_table, bench_throughput,
                            run_ablations, run_benchmark, variant_config)
from pose9d.metrics import COLUMNS
from pose9d.pipeline import PipelineConfig, TrainState, fit_standardizer

from test_pipeline import TINY, tiny_samples


class TestVariants:
    def test_seven_variants_with_fixed_names(self):
        names = [n for n, _ in VARIANTS]
        assert len(names) == 7
        assert names[0] == "full" and "no-timestep" in names

    def test_variant_configs_differ_where_stated(self):
        base = TINY
        for name, ov in VARIANTS:
            cfg = variant_config(base, ov)
            for key, val in ov.items():
                assert getattr(cfg, key) == val
        assert variant_config(base, {}) == base


class TestRunAblations:
    def _run(self, steps=2):
        train = tiny_samples(8)
        test = tiny_samples(4, seed0=900)
        return run_ablations(train, test, TINY, steps=steps,
                             sample_steps=4, seed=1)

    def test_all_variants_report(self):
        results = self._run()
        assert list(results) == [n for n, _ in VARIANTS]
        for res in results.values():
            mean = res["report"].mean
            for c in COLUMNS:
                assert 0.0 <= mean[c] <= 100.0
            assert res["final_loss"] >= 0.0

    def test_deterministic_across_reruns(self):
        a = self._run()
        b = self._run()
        for name in a:
            assert a[name]["report"].to_dict() == b[name]["report"].to_dict()
            assert a[name]["final_loss"] == b[name]["final_loss"]

    def test_table_shape(self):
        results = self._run()
        table = ablation_table(results)
        lines = table.splitlines()
        assert len(lines) == 2 + len(VARIANTS)
        for name, _ in VARIANTS:
            assert any(line.startswith(name) for line in lines)
        assert "deg10cm10" in lines[0]


class TestRunBenchmark:
    def _run(self):
        train = tiny_samples(8)
        test = tiny_samples(4, seed0=900)
        return run_benchmark(train, test, TINY, steps=3, sample_steps=4,
                             seed=1)

    def test_both_models_scored_on_same_split(self):
        res = self._run()
        assert list(res) == ["diffusion", "baseline"]
        for entry in res.values():
            assert entry["train_steps"] == 3
            assert entry["train_seconds"] > 0
            assert set(entry["report"].counts) == {"bottle"}
            for c in COLUMNS:
                assert 0.0 <= entry["report"].mean[c] <= 100.0

    def test_modes_actually_differ(self):
        res = self._run()
        assert res["diffusion"]["state"].mode == "diffusion"
        assert res["baseline"]["state"].mode == "baseline"
        assert res["diffusion"]["final_loss"] != res["baseline"]["final_loss"]

    def test_one_table_carries_both_rows(self):
        table = ablation_table(self._run(), label="model")
        lines = table.splitlines()
        assert lines[0].startswith("model")
        assert len(lines) == 4
        assert lines[2].startswith("diffusion")
        assert lines[3].startswith("baseline")


class TestBench:
    def test_report_structure(self):
        samples = tiny_samples(4)
        state = TrainState.init(TINY, fit_standardizer(samples))
        rep = bench_throughput(state, samples, n_steps=4, batch_size=8,
                               min_samples=16)
        assert rep["samples_per_sec"] > 0
        assert rep["n_samples"] >= 16
        assert rep["n_steps"] == 4 and rep["batch_size"] == 8
        np.testing.assert_allclose(
            rep["samples_per_sec"] * rep["wall_time_sec"], rep["n_samples"])
        assert "platform" in rep

    def test_fewer_steps_is_faster(self):
        samples = tiny_samples(4)
        state = TrainState.init(TINY, fit_standardizer(samples))
        slow = bench_throughput(state, samples, n_steps=40, batch_size=8,
                                min_samples=16)
        fast = bench_throughput(state, samples, n_steps=4, batch_size=8,
                                min_samples=16)
        assert fast["samples_per_sec"] > slow["samples_per_sec"]
