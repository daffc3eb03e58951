import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modewise import metrics


class TestPointMetrics:
    def test_perfect_predictions(self):
        y = np.array([3.0, 7.0, 11.0])
        assert metrics.rmse(y, y) == 0.0
        assert metrics.mae(y, y) == 0.0
        assert metrics.mape(y, y) == 0.0

    def test_single_pair(self):
        assert metrics.rmse([0.0], [3.0]) == 3.0

    def test_hand_computed_rmse(self):
        assert metrics.rmse([3.0, 0.0], [0.0, 4.0]) == pytest.approx(np.sqrt(25 / 2))

    def test_hand_computed_mae_mape(self):
        assert metrics.mae([100.0], [90.0]) == 10.0
        assert metrics.mape([100.0], [90.0]) == pytest.approx(0.1)

    def test_mape_excludes_near_zero_truth(self):
        # (5, 0): in MAE, out of MAPE
        assert metrics.mae([0.0, 10.0], [5.0, 11.0]) == 3.0
        assert metrics.mape([0.0, 10.0], [5.0, 11.0]) == pytest.approx(0.1)

    def test_mape_with_nothing_left(self):
        with pytest.raises(ValueError):
            metrics.mape([0.0, 0.5], [1.0, 1.0])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            metrics.rmse([], [])

    @given(st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_rmse_dominates_mae(self, seed):
        rng = np.random.default_rng(seed)
        y = rng.uniform(0, 300, 30)
        p = y + rng.normal(0, 25, 30)
        assert metrics.rmse(y, p) >= metrics.mae(y, p) - 1e-12


class TestMonotonicityRatio:
    def test_strictly_decreasing(self):
        assert metrics.mr([[5.0, 4.0, 3.0]]) == 1.0

    def test_half(self):
        assert metrics.mr([[5.0, 5.0, 4.0]]) == 0.5

    def test_increasing(self):
        assert metrics.mr([[1.0, 2.0, 3.0]]) == 0.0

    def test_first_instance_excluded_and_singletons_ignored(self):
        # unit A contributes 2 pairs, the singleton unit B contributes nothing
        assert metrics.mr([[3.0, 2.0, 4.0], [9.0]]) == 0.5

    def test_true_labels_have_mr_one(self):
        seqs = [np.arange(t, -1, -1, dtype=float) for t in (5, 30, 12)]
        assert metrics.mr(seqs) == 1.0

    def test_no_pairs_rejected(self):
        with pytest.raises(ValueError):
            metrics.mr([[1.0], [2.0]])


class TestIntervalMae:
    def test_single_bucket(self):
        buckets = metrics.interval_mae([10.0, 40.0], [12.0, 44.0])
        assert len(buckets) == 1
        assert buckets[0].lo == 0.0 and buckets[0].hi == 50.0
        assert buckets[0].mae == pytest.approx(3.0)

    def test_empty_buckets_absent(self):
        buckets = metrics.interval_mae([10.0, 160.0], [10.0, 160.0])
        assert [(b.lo, b.hi) for b in buckets] == [(0.0, 50.0), (150.0, 200.0)]

    def test_two_buckets_hand_computed(self):
        y = [10.0, 20.0, 60.0]
        p = [13.0, 21.0, 50.0]
        buckets = metrics.interval_mae(y, p)
        assert buckets[0].mae == pytest.approx(2.0)
        assert buckets[1].mae == pytest.approx(10.0)

    @given(st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_buckets_aggregate_to_global_mae(self, seed):
        rng = np.random.default_rng(seed)
        y = rng.uniform(0, 400, 60)
        p = y + rng.normal(0, 30, 60)
        buckets = metrics.interval_mae(y, p)
        total = sum(b.mae * b.count for b in buckets)
        count = sum(b.count for b in buckets)
        assert count == 60
        assert total / count == pytest.approx(metrics.mae(y, p), abs=1e-9)


class TestReport:
    def _per_unit(self, rng, n_units=4):
        out = {}
        for u in range(1, n_units + 1):
            t = int(rng.integers(5, 30))
            y = np.arange(t + 40, 40, -1, dtype=float)[:t]
            p = y + rng.normal(0, 8, t)
            out[u] = (y, p)
        return out

    def test_report_fields_and_json(self, tmp_path):
        rng = np.random.default_rng(0)
        per_unit = self._per_unit(rng)
        report = metrics.make_report(per_unit)
        assert report.rmse >= report.mae
        assert 0.0 <= report.mr <= 1.0
        assert report.n_instances == sum(len(y) for y, _ in per_unit.values())
        f = metrics.save_report_json(tmp_path / "report.json", report)
        import json
        loaded = json.loads(f.read_text())
        assert loaded["mape_rule"] == metrics.MAPE_RULE
        assert loaded["rmse"] == pytest.approx(report.rmse)
        metrics.save_interval_csv(tmp_path / "intervals.csv", report)
        assert (tmp_path / "intervals.csv").read_text().startswith("rul_lo,rul_hi,mae,count")

    def test_metrics_invariant_under_unit_reordering(self):
        rng = np.random.default_rng(1)
        per_unit = self._per_unit(rng)
        r1 = metrics.make_report(per_unit)
        r2 = metrics.make_report(dict(reversed(list(per_unit.items()))))
        assert r1.rmse == pytest.approx(r2.rmse)
        assert r1.mae == pytest.approx(r2.mae)
        assert r1.mape == pytest.approx(r2.mape)
        assert r1.mr == pytest.approx(r2.mr)

    def test_fold_summary(self):
        rng = np.random.default_rng(2)
        reports = [metrics.make_report(self._per_unit(rng)) for _ in range(3)]
        stats = metrics.summarize_folds(reports)
        vals = [r.rmse for r in reports]
        assert stats["rmse"]["mean"] == pytest.approx(np.mean(vals))
        assert stats["rmse"]["std"] == pytest.approx(np.std(vals))


class TestClusteringDiagnostics:
    def test_identical_labelings_ari_one(self):
        labels = np.array([0, 0, 1, 1, 2])
        d = metrics.clustering_diagnostics(labels, reference=labels)
        assert d.adjusted_rand == pytest.approx(1.0)

    def test_independent_labelings_ari_near_zero(self):
        rng = np.random.default_rng(3)
        a = rng.integers(0, 3, 3000)
        b = rng.integers(0, 3, 3000)
        d = metrics.clustering_diagnostics(a, reference=b)
        assert abs(d.adjusted_rand) < 0.05

    def test_silhouette_matches_hand_computation(self):
        # 4 points on a line: {0, 1} and {10, 11}, euclidean distances
        x = np.array([0.0, 1.0, 10.0, 11.0])
        dist = np.abs(x[:, None] - x[None, :])
        labels = np.array([0, 0, 1, 1])
        # outer points (0, 11): a = 1, b = 10.5 -> s = 9.5/10.5
        # inner points (1, 10): a = 1, b = 9.5  -> s = 8.5/9.5
        expect = 0.5 * (9.5 / 10.5) + 0.5 * (8.5 / 9.5)
        d = metrics.clustering_diagnostics(labels, distance_matrix=dist)
        assert d.silhouette == pytest.approx(expect)

    def test_single_cluster_silhouette_absent(self):
        d = metrics.clustering_diagnostics(np.zeros(4, dtype=int),
                                           distance_matrix=np.ones((4, 4)))
        assert d.silhouette is None
