import numpy as np
import pytest

from wmgdiff.evaluate import (
    BenchmarkReport,
    MethodResult,
    MethodSpec,
    accuracy,
    fit_logistic,
    format_report_text,
    rmse,
    run_benchmark,
    write_report_csv,
)
from wmgdiff.table import EntryMask, FeatureTable


def make_table(values, present=None):
    values = np.asarray(values, dtype=float)
    n, c = values.shape
    if present is None:
        present = np.ones((n, c), dtype=bool)
    return FeatureTable(
        tuple(f"s{i}" for i in range(n)), tuple(f"c{j}" for j in range(c)), values, present
    )


class TestRmse:
    def test_exact_agreement_zero(self):
        t = make_table(np.random.default_rng(0).random((4, 3)))
        mask = np.zeros((4, 3), dtype=bool)
        mask[0, 0] = mask[2, 1] = True
        assert rmse(t, t, EntryMask(mask)) == 0.0

    def test_constant_offset(self):
        rng = np.random.default_rng(1)
        vals = rng.random((5, 4))
        a = make_table(vals)
        b = make_table(vals + 0.125)
        mask = np.zeros((5, 4), dtype=bool)
        mask[1, 1] = mask[3, 0] = mask[4, 2] = True
        assert rmse(b, a, EntryMask(mask)) == pytest.approx(0.125)

    def test_hand_rolled_oracle(self):
        rng = np.random.default_rng(2)
        truth_vals = rng.random((3, 4))
        imp_vals = rng.random((3, 4))
        picks = [(0, 1), (1, 2), (2, 0), (2, 3), (0, 0)]
        mask = np.zeros((3, 4), dtype=bool)
        acc = 0.0
        for r, c in picks:
            mask[r, c] = True
            acc += (imp_vals[r, c] - truth_vals[r, c]) ** 2
        expected = np.sqrt(acc / len(picks))
        got = rmse(make_table(imp_vals), make_table(truth_vals), EntryMask(mask))
        assert got == pytest.approx(expected, abs=1e-12)

    def test_ignores_entries_outside_mask(self):
        rng = np.random.default_rng(3)
        vals = rng.random((4, 4))
        other = vals.copy()
        other[0, 0] = 99.0  # outside the mask
        mask = np.zeros((4, 4), dtype=bool)
        mask[1, 1] = True
        assert rmse(make_table(other), make_table(vals), EntryMask(mask)) == 0.0

    def test_empty_mask_rejected(self):
        t = make_table(np.ones((2, 2)))
        with pytest.raises(ValueError, match="empty"):
            rmse(t, t, EntryMask(np.zeros((2, 2), dtype=bool)))

    def test_truth_missing_at_mask_rejected(self):
        vals = np.ones((2, 2))
        present = np.array([[True, False], [True, True]])
        truth = make_table(vals, present)
        mask = np.zeros((2, 2), dtype=bool)
        mask[0, 1] = True
        with pytest.raises(ValueError, match="missing"):
            rmse(make_table(vals), truth, EntryMask(mask))


class TestLogistic:
    def separable_data(self, n=40):
        rng = np.random.default_rng(4)
        x = rng.normal(0, 1, (n, 2))
        labels = (x[:, 0] + x[:, 1] > 0).astype(int)
        x[labels == 1] += 1.5
        x[labels == 0] -= 1.5
        return make_table(x), labels

    def test_separable_training_accuracy_one(self):
        features, labels = self.separable_data()
        m = fit_logistic(features, labels, l2=0.0, iters=3000, lr=0.5)
        assert accuracy(m, features, labels) == 1.0

    def test_huge_l2_shrinks_weights(self):
        features, labels = self.separable_data()
        m = fit_logistic(features, labels, l2=1e6, iters=500, lr=0.1)
        assert np.linalg.norm(m.weights) < 1e-3

    def test_first_order_stationarity(self):
        rng = np.random.default_rng(5)
        x = rng.normal(0, 1, (20, 3))
        labels = (rng.random(20) < 0.5).astype(int)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        l2 = 1e-2
        m = fit_logistic(make_table(x), labels, l2=l2, iters=20000, lr=0.3)
        xs = (x - m.feat_mean) / m.feat_std
        p = 1.0 / (1.0 + np.exp(-(xs @ m.weights + m.bias)))
        grad_w = xs.T @ (p - labels) / len(labels) + l2 * m.weights
        grad_b = (p - labels).mean()
        assert np.sqrt((grad_w**2).sum() + grad_b**2) < 1e-4

    def test_single_class_rejected(self):
        features, _ = self.separable_data()
        with pytest.raises(ValueError, match="class"):
            fit_logistic(features, np.ones(features.n_subjects))

    def test_missing_features_rejected(self):
        t = make_table(np.ones((4, 2)), present=np.array([[True, False]] * 4))
        with pytest.raises(ValueError, match="observed"):
            fit_logistic(t, np.array([0, 1, 0, 1]))

    def test_accuracy_manual_four_rows(self):
        m_features, labels = self.separable_data(40)
        m = fit_logistic(m_features, labels, iters=500)
        small = make_table(m_features.values[:4])
        probs = m.predict_proba(small)
        manual = np.mean((probs >= 0.5) == (labels[:4] == 1))
        assert accuracy(m, small, labels[:4]) == pytest.approx(manual)

    def test_label_inversion_complement(self):
        features, labels = self.separable_data()
        m = fit_logistic(features, labels, iters=1000)
        acc = accuracy(m, features, labels)
        assert accuracy(m, features, 1 - labels) == pytest.approx(1.0 - acc)

    def test_scale_invariant_decision_boundary_without_l2(self):
        features, labels = self.separable_data()
        m1 = fit_logistic(features, labels, l2=0.0, iters=2000, lr=0.5)
        scaled = make_table(features.values * np.array([10.0, 0.2]) + np.array([5.0, -3.0]))
        m2 = fit_logistic(scaled, labels, l2=0.0, iters=2000, lr=0.5)
        p1 = m1.predict_proba(features) >= 0.5
        p2 = m2.predict_proba(scaled) >= 0.5
        assert np.array_equal(p1, p2)


class TestRunBenchmark:
    def correlated_setup(self, n=60, c=6):
        rng = np.random.default_rng(6)
        z = rng.normal(0, 1, (n, 1))
        vals = 0.5 + 0.08 * z * rng.uniform(0.5, 1.5, c) + rng.normal(0, 0.02, (n, c))
        labels = (z[:, 0] + rng.normal(0, 0.8, n) > 0).astype(int)
        return make_table(np.clip(vals, 0, 1)), labels

    def test_constant_columns_give_zero_rmse_for_mean(self):
        vals = np.tile(np.linspace(0.2, 0.8, 5), (20, 1))
        labels = np.tile([0, 1], 10)
        report = run_benchmark(
            make_table(vals), labels, None, [MethodSpec(kind="mean")], folds=2, seed=0
        )
        assert all(v == pytest.approx(0.0, abs=1e-12) for v in report.methods[0].rmse_per_fold)

    def test_report_shape_and_rows(self):
        truth, labels = self.correlated_setup()
        methods = [MethodSpec(kind="mean"), MethodSpec(kind="zero")]
        report = run_benchmark(truth, labels, None, methods, folds=3, seed=1)
        assert len(report.methods) == 2
        assert all(len(m.rmse_per_fold) == 3 for m in report.methods)
        assert len(report.full_acc_per_fold) == 3

    def test_zero_worse_than_mean_on_fa_scale_data(self):
        truth, labels = self.correlated_setup()
        methods = [MethodSpec(kind="mean"), MethodSpec(kind="zero")]
        report = run_benchmark(truth, labels, None, methods, folds=3, seed=2)
        mean_rmse = np.mean(report.methods[0].rmse_per_fold)
        zero_rmse = np.mean(report.methods[1].rmse_per_fold)
        assert zero_rmse > mean_rmse

    def test_reproducible_with_same_seed(self):
        truth, labels = self.correlated_setup(n=40)
        methods = [MethodSpec(kind="mean"), MethodSpec(kind="chained")]
        a = run_benchmark(truth, labels, None, methods, folds=2, seed=5)
        b = run_benchmark(truth, labels, None, methods, folds=2, seed=5)
        for ma, mb in zip(a.methods, b.methods):
            assert ma.rmse_per_fold == mb.rmse_per_fold
            assert ma.acc_per_fold == mb.acc_per_fold
        assert a.full_acc_per_fold == b.full_acc_per_fold

    def test_method_failure_marks_cell_not_whole_run(self, monkeypatch):
        truth, labels = self.correlated_setup(n=40)

        import wmgdiff.evaluate as ev

        def boom(*args, **kwargs):
            raise RuntimeError("synthetic failure")

        monkeypatch.setattr(ev, "impute_chained", boom)
        report = run_benchmark(
            truth, labels, None,
            [MethodSpec(kind="chained"), MethodSpec(kind="mean")], folds=2, seed=0,
        )
        assert report.methods[0].rmse_per_fold == [None, None]
        assert all(v is not None for v in report.methods[1].rmse_per_fold)

    def test_duplicate_method_names_rejected(self):
        truth, labels = self.correlated_setup(n=40)
        with pytest.raises(ValueError, match="duplicate"):
            run_benchmark(truth, labels, None, [MethodSpec(kind="mean"), MethodSpec(kind="mean")], folds=2)

    def test_partially_observed_input_rejected(self):
        vals = np.ones((10, 3))
        present = np.ones((10, 3), dtype=bool)
        present[0, 0] = False
        with pytest.raises(ValueError, match="fully observed"):
            run_benchmark(
                make_table(vals, present), np.tile([0, 1], 5), None,
                [MethodSpec(kind="mean")], folds=2,
            )


class TestReportEmission:
    def make_report(self):
        return BenchmarkReport(
            methods=[
                MethodResult("mean", [0.1, 0.2], [0.7, 0.8]),
                MethodResult("zero", [0.4, 0.5], [0.5, 0.6]),
            ],
            full_acc_per_fold=[0.8, 0.9],
            folds=2,
            seed=7,
            missing_fraction=0.2,
        )

    def test_csv_layout(self, tmp_path):
        path = tmp_path / "report.csv"
        write_report_csv(self.make_report(), path)
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 4  # header + 2 methods + full_input
        header = lines[0].split(",")
        assert header[0] == "method"
        assert "rmse_mean" in header and "acc_std" in header
        assert lines[-1].startswith("full_input")

    def test_text_layout_mirrors_tables(self):
        text = format_report_text(self.make_report())
        assert "RMSE" in text and "ACC" in text
        assert "mean" in text and "zero" in text and "full input" in text
        assert "±" in text

    def test_failed_cells_render(self, tmp_path):
        report = self.make_report()
        report.methods[0].rmse_per_fold = [None, 0.2]
        report.methods[0].acc_per_fold = [None, 0.8]
        text = format_report_text(report)
        assert "failed" in text
        write_report_csv(report, tmp_path / "r.csv")  # must not raise
