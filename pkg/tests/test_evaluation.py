import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from quce.attribution import featurewise_uncertainty
from quce.evaluation import (BenchmarkConfig, EvaluationError, deletion_score, path_uncertainty,
                             random_attribution, resample_path, run_benchmark, sample_indices,
                             set_counterfactual_uncertainty, set_reconstruction_error)
from quce.generator import CounterfactualResult, GeneratorConfig
from quce.models import MlpClassifier, VaeModel, vae_loss
from oracles import hand_vae


def constant_classifier(J, p1):
    logit = np.log(p1 / (1 - p1))
    return MlpClassifier([np.zeros((J, 2)), np.zeros((2, 1))], [np.zeros(2), np.array([logit])])


def result(xc, valid=True):
    xc = np.asarray(xc, dtype=np.float64)
    return CounterfactualResult(xc, xc[None, :], valid, 1, 0.9 if valid else 0.1)


def displaced(X, rng, distance=5.0):
    u = rng.normal(size=X.shape)
    return X + distance * u / np.linalg.norm(u, axis=1, keepdims=True)


class TestResample:
    def test_endpoints_and_uniform_spacing(self):
        path = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 2.0]])
        pts = resample_path(path, 4)
        # alpha = 0, 1/4, 1/2, 3/4 over two segments by cumulative index
        np.testing.assert_allclose(pts, [[0, 0], [0.5, 0], [1, 0], [1, 1]])

    def test_single_point(self):
        assert resample_path(np.ones((1, 3)), 5).shape == (5, 3)

    def test_errors(self):
        with pytest.raises(EvaluationError):
            resample_path(np.zeros((0, 2)))
        with pytest.raises(EvaluationError):
            resample_path(np.zeros((2, 2)), 0)


class TestPathUncertainty:
    def test_single_point(self, blobs):
        x = blobs["train"].features[0]
        mean, std = path_uncertainty(x[None, :], blobs["vae"], 1000)
        assert mean == pytest.approx(vae_loss(blobs["vae"], x)[2], rel=1e-14) and std == 0.0

    def test_one_step_evaluates_start_only(self, blobs):
        a, b = blobs["train"].features[:2]
        mean, std = path_uncertainty(np.stack([a, b]), blobs["vae"], 1)
        assert mean == vae_loss(blobs["vae"], a)[2] and std == 0.0

    def test_converges_with_steps(self, blobs):
        vae = blobs["vae"]
        path = blobs["train"].features[:6]
        line = path_uncertainty(path, vae, 200_000)[0]
        diffs = [abs(path_uncertainty(path, vae, s)[0] - line) for s in (10, 100, 1000)]
        assert diffs[0] > diffs[1] > diffs[2]

    def test_out_of_distribution_contrast(self, blobs):
        vae = blobs["vae"]
        X = blobs["train"].features[:30]
        far = displaced(X, np.random.default_rng(0))
        assert path_uncertainty(X, vae)[0] < path_uncertainty(far, vae)[0]


class TestSetMetrics:
    def test_singleton(self, blobs):
        x = blobs["train"].features[0]
        assert set_counterfactual_uncertainty([result(x)], blobs["vae"]) == vae_loss(blobs["vae"], x)[2]

    def test_invalid_excluded(self, blobs):
        x, y = blobs["train"].features[:2]
        got = set_counterfactual_uncertainty([result(x), result(y, valid=False)], blobs["vae"])
        assert got == vae_loss(blobs["vae"], x)[2]

    def test_all_invalid(self, blobs):
        with pytest.raises(EvaluationError):
            set_counterfactual_uncertainty([result(np.zeros(2), valid=False)], blobs["vae"])
        with pytest.raises(EvaluationError):
            set_reconstruction_error([result(np.zeros(2), valid=False)], blobs["vae"])

    def test_training_points_beat_displaced_points(self, blobs):
        X = blobs["train"].features[:50]
        far = displaced(X, np.random.default_rng(1))
        vae = blobs["vae"]
        assert set_counterfactual_uncertainty([result(x) for x in X], vae) <= \
            set_counterfactual_uncertainty([result(x) for x in far], vae)

    def test_identity_vae_reconstruction(self):
        assert set_reconstruction_error([result([1.0, 2.0]), result([-3.0, 0.5])], hand_vae(2)) == 0.0

    def test_reconstruction_is_summed_featurewise(self, wbc):
        X = wbc["test"].features[:15]
        got = set_reconstruction_error([result(x) for x in X], wbc["vae"])
        oracle = sum(float(np.sum(featurewise_uncertainty(x, wbc["vae"]))) for x in X) / len(X)
        assert got == pytest.approx(oracle, rel=1e-12)


class TestDeletion:
    def test_constant_classifier(self):
        curve = deletion_score(np.array([1.0, -2.0, 3.0]), np.array([0.3, 0.1, 0.2]),
                               constant_classifier(3, 0.7))
        np.testing.assert_allclose(curve.probabilities, 0.7, rtol=1e-14)
        assert curve.score == pytest.approx(0.7, rel=1e-14)

    def test_ties_go_to_lower_index(self, wbc):
        curve = deletion_score(wbc["test"].features[0], np.zeros(30), wbc["classifier"])
        assert curve.order.tolist() == list(range(30))

    def test_order_is_descending(self, wbc):
        phi = np.random.default_rng(0).normal(size=30)
        curve = deletion_score(wbc["test"].features[0], phi, wbc["classifier"])
        assert np.all(np.diff(phi[curve.order]) <= 0)

    @given(st.integers(0, 113), st.integers(0, 2 ** 32 - 1))
    def test_curve_invariants(self, wbc, i, seed):
        clf = wbc["classifier"]
        x = wbc["test"].features[i]
        phi = random_attribution(30, np.random.default_rng(seed))
        curve = deletion_score(x, phi, clf)
        c = int(clf.predict(x)[0])
        assert curve.probabilities.shape == (31,)
        assert curve.probabilities[0] == clf.predict_proba(x, c)[0]
        assert np.all((curve.probabilities >= 0) & (curve.probabilities <= 1))
        # all features replaced: the curve ends at the baseline point
        assert curve.probabilities[-1] == pytest.approx(clf.predict_proba(np.zeros(30), c)[0], abs=1e-15)

    def test_custom_baseline(self, blobs):
        x = np.array([2.0, 1.0])
        curve = deletion_score(x, np.array([1.0, 0.0]), blobs["classifier"], baseline=np.array([-1.0, -1.0]))
        c = int(blobs["classifier"].predict(x)[0])
        assert curve.probabilities[1] == blobs["classifier"].predict_proba(np.array([-1.0, 1.0]), c)[0]

    def test_dimension_mismatch(self, wbc):
        with pytest.raises(EvaluationError):
            deletion_score(np.zeros(30), np.zeros(29), wbc["classifier"])


class TestBenchmark:
    def cfg(self, n=10, **kw):
        return BenchmarkConfig(instances=n, steps=100, **kw)

    def test_single_method_plumbing(self, blobs):
        report = run_benchmark({"train": blobs["train"], "test": blobs["test"]}, blobs["classifier"],
                               blobs["vae"], ["quce"], self.cfg())
        assert [(r.method, r.split, r.n_instances) for r in report.rows] == [("quce", "train", 10), ("quce", "test", 10)]
        assert report.random_deletion["train"]["count"] == 10

    def test_all_methods_and_determinism(self, blobs):
        args = ({"train": blobs["train"]}, blobs["classifier"], blobs["vae"])
        a = run_benchmark(*args, cfg=self.cfg(8))
        b = run_benchmark(*args, cfg=self.cfg(8))
        assert a.to_json() == b.to_json()
        assert [r.method for r in a.rows] == ["quce", "ig-quce", "agi", "proximity-only"]
        doc = json.loads(a.to_json())
        assert doc["schema_version"] == 1
        for r in a.rows:
            assert r.path_uncertainty_std is None or r.path_uncertainty_std >= 0
            assert r.n_valid <= r.n_instances

    def test_instance_order_does_not_matter(self, blobs):
        data = blobs["train"].subset(np.arange(12))
        perm = np.random.default_rng(3).permutation(12)
        shuffled = data.subset(perm)
        a = run_benchmark(data, blobs["classifier"], blobs["vae"], cfg=self.cfg(50))
        b = run_benchmark(shuffled, blobs["classifier"], blobs["vae"], cfg=self.cfg(50))
        for ra, rb in zip(a.rows, b.rows):
            for field in ("path_uncertainty_mean", "counterfactual_uncertainty",
                          "reconstruction_error", "deletion_score"):
                assert getattr(ra, field) == pytest.approx(getattr(rb, field), rel=1e-12)

    def test_table_layout(self, blobs):
        report = run_benchmark({"train": blobs["train"], "test": blobs["test"]}, blobs["classifier"],
                               blobs["vae"], ["quce", "agi"], self.cfg(4), dataset_name="blobs")
        table = report.to_table()
        for heading in ("Path L_eps", "Counterfactual L_eps", "Counterfactual Reconstruction", "Deletion"):
            assert heading in table
        assert "QUCE" in table and "AGI" in table and "Random" in table and "(n=4)" in table

    def test_rejects_untrained_vae(self, blobs):
        with pytest.raises(EvaluationError):
            run_benchmark(blobs["train"], blobs["classifier"], VaeModel.init(2), cfg=self.cfg())

    def test_rejects_unknown_method(self, blobs):
        with pytest.raises(EvaluationError):
            run_benchmark(blobs["train"], blobs["classifier"], blobs["vae"], ["dice"], self.cfg())

    def test_sample_indices(self):
        assert sample_indices(5, 100, 0).tolist() == [0, 1, 2, 3, 4]
        idx = sample_indices(100, 10, 1)
        assert len(set(idx.tolist())) == 10 and idx.tolist() == sorted(idx.tolist())

    def test_invalid_rows_counted(self, blobs):
        cfg = BenchmarkConfig(instances=5, steps=50, generator=GeneratorConfig(max_iter=1), agi_steps=1)
        report = run_benchmark(blobs["test"], blobs["classifier"], blobs["vae"], ["quce"], cfg)
        row = report.rows[0]
        assert row.n_valid == 0 and row.path_uncertainty_mean is None and row.deletion_score is not None
