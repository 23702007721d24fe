import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from quce.generator import (CounterfactualSet, GeneratorConfig, generate_counterfactual,
                            generate_counterfactual_set, objective_gradient, path_seed,
                            quce_objective)
from quce.models import MlpClassifier, VaeModel
from oracles import central_difference, mlp_probability, relative_error, vae_terms

coords = st.floats(-3, 3, allow_nan=False)


def zero_classifier(J=2):
    return MlpClassifier([np.zeros((J, 3)), np.zeros((3, 1))], [np.zeros(3), np.zeros(1)])


def saturated_classifier(J=2):
    # logit = 1000 everywhere, so F(0|x) underflows to exactly zero
    return MlpClassifier([np.zeros((J, 3)), np.zeros((3, 1))], [np.zeros(3), np.array([1000.0])])


def class0_points(model, data, k):
    idx = np.where(model["classifier"].predict(data.features) == 0)[0]
    return data.features[idx[:k]]


class TestObjective:
    def test_zero_proximity_at_origin(self, blobs):
        x = np.array([0.4, -0.2])
        t = quce_objective(x, x, 1, (0, 1, 0), blobs["classifier"], blobs["vae"])
        assert t.total == 0.0 and t.proximity == 0.0

    def test_log_two(self):
        t = quce_objective(np.zeros(2), np.ones(2), 1, (1, 0, 0), zero_classifier(), None)
        assert t.total == pytest.approx(np.log(2), abs=1e-15)
        assert t.uncertainty == 0.0 and not t.floored

    def test_frozen_term_values(self):
        clf = MlpClassifier.init([2, 32, 16, 1], seed=0)
        vae = VaeModel.init(2, seed=0)
        vae.freeze()
        x, xc = np.array([0.3, -1.2]), np.array([1.1, 0.4])
        t = quce_objective(x, xc, 1, (1, 0.5, 0.5), clf, vae)
        # values from the numpy oracle in tests/oracles.py
        assert t.prediction == pytest.approx(0.6287605874640467, rel=1e-12)
        assert t.proximity == pytest.approx(1.6, rel=1e-12)
        assert t.uncertainty == pytest.approx(0.9321079349623274, rel=1e-12)
        assert t.total == pytest.approx(1.8948145549452104, rel=1e-12)

    @given(arrays(np.float64, 2, elements=coords), arrays(np.float64, 2, elements=coords),
           st.sampled_from([0, 1]), st.tuples(*[st.floats(0, 2)] * 3))
    def test_term_by_term_oracle(self, blobs, x, xc, tau, lam):
        if max(lam) == 0:
            return
        clf, vae = blobs["classifier"], blobs["vae"]
        t = quce_objective(x, xc, tau, lam, clf, vae)
        p = max(mlp_probability(clf.weights, clf.biases, xc, tau)[0], 1e-12)
        kl, recon = vae_terms(vae, xc)
        terms = (-np.log(p), 0.5 * np.sum((xc - x) ** 2), kl + recon)
        oracle = sum(w * v for w, v in zip(lam, terms))
        assert t.total == pytest.approx(oracle, rel=1e-12, abs=1e-14)
        for got, want in zip((t.prediction, t.proximity, t.uncertainty), terms):
            assert got == pytest.approx(want, rel=1e-12, abs=1e-14)

    def test_gradient_against_finite_differences(self, wbc):
        clf, vae = wbc["classifier"], wbc["vae"]
        rng = np.random.default_rng(0)
        for x in wbc["test"].features[:10]:
            xc = x + rng.normal(scale=0.5, size=x.size)
            g = objective_gradient(x, xc, 0, (1, 0.5, 0.5), clf, vae)
            fd = central_difference(lambda v: quce_objective(x, v, 0, (1, 0.5, 0.5), clf, vae).total, xc)
            assert relative_error(g, fd).max() <= 1e-5

    def test_probability_floor_flag(self):
        t = quce_objective(np.zeros(2), np.zeros(2), 0, (1, 0, 0), saturated_classifier(), None)
        assert t.floored
        assert t.prediction == pytest.approx(-np.log(1e-12))

    def test_uncertainty_weight_needs_vae(self):
        with pytest.raises(ValueError, match="VAE"):
            quce_objective(np.zeros(2), np.zeros(2), 1, (1, 0, 1), zero_classifier(), None)

    def test_dimension_mismatch(self, blobs):
        with pytest.raises(ValueError):
            quce_objective(np.zeros(3), np.zeros(2), 1, (1, 1, 1), blobs["classifier"], blobs["vae"])


class TestConfig:
    @pytest.mark.parametrize("kwargs", [
        {"lambdas": (0, 0, 0)}, {"lambdas": (1, -1, 0)}, {"lambdas": (1, 1)},
        {"lr": 0.0}, {"lr": 1.0}, {"max_iter": 0}, {"jitter": -0.1}, {"threshold": 1.0},
    ])
    def test_rejects(self, kwargs):
        with pytest.raises(ValueError):
            GeneratorConfig(**kwargs)

    def test_defaults(self):
        cfg = GeneratorConfig()
        assert (cfg.lambdas, cfg.lr, cfg.max_iter, cfg.optimizer, cfg.early_stop) == \
            ((1.0, 0.5, 0.5), 0.05, 500, "adam", True)


class TestGenerate:
    def test_already_in_target_class(self, blobs):
        clf = blobs["classifier"]
        x = blobs["train"].features[clf.predict(blobs["train"].features) == 1][0]
        r = generate_counterfactual(x, 1, GeneratorConfig(), clf, blobs["vae"])
        assert r.valid and r.iterations == 0
        assert r.path.shape == (1, 2) and np.array_equal(r.counterfactual, x)

    def test_pure_proximity_stays_put(self, blobs):
        for x in blobs["test"].features[:20]:
            r = generate_counterfactual(x, 1, GeneratorConfig(lambdas=(0, 1, 0)),
                                        blobs["classifier"], blobs["vae"])
            assert np.linalg.norm(r.counterfactual - x) <= 1e-3

    def test_blobs_counterfactual_is_valid(self, blobs):
        clf = blobs["classifier"]
        for x in class0_points(blobs, blobs["test"], 10):
            r = generate_counterfactual(x, 1, GeneratorConfig(), clf, blobs["vae"])
            assert r.valid and clf.predict_proba(r.counterfactual, 1)[0] >= clf.threshold
            assert r.probability == clf.predict_proba(r.counterfactual, 1)[0]

    def test_path_invariants(self, blobs):
        x = class0_points(blobs, blobs["train"], 1)[0]
        r = generate_counterfactual(x, 1, GeneratorConfig(), blobs["classifier"], blobs["vae"])
        assert r.path[0].tobytes() == x.tobytes()
        assert np.array_equal(r.path[-1], r.counterfactual)
        assert len(r.path) == r.iterations + 1 == len(r.trace) + 1
        assert np.all(np.isfinite(r.path)) and r.path.shape[1] == 2

    def test_jitter_path_starts_at_x(self, blobs):
        x = class0_points(blobs, blobs["train"], 1)[0]
        r = generate_counterfactual(x, 1, GeneratorConfig(jitter=0.05, seed=3),
                                    blobs["classifier"], blobs["vae"])
        assert r.path[0].tobytes() == x.tobytes()
        assert len(r.path) == r.iterations + 2

    @given(st.integers(0, 79), st.sampled_from([0, 1]), st.integers(1, 40), st.sampled_from([None, 0.3, 0.8]))
    def test_validity_soundness(self, blobs, i, tau, n, theta):
        clf = blobs["classifier"]
        cfg = GeneratorConfig(max_iter=n, threshold=theta)
        r = generate_counterfactual(blobs["train"].features[i], tau, cfg, clf, blobs["vae"])
        bar = clf.threshold if theta is None else theta
        assert r.valid == (clf.predict_proba(r.counterfactual, tau)[0] >= bar)

    def test_unconverged_is_not_an_error(self, blobs):
        x = class0_points(blobs, blobs["train"], 1)[0]
        r = generate_counterfactual(x, 1, GeneratorConfig(max_iter=1), blobs["classifier"], blobs["vae"])
        assert not r.valid and r.iterations == 1

    def test_no_early_stop_runs_all_iterations(self, blobs):
        x = class0_points(blobs, blobs["train"], 1)[0]
        r = generate_counterfactual(x, 1, GeneratorConfig(max_iter=50, early_stop=False),
                                    blobs["classifier"], blobs["vae"])
        assert r.iterations == 50

    def test_plain_gradient_descent(self, blobs):
        x = class0_points(blobs, blobs["train"], 1)[0]
        r = generate_counterfactual(x, 1, GeneratorConfig(optimizer="sgd", lr=0.5, max_iter=500),
                                    blobs["classifier"], blobs["vae"])
        assert r.iterations > 0 and np.all(np.isfinite(r.path))

    def test_deterministic(self, blobs):
        x = class0_points(blobs, blobs["train"], 1)[0]
        cfg = GeneratorConfig(jitter=0.1, seed=9)
        a = generate_counterfactual(x, 1, cfg, blobs["classifier"], blobs["vae"])
        b = generate_counterfactual(x, 1, cfg, blobs["classifier"], blobs["vae"])
        assert a.path.tobytes() == b.path.tobytes() and a.trace == b.trace

    def test_lambda3_sweep_lowers_uncertainty(self, blobs):
        clf, vae = blobs["classifier"], blobs["vae"]
        X = class0_points(blobs, blobs["train"], 60)
        assert len(X) >= 50
        means = []
        for lam3 in (0.0, 0.1, 1.0):
            cfg = GeneratorConfig(lambdas=(1.0, 0.5, lam3))
            cfs = [generate_counterfactual(x, 1, cfg, clf, vae).counterfactual for x in X]
            means.append(vae.losses(np.array(cfs))[2].mean())
        assert means[0] >= means[1] >= means[2]


class TestSet:
    def test_no_jitter_identical_members(self, blobs):
        x = class0_points(blobs, blobs["train"], 1)[0]
        s = generate_counterfactual_set(x, 1, 3, GeneratorConfig(), blobs["classifier"], blobs["vae"])
        assert len(s) == 3
        assert all(r.path.tobytes() == s.results[0].path.tobytes() for r in s)

    def test_jittered_set_mostly_valid(self, blobs):
        x = class0_points(blobs, blobs["test"], 1)[0]
        s = generate_counterfactual_set(x, 1, 10, GeneratorConfig(jitter=0.05),
                                        blobs["classifier"], blobs["vae"])
        assert len(s.valid_results) >= 8
        assert len({r.path.tobytes() for r in s}) == 10
        assert all(np.array_equal(r.origin, x) and r.target == 1 for r in s)

    def test_singleton_matches_single_run(self, blobs):
        x = class0_points(blobs, blobs["train"], 1)[0]
        cfg = GeneratorConfig(jitter=0.05, seed=4)
        s = generate_counterfactual_set(x, 1, 1, cfg, blobs["classifier"], blobs["vae"])
        r = generate_counterfactual(x, 1, cfg, blobs["classifier"], blobs["vae"])
        assert s.results[0].path.tobytes() == r.path.tobytes()

    def test_member_seeds(self):
        assert [path_seed(10, i) for i in range(3)] == [10, 11, 12]

    def test_all_invalid_is_flagged(self, blobs, caplog):
        x = class0_points(blobs, blobs["train"], 1)[0]
        with caplog.at_level(logging.WARNING):
            s = generate_counterfactual_set(x, 1, 2, GeneratorConfig(max_iter=1),
                                            blobs["classifier"], blobs["vae"])
        assert s.all_invalid and "none of the 2" in caplog.text

    def test_k_must_be_positive(self, blobs):
        with pytest.raises(ValueError):
            generate_counterfactual_set(np.zeros(2), 1, 0, GeneratorConfig(), blobs["classifier"], blobs["vae"])

    def test_empty_set_rejected(self):
        with pytest.raises(ValueError):
            CounterfactualSet(np.zeros(2), 1, [])
