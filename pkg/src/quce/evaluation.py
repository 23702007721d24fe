"""Benchmark harness: path uncertainty, counterfactual uncertainty, reconstruction
error and deletion scores for QUCE and its baselines."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .attribution import (RiemannConfig, agi_generate_and_attribute, featurewise_uncertainty,
                          ig_attribution, path_attribution)
from .data import Dataset
from .generator import (CounterfactualResult, CounterfactualSet, GeneratorConfig,
                        generate_counterfactual)
from .models import MlpClassifier, VaeModel

log = logging.getLogger(__name__)

METHODS = ("quce", "ig-quce", "agi", "proximity-only")
METHOD_LABELS = {"quce": "QUCE", "ig-quce": "IG-QUCE", "agi": "AGI", "proximity-only": "Proximity-only"}
REPORT_VERSION = 1


class EvaluationError(ValueError):
    pass


def resample_path(path, steps: int = 1000) -> np.ndarray:
    """``steps`` points at alpha = s/steps (s = 0..steps-1) along the polyline,
    with alpha mapped linearly onto the cumulative point index."""
    path = np.asarray(path, dtype=np.float64)
    if path.ndim != 2 or len(path) == 0:
        raise EvaluationError("path must be a non-empty (n_points, J) array")
    if steps < 1:
        raise EvaluationError("steps must be at least 1")
    m = len(path)
    if m == 1:
        return np.repeat(path, steps, axis=0)
    t = np.arange(steps, dtype=np.float64) / steps * (m - 1)
    i = np.minimum(np.floor(t).astype(np.int64), m - 2)
    frac = (t - i)[:, None]
    return path[i] + frac * (path[i + 1] - path[i])


def path_uncertainty(path, vae: VaeModel, steps: int = 1000) -> tuple[float, float]:
    """Mean and std of the deterministic VAE loss over the resampled path."""
    losses = vae.losses(resample_path(path, steps))[2]
    return float(losses.mean()), float(losses.std())


def _valid_counterfactuals(results) -> np.ndarray:
    if isinstance(results, CounterfactualSet):
        results = results.results
    valid = [r.counterfactual for r in results if r.valid]
    if not valid:
        raise EvaluationError("no valid counterfactuals in the set")
    return np.array(valid)


def set_counterfactual_uncertainty(results, vae: VaeModel) -> float:
    """Mean VAE loss over the valid counterfactuals of a set (or result list)."""
    return float(np.mean(vae.losses(_valid_counterfactuals(results))[2]))


def set_reconstruction_error(results, vae: VaeModel) -> float:
    """Mean over valid counterfactuals of the summed absolute reconstruction error."""
    return float(np.mean([featurewise_uncertainty(xc, vae).sum()
                          for xc in _valid_counterfactuals(results)]))


@dataclass
class DeletionCurve:
    probabilities: np.ndarray
    order: np.ndarray

    @property
    def score(self) -> float:
        return float(np.mean(self.probabilities))


def deletion_score(x, attributions, classifier: MlpClassifier, baseline=None) -> DeletionCurve:
    """Replace features with baseline values in descending-attribution order.

    Entry i of the curve is F(c | x with the top-i features replaced), where
    c is the class the classifier assigns to the untouched ``x``.  Ties in
    attribution go to the lower feature index first.  ``baseline`` defaults
    to zeros, i.e. training means in z-scored space.
    """
    x = np.asarray(x, dtype=np.float64)
    phi = np.asarray(attributions, dtype=np.float64)
    J = classifier.n_features
    baseline = np.zeros(J) if baseline is None else np.asarray(baseline, dtype=np.float64)
    if x.shape != (J,) or phi.shape != (J,) or baseline.shape != (J,):
        raise EvaluationError(f"x, attributions and baseline must all have {J} entries")
    c = int(classifier.predict(x)[0])
    order = np.argsort(-phi, kind="stable")
    rows = np.repeat(x[None, :], J, axis=0)
    for i in range(J):
        rows[i:, order[i]] = baseline[order[i]]
    probs = np.empty(J + 1)
    probs[0] = classifier.predict_proba(x, c)[0]
    probs[1:] = classifier.predict_proba(rows, c)
    return DeletionCurve(probs, order)


def random_attribution(n_features: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, size=n_features)


# -- benchmark ----------------------------------------------------------------

@dataclass(frozen=True)
class BenchmarkConfig:
    instances: int = 100
    seed: int = 0
    steps: int = 1000
    riemann: RiemannConfig = RiemannConfig(500)
    generator: GeneratorConfig = GeneratorConfig()
    agi_steps: int = 500
    agi_eta: float = 0.05

    def to_dict(self) -> dict:
        return {"instances": self.instances, "seed": self.seed, "steps": self.steps,
                "riemann": asdict(self.riemann), "generator": self.generator.to_dict(),
                "agi_steps": self.agi_steps, "agi_eta": self.agi_eta}


@dataclass
class MethodRow:
    method: str
    split: str
    n_instances: int
    n_valid: int
    path_uncertainty_mean: float | None
    path_uncertainty_std: float | None
    counterfactual_uncertainty: float | None
    reconstruction_error: float | None
    deletion_score: float | None


@dataclass
class MetricReport:
    dataset: str
    rows: list[MethodRow]
    random_deletion: dict[str, dict] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def row(self, method: str, split: str) -> MethodRow:
        for r in self.rows:
            if r.method == method and r.split == split:
                return r
        raise KeyError((method, split))

    def to_dict(self) -> dict:
        return {"schema_version": REPORT_VERSION, "dataset": self.dataset,
                "rows": [asdict(r) for r in self.rows],
                "random_deletion": self.random_deletion, "config": self.config}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        splits = list(dict.fromkeys(r.split for r in self.rows))
        sections = [
            ("Path L_eps", lambda r: _pm(r.path_uncertainty_mean, r.path_uncertainty_std, r.n_valid)),
            ("Counterfactual L_eps", lambda r: _num(r.counterfactual_uncertainty, r.n_valid)),
            ("Counterfactual Reconstruction", lambda r: _num(r.reconstruction_error, r.n_valid)),
            ("Deletion", lambda r: _num(r.deletion_score, r.n_instances, 3)),
        ]
        width = 32
        lines = []
        for title, fmt in sections:
            lines.append(f"{title:<{width}}{self.dataset:>22}")
            for split in splits:
                lines.append(split.capitalize())
                for r in self.rows:
                    if r.split == split:
                        lines.append(f"  {METHOD_LABELS.get(r.method, r.method):<{width - 2}}{fmt(r):>22}")
                if title == "Deletion" and split in self.random_deletion:
                    rd = self.random_deletion[split]
                    lines.append(f"  {'Random':<{width - 2}}{_num(rd['mean'], rd['count'], 3):>22}")
            lines.append("")
        return "\n".join(lines)


def _num(v, n, digits=2):
    return "n/a" if v is None else f"{v:.{digits}f} (n={n})"


def _pm(m, s, n):
    return "n/a" if m is None else f"{m:.2f}±{s:.2f} (n={n})"


def _run_instance(x, classifier, vae, methods, cfg: BenchmarkConfig):
    tau = 1 - int(classifier.predict(x)[0])
    out = {}
    quce = None
    if "quce" in methods or "ig-quce" in methods:
        quce = generate_counterfactual(x, tau, cfg.generator, classifier, vae)
    if "quce" in methods:
        out["quce"] = (quce, path_attribution(quce.path, classifier, tau, cfg.riemann))
    if "ig-quce" in methods:
        ig = CounterfactualResult(quce.counterfactual, np.stack([x, quce.counterfactual]),
                                  quce.valid, tau, quce.probability)
        out["ig-quce"] = (ig, ig_attribution(x, quce.counterfactual, classifier, tau, cfg.riemann))
    if "agi" in methods:
        out["agi"] = agi_generate_and_attribute(x, tau, classifier, cfg.agi_steps, cfg.agi_eta,
                                                cfg.riemann, cfg.generator.threshold)
    if "proximity-only" in methods:
        lam = cfg.generator.lambdas
        prox_cfg = replace(cfg.generator, lambdas=(lam[0], lam[1], 0.0))
        r = generate_counterfactual(x, tau, prox_cfg, classifier, vae)
        out["proximity-only"] = (r, path_attribution(r.path, classifier, tau, cfg.riemann,
                                                     method="proximity-only"))
    return out


def sample_indices(n: int, k: int, seed: int) -> np.ndarray:
    return np.sort(np.random.default_rng(seed).choice(n, size=min(k, n), replace=False))


def run_benchmark(splits: dict[str, Dataset] | Dataset, classifier: MlpClassifier, vae: VaeModel,
                  methods: Sequence[str] = METHODS, cfg: BenchmarkConfig = BenchmarkConfig(),
                  dataset_name: str = "data") -> MetricReport:
    """Run every method on ``min(cfg.instances, n)`` sampled rows per split.

    Uncertainty aggregates cover valid counterfactuals only; deletion scores
    cover every sampled instance.
    """
    if classifier is None or vae is None:
        raise EvaluationError("benchmark needs a trained classifier and VAE")
    if not vae.frozen:
        raise EvaluationError("VAE must be trained (frozen) before benchmarking")
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise EvaluationError(f"unknown methods: {sorted(unknown)}")
    methods = [m for m in METHODS if m in methods]
    if isinstance(splits, Dataset):
        splits = {splits.split: splits}

    rows, random_deletion = [], {}
    for split, data in splits.items():
        idx = sample_indices(data.n, cfg.instances, cfg.seed)
        per = {m: {"pu": [], "cf": [], "re": [], "del": [], "valid": 0} for m in methods}
        rand_scores = []
        for i in idx:
            x = data.features[i]
            results = _run_instance(x, classifier, vae, methods, cfg)
            for m, (res, expl) in results.items():
                acc = per[m]
                acc["del"].append(deletion_score(x, expl.attributions, classifier).score)
                if not res.valid:
                    continue
                acc["valid"] += 1
                acc["pu"].append(path_uncertainty(res.path, vae, cfg.steps)[0])
                acc["cf"].append(float(vae.losses(res.counterfactual)[2][0]))
                acc["re"].append(float(featurewise_uncertainty(res.counterfactual, vae).sum()))
            rng = np.random.default_rng([cfg.seed, int(i)])
            rand_scores.append(deletion_score(x, random_attribution(data.n_features, rng), classifier).score)
        for m in methods:
            acc = per[m]
            has = acc["valid"] > 0
            rows.append(MethodRow(
                method=m, split=split, n_instances=len(idx), n_valid=acc["valid"],
                path_uncertainty_mean=float(np.mean(acc["pu"])) if has else None,
                path_uncertainty_std=float(np.std(acc["pu"])) if has else None,
                counterfactual_uncertainty=float(np.mean(acc["cf"])) if has else None,
                reconstruction_error=float(np.mean(acc["re"])) if has else None,
                deletion_score=float(np.mean(acc["del"])) if len(idx) else None,
            ))
        random_deletion[split] = {"mean": float(np.mean(rand_scores)), "count": len(rand_scores)}
        log.info("benchmarked %d instances on split %s", len(idx), split)
    return MetricReport(dataset_name, rows, random_deletion, {**cfg.to_dict(), "methods": list(methods)})
