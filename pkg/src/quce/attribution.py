"""Path-integrated gradient attributions along piecewise-linear paths.

All attributions are taken on F(tau|.) for the target class, so a positive
value means the feature's movement pushed the prediction toward ``tau``.
Each linear segment a -> b contributes ``(b - a) * mean_k grad F(a + t_k (b - a))``
with the sample fractions ``t_k`` set by :class:`RiemannConfig`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .generator import (CounterfactualResult, CounterfactualSet, LossTerms,
                        compile_objective)
from .models import MlpClassifier, VaeModel

# rows per batched gradient call; bounds memory for long paths at large K
_CHUNK_ROWS = 1 << 17


@dataclass(frozen=True)
class RiemannConfig:
    """``rule="right"`` samples t = k/K for k = 1..K; ``"left"`` uses (k-1)/K,
    ``"midpoint"`` (k-1/2)/K."""

    steps: int = 500
    rule: str = "right"

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("Riemann steps must be at least 1")
        if self.rule not in ("right", "left", "midpoint"):
            raise ValueError(f"unknown Riemann rule {self.rule!r}")

    def fractions(self) -> np.ndarray:
        k = np.arange(1, self.steps + 1, dtype=np.float64)
        if self.rule == "left":
            k -= 1.0
        elif self.rule == "midpoint":
            k -= 0.5
        return k / self.steps


@dataclass
class Explanation:
    attributions: np.ndarray
    start_probability: float
    end_probability: float
    method: str
    feature_names: list[str] | None = None

    @property
    def completeness_gap(self) -> float:
        return abs(float(np.sum(self.attributions)) - (self.end_probability - self.start_probability))


@dataclass
class UncertaintyBand:
    plus: np.ndarray
    minus: np.ndarray
    epsilon: np.ndarray = field(default=None)


def _check_dims(classifier: MlpClassifier, *vectors):
    for v in vectors:
        if np.shape(v)[-1] != classifier.n_features:
            raise ValueError(f"expected {classifier.n_features} features, got shape {np.shape(v)}")


def _segment_contributions(starts: np.ndarray, ends: np.ndarray, classifier: MlpClassifier,
                           tau: int, cfg: RiemannConfig) -> np.ndarray:
    """Per-segment attribution rows, shape (n_segments, J)."""
    t = cfg.fractions()
    K, J = t.size, starts.shape[1]
    disp = ends - starts
    out = np.zeros_like(disp)
    per_chunk = max(1, _CHUNK_ROWS // K)
    for lo in range(0, len(starts), per_chunk):
        hi = min(lo + per_chunk, len(starts))
        pts = starts[lo:hi, None, :] + t[None, :, None] * disp[lo:hi, None, :]
        grads = classifier.probability_gradient(pts.reshape(-1, J), tau).reshape(hi - lo, K, J)
        out[lo:hi] = disp[lo:hi] * grads.mean(axis=1)
    return out


def segment_attribution(a, b, classifier: MlpClassifier, tau: int,
                        cfg: RiemannConfig = RiemannConfig()) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_dims(classifier, a, b)
    if a.shape != b.shape:
        raise ValueError("segment endpoints differ in shape")
    return _segment_contributions(a[None, :], b[None, :], classifier, tau, cfg)[0]


def path_attribution(path, classifier: MlpClassifier, tau: int,
                     cfg: RiemannConfig = RiemannConfig(), method: str = "quce") -> Explanation:
    """Sum of segment attributions over consecutive path points.

    A single-point path gives the zero explanation.
    """
    path = np.asarray(path, dtype=np.float64)
    if path.ndim != 2 or len(path) == 0:
        raise ValueError("path must be a non-empty (n_points, J) array")
    _check_dims(classifier, path)
    ends = classifier.predict_proba(path[[0, -1]], tau)
    if len(path) == 1:
        phi = np.zeros(path.shape[1])
    else:
        phi = _segment_contributions(path[:-1], path[1:], classifier, tau, cfg).sum(axis=0)
    return Explanation(phi, float(ends[0]), float(ends[1]), method)


def ig_attribution(x, xc, classifier: MlpClassifier, tau: int,
                   cfg: RiemannConfig = RiemannConfig()) -> Explanation:
    """Straight-line integrated gradients from ``x`` to ``xc``."""
    x = np.asarray(x, dtype=np.float64)
    xc = np.asarray(xc, dtype=np.float64)
    if x.shape != xc.shape:
        raise ValueError("x and xc differ in shape")
    return path_attribution(np.stack([x, xc]), classifier, tau, cfg, method="ig-quce")


def exquce_attribution(x, cset: CounterfactualSet, classifier: MlpClassifier, tau: int,
                       cfg: RiemannConfig = RiemannConfig()) -> Explanation:
    """Mean path attribution over every member of the set.

    The explanation's end probability is the mean counterfactual probability,
    so its completeness gap compares against the mean probability change.
    """
    if len(cset) == 0:
        raise ValueError("empty counterfactual set")
    members = [path_attribution(r.path, classifier, tau, cfg) for r in cset]
    phi = np.mean([m.attributions for m in members], axis=0)
    start = float(classifier.predict_proba(np.asarray(x, dtype=np.float64), tau)[0])
    end = float(np.mean([m.end_probability for m in members]))
    return Explanation(phi, start, end, "exquce")


def featurewise_uncertainty(xc, vae: VaeModel) -> np.ndarray:
    """Absolute deterministic reconstruction error per feature."""
    xc = np.asarray(xc, dtype=np.float64)
    if xc.shape != (vae.n_features,):
        raise ValueError(f"expected {vae.n_features} features, got shape {xc.shape}")
    return np.abs(xc - vae.reconstruct(xc)[0])


def explanation_uncertainty(xc, eps, classifier: MlpClassifier, tau: int,
                            cfg: RiemannConfig = RiemannConfig()) -> UncertaintyBand:
    xc = np.asarray(xc, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != xc.shape:
        raise ValueError("epsilon and counterfactual differ in shape")
    plus = segment_attribution(xc, xc + eps, classifier, tau, cfg)
    minus = segment_attribution(xc, xc - eps, classifier, tau, cfg)
    return UncertaintyBand(plus, minus, eps)


def exquce_uncertainty(cset: CounterfactualSet, vae: VaeModel, classifier: MlpClassifier, tau: int,
                       cfg: RiemannConfig = RiemannConfig()) -> UncertaintyBand:
    """Mean band over the valid members (all members if none is valid)."""
    if len(cset) == 0:
        raise ValueError("empty counterfactual set")
    members = cset.valid_results or cset.results
    bands = [explanation_uncertainty(r.counterfactual, featurewise_uncertainty(r.counterfactual, vae),
                                     classifier, tau, cfg) for r in members]
    return UncertaintyBand(np.mean([b.plus for b in bands], axis=0),
                           np.mean([b.minus for b in bands], axis=0),
                           np.mean([b.epsilon for b in bands], axis=0))


def agi_generate_and_attribute(x, tau: int, classifier: MlpClassifier, steps: int = 500,
                               eta: float = 0.05, cfg: RiemannConfig = RiemannConfig(),
                               threshold: float | None = None
                               ) -> tuple[CounterfactualResult, Explanation]:
    """Adversarial-path baseline: normalised descent on -log F(tau|x).

    Steps ``x <- x - eta * g / ||g||`` until F(tau|x) reaches the threshold
    or ``steps`` run out, then integrates gradients along the recorded path.
    The loss trace holds the prediction term only.
    """
    x = np.asarray(x, dtype=np.float64)
    _check_dims(classifier, x)
    theta = classifier.threshold if threshold is None else threshold
    objective = compile_objective(classifier, None, tau)
    lambdas = (1.0, 0.0, 0.0)
    xt = x.copy()
    path = [xt.copy()]
    trace = []
    for _ in range(steps):
        terms, g, p = objective(x, xt, lambdas)
        if p >= theta:
            break
        trace.append(LossTerms(terms.prediction, terms.proximity, 0.0, terms.prediction, terms.floored))
        norm = float(np.sqrt(g @ g))
        if norm == 0.0:
            break
        xt = xt - eta * g / norm
        path.append(xt.copy())
    path = np.array(path)
    p_end = float(classifier.predict_proba(xt, tau)[0])
    result = CounterfactualResult(xt.copy(), path, p_end >= theta, tau, p_end, trace)
    return result, path_attribution(path, classifier, tau, cfg, method="agi")
