"""Counterfactual search by descent on the weighted validity/proximity/uncertainty objective.

Every optimizer iterate is kept, so a result carries the whole piecewise-linear
path from the original instance to its counterfactual; the attribution module
integrates gradients along that path.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .models import PROB_FLOOR, MlpClassifier, VaeModel
from .optim import make_optimizer

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GeneratorConfig:
    lambdas: tuple[float, float, float] = (1.0, 0.5, 0.5)
    lr: float = 0.05
    max_iter: int = 500
    threshold: float | None = None  # None: use the classifier's threshold
    optimizer: str = "adam"
    jitter: float = 0.0
    seed: int = 0
    early_stop: bool = True

    def __post_init__(self):
        lam = tuple(float(v) for v in self.lambdas)
        if len(lam) != 3 or min(lam) < 0 or max(lam) == 0:
            raise ValueError("lambdas must be three non-negative weights, not all zero")
        object.__setattr__(self, "lambdas", lam)
        if not 0 < self.lr < 1:
            raise ValueError("learning rate must lie in (0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.jitter < 0:
            raise ValueError("jitter must be non-negative")
        if self.threshold is not None and not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {"lambdas": list(self.lambdas), "lr": self.lr, "max_iter": self.max_iter,
                "threshold": self.threshold, "optimizer": self.optimizer,
                "jitter": self.jitter, "seed": self.seed, "early_stop": self.early_stop}


@dataclass(frozen=True)
class LossTerms:
    prediction: float
    proximity: float
    uncertainty: float
    total: float
    floored: bool = False


@dataclass
class CounterfactualResult:
    counterfactual: np.ndarray
    path: np.ndarray  # (n_points, J); path[0] is the start, path[-1] the counterfactual
    valid: bool
    target: int
    probability: float
    trace: list[LossTerms] = field(default_factory=list)

    @property
    def origin(self) -> np.ndarray:
        return self.path[0]

    @property
    def iterations(self) -> int:
        return len(self.trace)


@dataclass
class CounterfactualSet:
    origin: np.ndarray
    target: int
    results: list[CounterfactualResult]
    all_invalid: bool = False

    def __post_init__(self):
        if not self.results:
            raise ValueError("a counterfactual set needs at least one member")

    def __len__(self):
        return len(self.results)

    def __iter__(self):
        return iter(self.results)

    @property
    def valid_results(self) -> list[CounterfactualResult]:
        return [r for r in self.results if r.valid]


class _Objective:
    """Compiled objective graph for one (classifier, vae, target) triple."""

    def __init__(self, classifier: MlpClassifier, vae: VaeModel | None, tau: int):
        xc, x0 = ad.input("xc"), ad.input("x0")
        lam = [ad.input(f"lam{i}") for i in range(3)]
        self.prob = classifier.probability_node(xc, tau, prefix="clf.")
        l_pr = -ad.sum(ad.log(self.prob, PROB_FLOOR))
        l_delta = 0.5 * ad.sum(ad.square(xc - x0))
        terms = [l_pr, l_delta]
        if vae is not None:
            _, _, _, kl, recon = vae.nodes(xc, prefix="vae.")
            terms.append(kl + recon)
        self.terms = terms
        total = lam[0] * l_pr + lam[1] * l_delta
        if vae is not None:
            total = total + lam[2] * terms[2]
        self.graph = ad.Graph(total)
        self.params = classifier.bindings("clf.")
        if vae is not None:
            self.params.update(vae.bindings("vae."))

    def __call__(self, x, xc, lambdas, with_grad=True):
        bind = {**self.params, "xc": xc[None, :], "x0": x[None, :]}
        for i, v in enumerate(lambdas):
            bind[f"lam{i}"] = np.float64(v)
        values = self.graph.forward(bind)
        p = float(self.graph.value_of(values, self.prob)[0, 0])
        parts = [float(self.graph.value_of(values, t)) for t in self.terms]
        if len(parts) == 2:
            parts.append(0.0)
        terms = LossTerms(*parts, total=float(values[-1]), floored=p < PROB_FLOOR)
        grad = self.graph.backward(values, ["xc"])["xc"][0] if with_grad else None
        return terms, grad, p


@lru_cache(maxsize=32)
def compile_objective(classifier: MlpClassifier, vae: VaeModel | None, tau: int) -> _Objective:
    return _Objective(classifier, vae, tau)


def quce_objective(x, xc, tau: int, lambdas, classifier: MlpClassifier,
                   vae: VaeModel | None) -> LossTerms:
    """Weighted sum lambda1*L_pr + lambda2*L_delta + lambda3*L_eps at ``xc``.

    L_pr is -log F(tau|xc) with the probability clamped at 1e-12 (the
    ``floored`` flag reports when the clamp is active); L_eps is the frozen
    VAE's deterministic loss at ``xc``.
    """
    x, xc = _vec(x, classifier), _vec(xc, classifier)
    if vae is None and lambdas[2] != 0:
        raise ValueError("an uncertainty weight needs a VAE")
    terms, _, _ = compile_objective(classifier, vae, tau)(x, xc, lambdas, with_grad=False)
    return terms


def objective_gradient(x, xc, tau, lambdas, classifier, vae) -> np.ndarray:
    x, xc = _vec(x, classifier), _vec(xc, classifier)
    return compile_objective(classifier, vae, tau)(x, xc, lambdas)[1]


def _vec(x, classifier) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (classifier.n_features,):
        raise ValueError(f"expected a vector of {classifier.n_features} features, got shape {x.shape}")
    return x


def _threshold(cfg: GeneratorConfig, classifier: MlpClassifier) -> float:
    return classifier.threshold if cfg.threshold is None else cfg.threshold


def generate_counterfactual(x, tau: int, cfg: GeneratorConfig, classifier: MlpClassifier,
                            vae: VaeModel | None) -> CounterfactualResult:
    """Descend the objective from ``x`` (plus seeded jitter) toward class ``tau``.

    The returned path always starts at ``x``; with jitter its second point
    is the perturbed starting iterate.

    Never raises for lack of convergence: an unconverged run comes back with
    ``valid=False``.
    """
    x = _vec(x, classifier)
    theta = _threshold(cfg, classifier)
    if vae is None and cfg.lambdas[2] > 0:
        raise ValueError("an uncertainty weight needs a VAE")
    objective = compile_objective(classifier, vae, tau)

    xc = x.copy()
    path = [x.copy()]
    if cfg.jitter > 0:
        # the jump to the jittered start is the path's first segment
        xc += cfg.jitter * np.random.default_rng(cfg.seed).standard_normal(x.shape)
        path.append(xc.copy())
    opt = make_optimizer(cfg.optimizer, [xc], cfg.lr)
    trace: list[LossTerms] = []
    for _ in range(cfg.max_iter):
        terms, grad, p = objective(x, xc, cfg.lambdas)
        if cfg.early_stop and p >= theta:
            break
        trace.append(terms)
        opt.step([grad])
        path.append(xc.copy())
    p_final = float(classifier.predict_proba(xc, tau)[0])
    return CounterfactualResult(xc.copy(), np.array(path), p_final >= theta, tau, p_final, trace)


def path_seed(seed: int, index: int) -> int:
    """Seed of the ``index``-th member of a counterfactual set."""
    return seed + index


def generate_counterfactual_set(x, tau: int, k: int, cfg: GeneratorConfig, classifier: MlpClassifier,
                                vae: VaeModel | None) -> CounterfactualSet:
    if k < 1:
        raise ValueError("k must be at least 1")
    results = [generate_counterfactual(x, tau, replace(cfg, seed=path_seed(cfg.seed, i)), classifier, vae)
               for i in range(k)]
    all_invalid = not any(r.valid for r in results)
    if all_invalid:
        log.warning("none of the %d counterfactuals reached the target class", k)
    return CounterfactualSet(np.asarray(x, dtype=np.float64).copy(), tau, results, all_invalid)
