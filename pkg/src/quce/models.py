"""Differentiable binary classifier and tabular VAE built on :mod:`quce.autodiff`.

Both models keep their parameters as plain numpy arrays and bind them by name
into cached expression graphs, so a forward pass is ``graph.forward({...})``
with the model's parameters plus whatever inputs the caller supplies.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import Dataset
from .optim import make_optimizer

FORMAT_VERSION = 1
PROB_FLOOR = 1e-12

_ACTIVATIONS = {"tanh": ad.tanh, "relu": ad.relu, "sigmoid": ad.sigmoid}


class ModelError(ValueError):
    pass


class FrozenModelError(ModelError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    optimizer: str = "adam"
    weight_decay: float = 0.0  # L2 penalty on weight matrices, added to the gradient

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0 or self.seed < 0:
            raise ValueError("epochs, batch_size and lr must be positive; seed non-negative")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)), np.zeros(fan_out)


def _dense(x: ad.Node, prefix: str, n_layers: int, activation: str, last_linear: bool = True):
    act = _ACTIVATIONS[activation]
    h = x
    for i in range(n_layers):
        h = h @ ad.input(f"{prefix}W{i}") + ad.input(f"{prefix}b{i}")
        if i < n_layers - 1 or not last_linear:
            h = act(h)
    return h


def _batches(n, batch_size, rng):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


def _decayed(grads, params, names, decay):
    if decay == 0:
        return [grads[k] for k in names]
    return [grads[k] + decay * params[k] if params[k].ndim == 2 else grads[k] for k in names]


def _as_rows(x, n_features: int) -> np.ndarray:
    X = np.asarray(x, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != n_features:
        raise ModelError(f"expected {n_features} features, got shape {np.shape(x)}")
    return X


# -- classifier ---------------------------------------------------------------

@dataclass(eq=False)
class MlpClassifier:
    """J -> hidden... -> 1 network with a sigmoid head giving F(1|x)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"
    threshold: float = 0.5
    metrics: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise ModelError("threshold must lie in (0, 1)")
        if self.activation not in _ACTIVATIONS:
            raise ModelError(f"unknown activation {self.activation!r}")
        if self.weights[-1].shape[1] != 1:
            raise ModelError("classifier head must have a single output unit")

    @classmethod
    def init(cls, widths, seed=0, activation="tanh", threshold=0.5) -> "MlpClassifier":
        rng = np.random.default_rng(seed)
        layers = [_glorot(rng, a, b) for a, b in zip(widths[:-1], widths[1:])]
        return cls([w for w, _ in layers], [b for _, b in layers], activation, threshold)

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_features(self) -> int:
        return self.weights[0].shape[0]

    def bindings(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}W{i}"] = w
            out[f"{prefix}b{i}"] = b
        return out

    def logit_node(self, x: ad.Node, prefix: str = "") -> ad.Node:
        return _dense(x, prefix, len(self.weights), self.activation)

    def probability_node(self, x: ad.Node, tau: int, prefix: str = "") -> ad.Node:
        """F(tau|x) as a graph node; F(0|x) is built as sigmoid(-logit)."""
        if tau not in (0, 1):
            raise ModelError(f"class must be 0 or 1, got {tau!r}")
        s = self.logit_node(x, prefix)
        return ad.sigmoid(s if tau == 1 else -s)

    @cached_property
    def _prob_graphs(self):
        graphs = {}
        for tau in (0, 1):
            p = self.probability_node(ad.input("x"), tau)
            graphs[tau] = (ad.Graph(p), ad.Graph(ad.sum(p)))
        return graphs

    def _graph_for(self, tau):
        if tau not in (0, 1):
            raise ModelError(f"class must be 0 or 1, got {tau!r}")
        return self._prob_graphs[int(tau)]

    def predict_proba(self, X, tau: int = 1) -> np.ndarray:
        """F(tau|x) for every row of ``X`` (or a single vector)."""
        X = _as_rows(X, self.n_features)
        graph = self._graph_for(tau)[0]
        return graph.evaluate({**self.bindings(), "x": X})[:, 0]

    def probability_gradient(self, X, tau: int = 1) -> np.ndarray:
        """Row-wise input gradients of F(tau|x); rows do not interact."""
        X = _as_rows(X, self.n_features)
        graph = self._graph_for(tau)[1]
        return graph.gradient({**self.bindings(), "x": X}, "x")

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X, 1) >= self.threshold).astype(np.int64)

    def accuracy(self, data: Dataset) -> float:
        return float(np.mean(self.predict(data.features) == data.labels))

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "mlp",
            "widths": self.widths,
            "activation": self.activation,
            "threshold": self.threshold,
            "weights": [{"W": w.tolist(), "b": b.tolist()}
                        for w, b in zip(self.weights, self.biases)],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MlpClassifier":
        _check_doc(doc, "mlp")
        ws = [np.array(layer["W"], dtype=np.float64) for layer in doc["weights"]]
        bs = [np.array(layer["b"], dtype=np.float64) for layer in doc["weights"]]
        model = cls(ws, bs, doc["activation"], doc["threshold"])
        if model.widths != list(doc["widths"]):
            raise ModelError("stored widths do not match weight shapes")
        return model


def class_probability(model: MlpClassifier, x, tau: int) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ModelError("class_probability takes a single feature vector")
    return float(model.predict_proba(x, tau)[0])


CLASSIFIER_CONFIG = TrainConfig(epochs=200, weight_decay=3e-3)
VAE_CONFIG = TrainConfig(epochs=300)


def train_classifier(data: Dataset, cfg: TrainConfig = CLASSIFIER_CONFIG, test: Dataset | None = None,
                     hidden=(32, 16), activation="tanh", threshold=0.5) -> MlpClassifier:
    """Fit by minibatch binary cross-entropy; deterministic for a fixed seed."""
    if len(np.unique(data.labels)) < 2:
        raise ModelError("training data contains a single class")
    model = MlpClassifier.init([data.n_features, *hidden, 1], cfg.seed, activation, threshold)
    x, y, ny, scale = ad.input("x"), ad.input("y"), ad.input("ny"), ad.input("scale")
    s = model.logit_node(x)
    ll = y * ad.log(ad.sigmoid(s), PROB_FLOOR) + ny * ad.log(ad.sigmoid(-s), PROB_FLOOR)
    graph = ad.Graph(-scale * ad.sum(ll))

    params = model.bindings()
    names = list(params)
    opt = make_optimizer(cfg.optimizer, [params[k] for k in names], cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    X, Y = data.features, data.labels.astype(np.float64)[:, None]
    for _ in range(cfg.epochs):
        for idx in _batches(data.n, cfg.batch_size, rng):
            bind = {**params, "x": X[idx], "y": Y[idx], "ny": 1.0 - Y[idx],
                    "scale": np.float64(1.0 / len(idx))}
            _, grads = graph.value_and_grad(bind, names)
            opt.step(_decayed(grads, params, names, cfg.weight_decay))
    model.metrics = {"train_accuracy": model.accuracy(data)}
    if test is not None:
        model.metrics["test_accuracy"] = model.accuracy(test)
    return model


# -- variational autoencoder --------------------------------------------------

@dataclass(eq=False)
class VaeModel:
    """Gaussian-latent VAE with a unit-variance Gaussian reconstruction term.

    ``encoder`` holds the shared hidden stack, ``mu`` and ``logvar`` the two
    linear heads, ``decoder`` the full latent-to-feature stack.  Each entry
    is a ``(W, b)`` pair.
    """

    encoder: list[tuple[np.ndarray, np.ndarray]]
    mu: tuple[np.ndarray, np.ndarray]
    logvar: tuple[np.ndarray, np.ndarray]
    decoder: list[tuple[np.ndarray, np.ndarray]]
    activation: str = "tanh"
    frozen: bool = False
    metrics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.decoder[-1][0].shape[1] != self.n_features:
            raise ModelError("decoder output width must equal encoder input width")
        if self.decoder[0][0].shape[0] != self.latent_dim:
            raise ModelError("decoder input width must equal the latent dimension")
        if self.frozen:
            self.freeze()

    @classmethod
    def init(cls, n_features: int, latent_dim: int | None = None, hidden=(16,),
             seed: int = 0, activation: str = "tanh") -> "VaeModel":
        if latent_dim is None:
            latent_dim = default_latent_dim(n_features)
        rng = np.random.default_rng(seed)
        enc_w = [n_features, *hidden]
        encoder = [_glorot(rng, a, b) for a, b in zip(enc_w[:-1], enc_w[1:])]
        mu = _glorot(rng, enc_w[-1], latent_dim)
        logvar = _glorot(rng, enc_w[-1], latent_dim)
        dec_w = [latent_dim, *reversed(hidden), n_features]
        decoder = [_glorot(rng, a, b) for a, b in zip(dec_w[:-1], dec_w[1:])]
        return cls(encoder, mu, logvar, decoder, activation)

    @property
    def n_features(self) -> int:
        return self.encoder[0][0].shape[0] if self.encoder else self.mu[0].shape[0]

    @property
    def latent_dim(self) -> int:
        return self.mu[0].shape[1]

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(self.encoder):
            out[f"enc.W{i}"], out[f"enc.b{i}"] = w, b
        out["mu.W0"], out["mu.b0"] = self.mu
        out["lv.W0"], out["lv.b0"] = self.logvar
        for i, (w, b) in enumerate(self.decoder):
            out[f"dec.W{i}"], out[f"dec.b{i}"] = w, b
        return out

    def bindings(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {prefix + k: v for k, v in self.parameters().items()}

    def freeze(self) -> None:
        for arr in self.parameters().values():
            arr.setflags(write=False)
        self.frozen = True

    def set_parameters(self, values: dict[str, np.ndarray]) -> None:
        if self.frozen:
            raise FrozenModelError("VAE parameters are frozen")
        params = self.parameters()
        for k, v in values.items():
            params[k][...] = v

    def nodes(self, x: ad.Node, prefix: str = "", eps: ad.Node | None = None):
        """Build (mu, logvar, x_hat, kl, recon) nodes, each summed over rows.

        With ``eps`` given, the latent code is sampled by reparameterisation;
        otherwise the encoder mean is decoded.
        """
        h = x
        if self.encoder:
            h = _dense(x, prefix + "enc.", len(self.encoder), self.activation, last_linear=False)
        mu = h @ ad.input(prefix + "mu.W0") + ad.input(prefix + "mu.b0")
        logvar = h @ ad.input(prefix + "lv.W0") + ad.input(prefix + "lv.b0")
        z = mu if eps is None else mu + ad.exp(0.5 * logvar) * eps
        x_hat = _dense(z, prefix + "dec.", len(self.decoder), self.activation)
        kl = -0.5 * ad.sum(1.0 + logvar - ad.square(mu) - ad.exp(logvar))
        recon = 0.5 * ad.sum(ad.square(x - x_hat))
        return mu, logvar, x_hat, kl, recon

    @cached_property
    def _eval_graph(self):
        x = ad.input("x")
        mu, logvar, x_hat, kl, recon = self.nodes(x)
        return ad.Graph(kl + recon), (mu, logvar, x_hat)

    def _forward(self, X):
        X = _as_rows(X, self.n_features)
        graph, (mu, logvar, x_hat) = self._eval_graph
        values = graph.forward({**self.bindings(), "x": X})
        return X, graph.value_of(values, mu), graph.value_of(values, logvar), graph.value_of(values, x_hat)

    def reconstruct(self, X) -> np.ndarray:
        """Deterministic reconstruction decode(mean(encode(x)))."""
        return self._forward(X)[3]

    def losses(self, X) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-row (kl, recon, total) in deterministic mode."""
        X, mu, logvar, x_hat = self._forward(X)
        kl = -0.5 * np.sum(1.0 + logvar - mu * mu - np.exp(logvar), axis=1)
        recon = 0.5 * np.sum((X - x_hat) ** 2, axis=1)
        return kl, recon, kl + recon

    def to_dict(self) -> dict:
        pair = lambda wb: {"W": wb[0].tolist(), "b": wb[1].tolist()}  # noqa: E731
        return {
            "format_version": FORMAT_VERSION,
            "kind": "vae",
            "widths": {
                "encoder": [self.n_features] + [w.shape[1] for w, _ in self.encoder],
                "decoder": [self.latent_dim] + [w.shape[1] for w, _ in self.decoder],
            },
            "activation": self.activation,
            "latent_dim": self.latent_dim,
            "frozen": self.frozen,
            "weights": {
                "encoder": [pair(l) for l in self.encoder],
                "mu": pair(self.mu),
                "logvar": pair(self.logvar),
                "decoder": [pair(l) for l in self.decoder],
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "VaeModel":
        _check_doc(doc, "vae")
        arr = lambda d: (np.array(d["W"], dtype=np.float64), np.array(d["b"], dtype=np.float64))  # noqa: E731
        w = doc["weights"]
        model = cls([arr(l) for l in w["encoder"]], arr(w["mu"]), arr(w["logvar"]),
                    [arr(l) for l in w["decoder"]], doc["activation"], bool(doc.get("frozen", True)))
        if model.latent_dim != doc["latent_dim"]:
            raise ModelError("stored latent_dim does not match weight shapes")
        return model


def default_latent_dim(n_features: int) -> int:
    return max(1, min(8, n_features // 2))


def vae_loss(model: VaeModel, x, mode: str = "deterministic", seed: int | None = None):
    """Return ``(kl, recon, total)`` for one feature vector.

    ``mode="sampled"`` draws one latent sample with a standard normal
    stream seeded by ``seed``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ModelError("vae_loss takes a single feature vector")
    X = _as_rows(x, model.n_features)
    if mode == "deterministic":
        kl, recon, total = model.losses(X)
        return float(kl[0]), float(recon[0]), float(total[0])
    if mode != "sampled":
        raise ValueError(f"unknown mode {mode!r}")
    eps = np.random.default_rng(seed).standard_normal((1, model.latent_dim))
    _, _, _, kl, recon = model.nodes(ad.input("x"), eps=ad.input("eps"))
    graph = ad.Graph(kl + recon)
    values = graph.forward({**model.bindings(), "x": X, "eps": eps})
    k, r = float(graph.value_of(values, kl)), float(graph.value_of(values, recon))
    return k, r, k + r


def train_vae(data: Dataset, cfg: TrainConfig = VAE_CONFIG, latent_dim: int | None = None,
              hidden=(16,), activation="tanh") -> VaeModel:
    """Minimise the one-sample negative ELBO; the result is frozen."""
    if data.n < 2:
        raise ModelError("need at least two rows to train a VAE")
    model = VaeModel.init(data.n_features, latent_dim, hidden, cfg.seed, activation)
    x, eps, scale = ad.input("x"), ad.input("eps"), ad.input("scale")
    _, _, _, kl, recon = model.nodes(x, eps=eps)
    graph = ad.Graph(scale * (kl + recon))

    params = model.parameters()
    names = list(params)
    opt = make_optimizer(cfg.optimizer, [params[k] for k in names], cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    X = data.features
    for _ in range(cfg.epochs):
        for idx in _batches(data.n, cfg.batch_size, rng):
            noise = rng.standard_normal((len(idx), model.latent_dim))
            bind = {**params, "x": X[idx], "eps": noise, "scale": np.float64(1.0 / len(idx))}
            _, grads = graph.value_and_grad(bind, names)
            opt.step(_decayed(grads, params, names, cfg.weight_decay))
    model.metrics = {"train_loss": float(np.mean(model.losses(X)[2]))}
    model.freeze()
    return model


# -- serialization ------------------------------------------------------------

def _check_doc(doc: dict, kind: str) -> None:
    if doc.get("kind") != kind:
        raise ModelError(f"expected a {kind!r} document, got {doc.get('kind')!r}")
    if doc.get("format_version") != FORMAT_VERSION:
        raise ModelError(f"unsupported format_version {doc.get('format_version')!r}")


def dumps_model(model, extra: dict | None = None) -> str:
    doc = model.to_dict()
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def save_model(model, path: str | Path, extra: dict | None = None) -> None:
    Path(path).write_text(dumps_model(model, extra), encoding="utf-8")


def load_model(path: str | Path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    kind = doc.get("kind")
    if kind == "mlp":
        return MlpClassifier.from_dict(doc), doc
    if kind == "vae":
        return VaeModel.from_dict(doc), doc
    raise ModelError(f"unknown model kind {kind!r}")
