"""``quce`` command line: train models, explain instances, run the benchmark.

Exit status is 0 on success, 1 on a runtime failure and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .attribution import RiemannConfig
from .data import (DataError, Normalizer, load_csv, load_wbc, normalize, synthetic_blobs,
                   train_test_split, write_csv)
from .evaluation import METHODS, BenchmarkConfig, run_benchmark
from .explain import EXPLAIN_METHODS, explain_instance, render_svg
from .generator import GeneratorConfig
from .models import (CLASSIFIER_CONFIG, VAE_CONFIG, ModelError, MlpClassifier, TrainConfig,
                     VaeModel, dumps_model, load_model, train_classifier, train_vae)

log = logging.getLogger("quce")


def default_seed() -> int:
    return int(os.environ.get("QUCE_SEED", "0"))


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _prepare(args):
    """Load the CSV and rebuild the train/test split and normalization."""
    data = load_csv(args.data, args.label)
    train, test = train_test_split(data, args.split, args.seed)
    train_n, norm = normalize(train)
    return data, train_n, norm.apply(test), norm


def _load_models(args):
    clf, clf_doc = load_model(args.classifier)
    vae, _ = load_model(args.vae)
    if not isinstance(clf, MlpClassifier) or not isinstance(vae, VaeModel):
        raise ModelError("--classifier must be an mlp document and --vae a vae document")
    if clf.n_features != vae.n_features:
        raise ModelError("classifier and VAE disagree on the feature count")
    return clf, vae, clf_doc


def cmd_make_data(args) -> int:
    if args.kind == "wbc":
        data = load_wbc()
    else:
        data = synthetic_blobs(args.n, args.features, args.separation, args.seed)
    write_csv(data, args.out, args.label)
    return 0


def cmd_train(args) -> int:
    data, train, test, norm = _prepare(args)
    clf_cfg = TrainConfig(epochs=args.epochs or CLASSIFIER_CONFIG.epochs, seed=args.seed,
                          weight_decay=CLASSIFIER_CONFIG.weight_decay)
    vae_cfg = TrainConfig(epochs=args.vae_epochs or VAE_CONFIG.epochs, seed=args.seed)
    clf = train_classifier(train, clf_cfg, test=test)
    vae = train_vae(train, vae_cfg)
    features = {"names": train.feature_names, **norm.to_dict()}
    Path(args.out_classifier).write_text(dumps_model(clf, {"features": features}), encoding="utf-8")
    Path(args.out_vae).write_text(dumps_model(vae, {"features": features}), encoding="utf-8")
    metrics = {
        "schema_version": 1,
        "classifier": clf.metrics,
        "vae": {"train_loss": vae.metrics["train_loss"],
                "test_loss": float(np.mean(vae.losses(test.features)[2]))},
        "split": {"fraction": args.split, "seed": args.seed, "train": train.n, "test": test.n},
        "config": {"classifier": vars(clf_cfg), "vae": vars(vae_cfg)},
    }
    Path(args.out_classifier).with_suffix(".metrics.json").write_text(_dump(metrics), encoding="utf-8")
    log.info("train accuracy %.4f, test accuracy %.4f",
             clf.metrics["train_accuracy"], clf.metrics["test_accuracy"])
    return 0


def _instances(choice: str, data, norm: Normalizer, names: list[str]):
    """Yield (label, normalized vector) pairs for --instance."""
    if choice == "all":
        for i in range(data.n):
            yield i, norm.transform(data.features[i])
        return
    if "," in choice:
        try:
            values = np.array([float(v) for v in choice.split(",")])
        except ValueError:
            raise DataError(f"--instance {choice!r} is not a list of numbers") from None
        if values.size != len(names):
            raise DataError(f"inline instance has {values.size} values, expected {len(names)}")
        yield "inline", norm.transform(values)
        return
    try:
        i = int(choice)
    except ValueError:
        raise DataError(f"--instance must be a row index, 'all' or comma-separated values") from None
    if not 0 <= i < data.n:
        raise DataError(f"row index {i} out of range (0..{data.n - 1})")
    yield i, norm.transform(data.features[i])


def cmd_explain(args) -> int:
    clf, vae, clf_doc = _load_models(args)
    data = load_csv(args.data, args.label)
    feats = clf_doc.get("features")
    if feats is None:
        raise ModelError("classifier document carries no normalization statistics")
    names = feats["names"]
    norm = Normalizer.from_dict(feats)
    if data.feature_names != names:
        raise DataError("CSV columns do not match the features the models were trained on")
    method = args.method
    gen = GeneratorConfig(lambdas=(args.lambda1, args.lambda2, args.lambda3), lr=args.phi,
                          max_iter=args.iters, threshold=args.theta, optimizer=args.optimizer,
                          jitter=args.jitter if args.jitter is not None else (0.05 if method == "exquce" else 0.0),
                          seed=args.seed, early_stop=not args.no_early_stop)
    riemann = RiemannConfig(args.riemann_k, args.rule)
    docs = []
    for label, x in _instances(args.instance, data, norm, names):
        doc = explain_instance(x, clf, vae, norm, names, method, gen, riemann, args.k,
                               args.target_class, args.eta)
        doc["row"] = label if isinstance(label, int) else None
        docs.append(doc)
        if args.svg:
            svg_path = Path(args.svg)
            if args.instance == "all":
                svg_path = svg_path.with_name(f"{svg_path.stem}-{label}{svg_path.suffix}")
            svg_path.write_text(render_svg(doc), encoding="utf-8")
    text = _dump(docs if args.instance == "all" else docs[0])
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_evaluate(args) -> int:
    clf, vae, _ = _load_models(args)
    _, train, test, _ = _prepare(args)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    cfg = BenchmarkConfig(instances=args.instances, seed=args.seed, steps=args.steps,
                          riemann=RiemannConfig(args.riemann_k),
                          generator=GeneratorConfig(seed=args.seed))
    report = run_benchmark({"train": train, "test": test}, clf, vae, methods, cfg,
                           dataset_name=args.name or Path(args.data).stem)
    out = Path(args.out)
    out.with_suffix(".json").write_text(report.to_json(), encoding="utf-8")
    out.with_suffix(".txt").write_text(report.to_table(), encoding="utf-8")
    if not args.quiet:
        sys.stdout.write(report.to_table())
    return 0


def _data_flags(p, need_data=True):
    p.add_argument("--data", required=need_data, help="CSV file with a header row")
    p.add_argument("--label", required=need_data, help="name of the 0/1 label column")
    p.add_argument("--split", type=float, default=0.8, help="train fraction (default 0.8)")
    p.add_argument("--seed", type=int, default=default_seed(),
                   help="random seed (default: $QUCE_SEED or 0)")


def _model_flags(p):
    p.add_argument("--classifier", required=True, help="classifier JSON from 'quce train'")
    p.add_argument("--vae", required=True, help="VAE JSON from 'quce train'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quce", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-data", help="write the W-BC or a synthetic blobs CSV")
    p.add_argument("kind", choices=["wbc", "blobs"])
    p.add_argument("--out", required=True)
    p.add_argument("--label", default="label")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--features", type=int, default=2)
    p.add_argument("--separation", type=float, default=6.0)
    p.add_argument("--seed", type=int, default=default_seed())
    p.set_defaults(func=cmd_make_data)

    p = sub.add_parser("train", help="train the classifier and the VAE")
    _data_flags(p)
    p.add_argument("--out-classifier", required=True)
    p.add_argument("--out-vae", required=True)
    p.add_argument("--epochs", type=int, default=None,
                   help=f"classifier epochs (default {CLASSIFIER_CONFIG.epochs})")
    p.add_argument("--vae-epochs", type=int, default=None, help=f"VAE epochs (default {VAE_CONFIG.epochs})")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("explain", help="generate and explain counterfactuals")
    _data_flags(p)
    _model_flags(p)
    p.add_argument("--instance", required=True, help="row index, 'all', or comma-separated values (write --instance=-1,2 when the first is negative)")
    p.add_argument("--target-class", type=int, choices=[0, 1], default=None,
                   help="default: the class opposite to the prediction")
    p.add_argument("--method", choices=EXPLAIN_METHODS, default="quce")
    p.add_argument("--lambda1", type=float, default=1.0)
    p.add_argument("--lambda2", type=float, default=0.5)
    p.add_argument("--lambda3", type=float, default=0.5)
    p.add_argument("--phi", type=float, default=0.05, help="learning rate")
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--theta", type=float, default=None, help="validity threshold")
    p.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    p.add_argument("--no-early-stop", action="store_true")
    p.add_argument("--k", type=int, default=5, help="paths for --method exquce")
    p.add_argument("--jitter", type=float, default=None,
                   help="initial-point noise (default 0.05 for exquce, else 0)")
    p.add_argument("--eta", type=float, default=0.05, help="AGI step size")
    p.add_argument("--riemann-k", type=int, default=500)
    p.add_argument("--rule", choices=["right", "left", "midpoint"], default="right")
    p.add_argument("--svg", default=None)
    p.add_argument("--out", default=None, help="JSON output (default stdout)")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("evaluate", help="benchmark QUCE against its baselines")
    _data_flags(p)
    _model_flags(p)
    p.add_argument("--methods", default=",".join(METHODS))
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--riemann-k", type=int, default=500)
    p.add_argument("--name", default=None, help="dataset name for the table header")
    p.add_argument("--out", required=True, help="output prefix; writes .json and .txt")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "explain" and args.method == "exquce" and args.k < 1:
        parser.error("--k must be at least 1")
    try:
        return args.func(args)
    except (DataError, ModelError, ValueError, OSError, KeyError) as exc:
        print(f"quce: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
