"""Explanation documents (JSON-ready dicts) and their SVG bar-chart rendering."""

from __future__ import annotations

from dataclasses import asdict
from html import escape

import numpy as np

from .attribution import (RiemannConfig, agi_generate_and_attribute, exquce_attribution,
                          exquce_uncertainty, explanation_uncertainty, featurewise_uncertainty,
                          ig_attribution, path_attribution)
from .data import Normalizer
from .generator import GeneratorConfig, generate_counterfactual, generate_counterfactual_set
from .models import MlpClassifier, VaeModel

SCHEMA_VERSION = 1
EXPLAIN_METHODS = ("quce", "ig", "agi", "exquce")


def explain_instance(x, classifier: MlpClassifier, vae: VaeModel, norm: Normalizer,
                     feature_names: list[str], method: str = "quce",
                     gen: GeneratorConfig = GeneratorConfig(), riemann: RiemannConfig = RiemannConfig(),
                     k: int = 1, target: int | None = None, agi_eta: float = 0.05) -> dict:
    """Generate, attribute and bound one normalized instance ``x``.

    Invalid counterfactuals still produce a document, with ``valid`` false.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (classifier.n_features,) or len(feature_names) != x.size:
        raise ValueError(f"instance has {x.size} features, model expects {classifier.n_features}")
    if method not in EXPLAIN_METHODS:
        raise ValueError(f"unknown method {method!r}")
    tau = 1 - int(classifier.predict(x)[0]) if target is None else int(target)
    theta = classifier.threshold if gen.threshold is None else gen.threshold

    if method == "exquce":
        cset = generate_counterfactual_set(x, tau, k, gen, classifier, vae)
        results = cset.results
        expl = exquce_attribution(x, cset, classifier, tau, riemann)
        band = exquce_uncertainty(cset, vae, classifier, tau, riemann)
    else:
        if method == "agi":
            result, expl = agi_generate_and_attribute(x, tau, classifier, gen.max_iter, agi_eta,
                                                      riemann, gen.threshold)
        else:
            result = generate_counterfactual(x, tau, gen, classifier, vae)
            if method == "ig":
                expl = ig_attribution(x, result.counterfactual, classifier, tau, riemann)
            else:
                expl = path_attribution(result.path, classifier, tau, riemann)
        results = [result]
        eps = featurewise_uncertainty(result.counterfactual, vae)
        band = explanation_uncertainty(result.counterfactual, eps, classifier, tau, riemann)

    attributions = []
    for j, name in enumerate(feature_names):
        phi = float(expl.attributions[j])
        attributions.append({
            "feature": name,
            "attribution": phi,
            "band_plus": float(band.plus[j]),
            "band_minus": float(band.minus[j]),
            "attribution_plus": phi + float(band.plus[j]),
            "attribution_minus": phi + float(band.minus[j]),
            "epsilon": float(band.epsilon[j]),
        })
    return {
        "schema_version": SCHEMA_VERSION,
        "method": method,
        "seed": gen.seed,
        "target_class": tau,
        "threshold": theta,
        "valid": any(r.valid for r in results),
        "feature_names": list(feature_names),
        "instance": {"values": norm.inverse(x).tolist(), "normalized": x.tolist()},
        "counterfactuals": [{
            "values": norm.inverse(r.counterfactual).tolist(),
            "normalized": r.counterfactual.tolist(),
            "valid": bool(r.valid),
            "probability": r.probability,
            "iterations": r.iterations,
            "path_length": int(len(r.path)),
        } for r in results],
        "probabilities": {"start": expl.start_probability, "end": expl.end_probability},
        "completeness_gap": expl.completeness_gap,
        "attributions": attributions,
        "config": {"generator": gen.to_dict(), "riemann": asdict(riemann), "k": k,
                   "agi_eta": agi_eta if method == "agi" else None},
    }


def render_svg(doc: dict, width: int = 640) -> str:
    """Horizontal bars of the attributions, sorted by magnitude, with whiskers
    from ``attribution_minus`` to ``attribution_plus`` (the attribution for a
    counterfactual shifted by -eps and +eps)."""
    rows = sorted(doc["attributions"], key=lambda a: -abs(a["attribution"]))
    label_w, pad, bar_h, gap = 190, 20, 14, 6
    top = 40
    height = top + len(rows) * (bar_h + gap) + pad
    lo = min([0.0] + [min(a["attribution"], a["attribution_minus"], a["attribution_plus"]) for a in rows])
    hi = max([0.0] + [max(a["attribution"], a["attribution_minus"], a["attribution_plus"]) for a in rows])
    span = (hi - lo) or 1.0
    plot_w = width - label_w - 2 * pad

    def sx(v):
        return label_w + pad + (v - lo) / span * plot_w

    title = f"{doc['method']} attribution toward class {doc['target_class']}" + \
        ("" if doc["valid"] else " (counterfactual not valid)")
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<text x="{pad}" y="20" font-size="13">{escape(title)}</text>',
        f'<line x1="{sx(0):.2f}" y1="{top - 4}" x2="{sx(0):.2f}" y2="{height - pad}" stroke="#444"/>',
    ]
    for i, a in enumerate(rows):
        y = top + i * (bar_h + gap)
        v = a["attribution"]
        x0, x1 = sorted((sx(0), sx(v)))
        color = "#2b7bba" if v >= 0 else "#d6604d"
        cy = y + bar_h / 2
        wl, wr = sorted((sx(a["attribution_minus"]), sx(a["attribution_plus"])))
        out += [
            f'<text x="{label_w + pad - 6}" y="{cy + 4:.2f}" text-anchor="end">{escape(a["feature"])}</text>',
            f'<rect x="{x0:.2f}" y="{y}" width="{x1 - x0:.2f}" height="{bar_h}" fill="{color}"/>',
            f'<line x1="{wl:.2f}" y1="{cy:.2f}" x2="{wr:.2f}" y2="{cy:.2f}" stroke="#000"/>',
            f'<line x1="{wl:.2f}" y1="{y + 2}" x2="{wl:.2f}" y2="{y + bar_h - 2}" stroke="#000"/>',
            f'<line x1="{wr:.2f}" y1="{y + 2}" x2="{wr:.2f}" y2="{y + bar_h - 2}" stroke="#000"/>',
        ]
    out.append("</svg>")
    return "\n".join(out) + "\n"

