"""JSON Schemas (draft 2020-12) for every document the CLI writes."""

import json
from importlib import resources

NAMES = ("model", "explanation", "metric-report", "train-metrics")


def load_schema(name: str) -> dict:
    if name not in NAMES:
        raise KeyError(f"unknown schema {name!r}; choose from {NAMES}")
    return json.loads(resources.files(__name__).joinpath(f"{name}.schema.json").read_text("utf-8"))
