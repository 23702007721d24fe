from __future__ import annotations

import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from quce.data import load_wbc, normalize, synthetic_blobs, train_test_split  # noqa: E402
from quce.models import train_classifier, train_vae  # noqa: E402

settings.register_profile("quce", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("quce")


def _prepared(data):
    train, test = train_test_split(data, 0.8, 0)
    train_n, norm = normalize(train)
    test_n = norm.apply(test)
    clf = train_classifier(train_n, test=test_n)
    vae = train_vae(train_n)
    return {"train": train_n, "test": test_n, "norm": norm, "classifier": clf, "vae": vae}


@pytest.fixture(scope="session")
def blobs():
    return _prepared(synthetic_blobs(200, 2, 6.0, seed=0))


@pytest.fixture(scope="session")
def wbc():
    return _prepared(load_wbc())


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
