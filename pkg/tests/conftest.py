import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mltr.data import make_synthetic_dataset

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("ci", deadline=None, max_examples=200, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def synthetic():
    return make_synthetic_dataset(n_queries=40, docs_per_query=(25, 40), dims=8, noise=0.3,
                                  query_shift=1.0, seed=3)


SMALL_CONFIG = """
[data]
path = "corpus.txt"
expected_dims = 8

[model]
hidden = [8]

[meta]
alpha = 0.05
beta = 0.05
inner_steps = 2
batch_size = 4
epochs = 3

[smote]
ratio = 0.5

[experiment]
arms = ["LTR", "LTR+SMOTE", "MLTR_no_finetune", "MLTR_finetune"]
seeds = [0, 1]
out = "results"
record_timing = false

[sweep]
train_profiles = ["p1n4", "p1n9"]
tuning_profiles = ["p1n9"]
"""


@pytest.fixture
def workdir(tmp_path, synthetic):
    """A directory holding ``corpus.txt`` and a fast experiment config ``small.toml``."""
    from mltr.letor_io import write_dataset

    write_dataset(synthetic, tmp_path / "corpus.txt")
    (tmp_path / "small.toml").write_text(SMALL_CONFIG)
    return tmp_path


# acceptance report -------------------------------------------------------------

_acceptance = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or report.when not in ("setup", "call"):
        return
    if report.when == "setup" and report.passed:
        return
    number, title, part = marker.args
    reason = ""
    if not report.passed:
        crash = getattr(report.longrepr, "reprcrash", None)
        reason = (crash.message if crash else str(report.longrepr)).splitlines()[0]
    _acceptance.setdefault(number, (title, []))[1].append((part, report.passed, reason))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        title, parts = _acceptance[number]
        ok = all(p for _, p, _ in parts)
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}"
        if not ok:
            line += "  [" + "; ".join(
                f"{part}: {'PASS' if p else 'FAIL - ' + r}" for part, p, r in parts
            ) + "]"
        terminalreporter.write_line(line)
