import numpy as np
import pytest

from boxcal.predictive import GroundTruth
from boxcal.records import PredictionRecord, write_jsonl

_acceptance: list[tuple[str, str, str]] = []


def make_predictions(n, sd_ratio=1.0, seed=0, shuffle_var=False, with_truth=True):
    """Prediction records whose truth is drawn from N(mean, (sd_ratio * sd)^2).

    sd_ratio 1 gives a calibrated model; above 1 an overconfident one.
    ``shuffle_var`` decouples the stated variance from the actual error.
    """
    rng = np.random.default_rng(seed)
    recs = []
    sd = rng.uniform(0.004, 0.03, size=(n, 4))
    stated = rng.permuted(sd, axis=0) if shuffle_var else sd
    for k in range(n):
        mean = np.array([0.3, 0.3, 0.7, 0.7]) + rng.uniform(-0.05, 0.05, size=4)
        truth = None
        if with_truth:
            box = np.clip(mean + rng.normal(size=4) * sd[k] * sd_ratio, 0.0, 1.0)
            truth = GroundTruth(tuple(box.tolist()), int(rng.integers(2)))
        p = float(rng.uniform(0.5, 1.0))
        recs.append(PredictionRecord(f"r{k:05d}", tuple(mean.tolist()), (0.0,) * 4,
                                     tuple((stated[k] ** 2).tolist()), (p, 1 - p), truth, (p, 1 - p)))
    return recs


def write_predictions(path, recs):
    write_jsonl(path, (r.to_json() for r in recs))
    return path


@pytest.fixture
def predictions_file(tmp_path):
    def make(name="pred.jsonl", **kw):
        return write_predictions(tmp_path / name, make_predictions(**kw))
    return make


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        _acceptance.append((marker.args[0], marker.args[1], rep.outcome))


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(id, title): primary acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for ident, title, outcome in sorted(_acceptance):
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{verdict}] {ident}: {title}")
