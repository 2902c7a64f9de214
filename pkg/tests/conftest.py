import numpy as np
import pytest

from lrsa.model import LRSAModel, ModelConfig, Vocabulary
from lrsa.synth import SynthSpec, generate_corpus


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus():
    train, dev, test = generate_corpus(SynthSpec(num_train=12, num_dev=4, num_test=4, d_visual=6, seed=3))
    return {"train": train, "dev": dev, "test": test}


@pytest.fixture
def tiny_model(small_corpus):
    cfg = ModelConfig(d_model=8, d_visual=6, enc_layers=1, dec_layers=1, heads=2, seed=5)
    return LRSAModel(cfg, Vocabulary.build(small_corpus["train"]))


# one summary line per acceptance criterion, whatever the capture mode
_criteria: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, name): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when != "call" and not report.failed:
        return
    number, name = mark.args
    detail = getattr(item, "criterion_detail", "")
    if report.failed:
        msg = str(report.longrepr.reprcrash.message) if hasattr(report.longrepr, "reprcrash") else "failed"
        _criteria[number] = (name, "FAIL", msg.splitlines()[0] if msg else "")
    elif report.when == "call":
        _criteria[number] = (name, "PASS", detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        name, status, detail = _criteria[number]
        terminalreporter.write_line(f"[{status}] {number}. {name}: {detail}")
