import numpy as np
import pytest

from crossret.toy import SynthConfig, ToyModel, generate_synthetic, train_toy

TOY_SEED = 7
TOY_STEPS = 200
TOY_LR = 0.05

_criteria: dict[str, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label, summary): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    label, summary = marker.args
    entry = _criteria.setdefault(label, [summary, True])
    if report.failed or (report.when == "setup" and report.skipped):
        entry[1] = False


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    key = lambda s: (int("".join(c for c in s if c.isdigit())), s)
    for label in sorted(_criteria, key=key):
        summary, ok = _criteria[label]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {label}: {summary}")


@pytest.fixture(scope="session")
def toy_config():
    return SynthConfig(num_pairs=8, d=8, separation=2.0)


@pytest.fixture(scope="session")
def toy_dataset(toy_config):
    return generate_synthetic(TOY_SEED, toy_config)


@pytest.fixture(scope="session")
def toy_initial_model(toy_config):
    return ToyModel.init(toy_config.category_names, toy_config.vocab, toy_config.d, np.random.default_rng(TOY_SEED))


@pytest.fixture(scope="session")
def toy_trained(toy_dataset, toy_initial_model):
    return train_toy(toy_dataset, toy_initial_model, TOY_STEPS, TOY_LR)
