import numpy as np
import pytest
import torch

import subtypecl as scl

_acceptance_results: dict[str, bool] = {}


@pytest.fixture(scope="session", autouse=True)
def _single_thread_torch():
    # bitwise-determinism tests assume a fixed reduction order
    torch.set_num_threads(1)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call" and "test_acceptance" in str(item.fspath):
        _acceptance_results[item.name] = rep.passed


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _acceptance_results:
        terminalreporter.write_sep("=", "acceptance criteria")
        for name in sorted(_acceptance_results):
            verdict = "PASS" if _acceptance_results[name] else "FAIL"
            terminalreporter.write_line(f"{verdict}  {name}")


@pytest.fixture
def tiny_cohort():
    spec = scl.SynthSpec(n_per_class=10, k_true=2, m_rois=8, t_len=40, seed=11)
    cohort, truth = scl.generate(spec)
    return cohort, truth


def make_subject(series, sid="s0", label=0, text=None):
    return scl.Subject(id=sid, label=label, series=np.asarray(series, dtype=float),
                       text=text)
