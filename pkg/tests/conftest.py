import contextlib
import time

import numpy as np
import pytest

_RESULTS = {}

_LABELS = {
    1: "two-subspace norm identities",
    2: "MMOT orthogonality",
    3: "MOT angle sharpness and norm",
    4: "Sinkhorn equivalence",
    5: "inequality audit and envelope",
    6: "MMOT contraction constant",
    7: "gradient finite differences",
    8: "gauge invariance",
    9: "N-subspace product bound",
}


class _Criterion:
    def __init__(self, number):
        self.number = number
        self.details = []

    def note(self, text):
        self.details.append(text)


@contextlib.contextmanager
def _run(number):
    crit = _Criterion(number)
    start = time.perf_counter()
    try:
        yield crit
    except BaseException as exc:
        _RESULTS[number] = (False, f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
        raise
    else:
        elapsed = time.perf_counter() - start
        _RESULTS[number] = (True, "; ".join(crit.details + [f"{elapsed:.2f}s"]))


@pytest.fixture
def criterion():
    return _run


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number, label in _LABELS.items():
        if number in _RESULTS:
            ok, detail = _RESULTS[number]
            tr.write_line(f"criterion {number} [{label}]: {'PASS' if ok else 'FAIL'} ({detail})")
        else:
            tr.write_line(f"criterion {number} [{label}]: NOT RUN")
