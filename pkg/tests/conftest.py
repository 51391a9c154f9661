import functools
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from batterybench import engine as en

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def rand_herm(rng, n, scale=1.0):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return scale * 0.5 * (a + a.conj().T)


def rand_density(rng, n):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    r = a @ a.conj().T
    return r / np.trace(r).real


def rand_complex(rng, n, scale=1.0):
    return scale * (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))


# -- acceptance bookkeeping ----------------------------------------------------

_CRITERIA = {}


class CriterionLog:
    def __init__(self, label):
        self.label = label
        self.t0 = time.perf_counter()
        self.notes = []

    def elapsed(self):
        return time.perf_counter() - self.t0

    def note(self, text):
        self.notes.append(text)

    def record(self, passed, detail=""):
        _CRITERIA[self.label] = (bool(passed), detail, self.elapsed())
        return passed


@pytest.fixture
def criterion():
    return CriterionLog


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_CRITERIA, key=lambda s: (len(s), s)):
        ok, detail, dt = _CRITERIA[label]
        terminalreporter.write_line(
            f"criterion {label}: {'PASS' if ok else 'FAIL'} ({dt:.1f} s) {detail}")


# -- shared engine runs ----------------------------------------------------------

@functools.lru_cache(maxsize=None)
def _engine_run(initial, N, p, seed=None):
    params = en.EngineParams(N=N, p1=p, p2=p)
    t0 = time.perf_counter()
    run = en.run_engine(params, initial, t_final=200.0, h=0.01, sample_stride=10, seed=seed)
    return run, time.perf_counter() - t0


@pytest.fixture(scope="session")
def engine_run():
    """``engine_run(initial, N, p=0.01, seed=None) -> (EngineRun, seconds)``,
    cached for the session so several criteria share one trajectory."""
    def get(initial, N=2, p=0.01, seed=None):
        return _engine_run(initial, N, p, seed)
    return get
