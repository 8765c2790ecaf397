import numpy as np
import pytest
from hypothesis import settings

from sa_dyn.attention import HeadWeights, MSAWeights

settings.register_profile("default", deadline=None, max_examples=30)
settings.load_profile("default")


def random_msa(rng, d, h, std=None, beta=None):
    std = 1.0 / np.sqrt(d) if std is None else std
    dh = d // h
    heads = tuple(HeadWeights(*(rng.standard_normal((d, dh)) * std for _ in range(3)))
                  for _ in range(h))
    return MSAWeights(heads, rng.standard_normal((d, d)) * std, beta)


def unit_rows(rng, s, d):
    x = rng.standard_normal((s, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def _hp_once(jacs, dps):
    import mpmath as mp

    with mp.workdps(dps):
        m = mp.eye(jacs[0].shape[1])
        for j in jacs:
            m = mp.matrix(j.tolist()) * m
        ev = mp.eigsy(m.T * m, eigvals_only=True)
        out = [float(mp.log(abs(e)) / (2 * len(jacs))) for e in ev]
    return np.sort(out)[::-1]


def hp_exponents(jacs, k=None, dps=60, max_dps=480):
    """Leading ``k`` of ``(1/2T) log eig(M^T M)`` in extended precision.

    ``M^T M`` squares the condition number of the product, so precision is
    doubled until the leading ``k`` agree between two consecutive levels.
    """
    prev = _hp_once(jacs, dps)[:k]
    while dps < max_dps:
        dps *= 2
        cur = _hp_once(jacs, dps)[:k]
        if np.max(np.abs(cur - prev)) <= 1e-13:
            return cur
        prev = cur
    raise RuntimeError("extended-precision oracle did not settle")


ACCEPTANCE_LINES = {}


@pytest.fixture
def verdict():
    """Record one pass/fail line per acceptance criterion."""

    def record(number, ok, detail):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
