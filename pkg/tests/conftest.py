import numpy as np
import pytest

from aeg.data import make_gaussian_pair, make_two_moons

_ACCEPTANCE_LINES = []


@pytest.fixture
def record():
    """Collect a PASS/FAIL line for the end-of-run acceptance summary."""
    def _record(tag, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} [{tag}] {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def moons():
    return make_two_moons(200, 0.1, seed=7)


@pytest.fixture(scope="session")
def gauss2():
    return make_gaussian_pair(200, 1.0, 1.0, 2, seed=5)


def central_diff(fn, x, h=1e-6):
    """Central finite differences of a scalar or array valued ``fn`` at ``x``.

    Returns an array of shape ``fn(x).shape + x.shape``.
    """
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fn(x))
    out = np.empty(f0.shape + x.shape)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        out[(...,) + idx] = (np.asarray(fn(x + e)) - np.asarray(fn(x - e))) / (2 * h)
    return out


def rel_err(a, b, floor=1e-8):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))
