import numpy as np
import pytest


def numeric_grad(f, params, eps=1e-6):
    """Central differences of the scalar ``f()`` w.r.t. ``params`` (modified in place, then restored)."""
    g = np.zeros_like(params)
    for i in range(params.size):
        old = params[i]
        params[i] = old + eps
        hi = f()
        params[i] = old - eps
        lo = f()
        params[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


def max_rel_error(analytic, numeric, floor=1e-6):
    # the floor keeps entries that are zero up to rounding from dominating
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = []


def record(criterion, passed, detail):
    """Log one acceptance verdict; the lines are printed in the terminal summary."""
    ACCEPTANCE.append((criterion, bool(passed), detail))
    print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'}: {detail}")
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {criterion:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
