"""Shared test fixtures: finite-difference oracles and the acceptance recorder."""

from __future__ import annotations

import os

# run the numeric stack single-threaded: the end-to-end timing budget is
# specified for one core, and results must not depend on BLAS scheduling.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np
import pytest

# Acceptance tests register one line each; printed after the run so the
# pass/fail verdicts are visible even with output capture on.
_ACCEPTANCE_LINES: list[str] = []


def record_criterion(name: str, passed: bool, detail: str) -> None:
    _ACCEPTANCE_LINES.append(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")


def pytest_terminal_summary(terminalreporter, exitstatus, config) -> None:
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in _ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


@pytest.fixture
def record():
    return record_criterion


def central_difference(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Dense central-difference gradient of scalar f at x (oracle)."""
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f()
        flat[i] = orig - step
        lo = f()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return g


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray,
                floor: float = 1e-6) -> float:
    """Worst-case relative disagreement, ignoring jointly-tiny entries.

    Central differences at step 1e-5 in f64 carry ~1e-10 absolute noise,
    so entries where both sides sit below the floor are treated as equal;
    a relative comparison there would only measure that noise.
    """
    a, n = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    err = np.abs(a - n) / denom
    err[(np.abs(a) < floor) & (np.abs(n) < floor)] = 0.0
    return float(err.max())
