import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from adaptive_uzawa.linalg import CsrMatrix

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_spd(rng, n, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = np.exp(rng.uniform(0.0, np.log(cond), n))
    M = (Q * lam) @ Q.T
    return 0.5 * (M + M.T)


def random_sparse(rng, n_rows, n_cols, density=0.3):
    a = rng.standard_normal((n_rows, n_cols))
    a[rng.random((n_rows, n_cols)) > density] = 0.0
    return a


def laplacian_2d(k):
    """5-point Dirichlet Laplacian on a k x k interior grid."""
    n = k * k
    rows, cols, vals = [], [], []
    for j in range(k):
        for i in range(k):
            r = j * k + i
            rows.append(r); cols.append(r); vals.append(4.0)
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                ii, jj = i + di, j + dj
                if 0 <= ii < k and 0 <= jj < k:
                    rows.append(r); cols.append(jj * k + ii); vals.append(-1.0)
    return CsrMatrix.from_coo((n, n), rows, cols, vals)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record one acceptance line; the lines are repeated in the terminal summary."""
    def record(number, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
