from __future__ import annotations

import numpy as np
import pytest

_ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, title: str, passed: bool, detail: str = "") -> None:
    """Print and remember one pass/fail line for an acceptance criterion."""
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title}"
    if detail:
        line += f" ({detail})"
    print(line)
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):  # noqa: ARG001
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


def random_complex(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    return rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))


def random_density(rng: np.random.Generator, n: int) -> np.ndarray:
    """Random full-rank density matrix: ``G G^dagger`` normalized to unit trace."""
    g = random_complex(rng, n, n)
    rho = g @ g.conj().T
    rho = (rho + rho.conj().T) / 2
    return rho / np.trace(rho).real


def random_hermitian(rng: np.random.Generator, n: int) -> np.ndarray:
    g = random_complex(rng, n, n)
    return (g + g.conj().T) / 2


def naive_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Triple-loop product used as an independent oracle."""
    n, k = a.shape
    m = b.shape[1]
    out = [[0j] * m for _ in range(n)]
    al, bl = a.tolist(), b.tolist()
    for i in range(n):
        row = al[i]
        for j in range(m):
            s = 0j
            for t in range(k):
                s += row[t] * bl[t][j]
            out[i][j] = s
    return np.array(out, dtype=complex)
