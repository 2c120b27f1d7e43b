import itertools

import numpy as np
import pytest

from pairseg.assignment import Permutation


def all_permutations(d: int) -> list[Permutation]:
    return [Permutation(p) for p in itertools.permutations(range(d))]


def random_permutation(rng: np.random.Generator, d: int) -> Permutation:
    return Permutation(tuple(int(v) for v in rng.permutation(d)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def record():
    """Log one PASS/FAIL line for an acceptance criterion."""

    def _record(name: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
