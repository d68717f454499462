from __future__ import annotations

import math

import numpy as np
import pytest

from coulombcrit import Configuration, InteractionSpec, PotentialSpec, ProblemSpec

PAIR_A = 1.0 / (2.0 * math.sqrt(2.0))


def bisect_pair_separation(lo: float = 0.1, hi: float = 1.0) -> float:
    """Scalar oracle: a > 0 with 2a = 1/(4a) (force balance of two unit charges in V = |x|^2)."""
    f = lambda a: 2.0 * a - 1.0 / (4.0 * a)  # noqa: E731
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


@pytest.fixture
def harmonic() -> ProblemSpec:
    return ProblemSpec(2, potential=PotentialSpec.quadratic(1.0))


@pytest.fixture
def critical_pair() -> Configuration:
    return Configuration([[PAIR_A, 0.0], [-PAIR_A, 0.0]], [1.0, 1.0])


@pytest.fixture
def rich_spec() -> ProblemSpec:
    """Nonzero F and a non-radial V, to exercise every code path."""
    return ProblemSpec(
        2,
        interaction=InteractionSpec.gaussian(0.7, 0.6),
        potential=PotentialSpec.gaussian_well(1.0, 0.8, (0.1, 0.2)),
    )


def signed_configuration(rng: np.random.Generator, n: int, dim: int = 2) -> Configuration:
    while True:
        pos = rng.uniform(-1.0, 1.0, (n, dim))
        charges = rng.choice([-1.5, -1.0, -0.5, 0.5, 1.0, 2.0], n)
        diff = pos[:, None] - pos[None]
        gaps = np.sqrt((diff**2).sum(-1))[np.triu_indices(n, 1)]
        if n == 1 or gaps.min() > 0.1:
            return Configuration(pos, charges)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
