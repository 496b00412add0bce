import sys
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@lru_cache(maxsize=None)
def cached_scene(seed: int, kind: str):
    from corridor.scene import gen_scene

    return gen_scene(seed, kind)


@lru_cache(maxsize=None)
def cached_corridor(seed: int, kind: str):
    from corridor.annotation import annotate_corridor

    return annotate_corridor(cached_scene(seed, kind))


@pytest.fixture
def acceptance_report():
    """Record a one-line verdict for an acceptance criterion; printed in the terminal summary."""

    def record(label: str, passed: bool, detail: str) -> None:
        ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] {label}: {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
