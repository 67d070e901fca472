import numpy as np
import pytest

from crgan.tensor import Tensor, mul, tsum


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def weighted_sum(out: Tensor, seed: int = 99) -> Tensor:
    """Contract an op's output with a fixed random tensor to get an O(1) scalar."""
    w = np.random.default_rng(seed).standard_normal(out.shape)
    return tsum(mul(out, w))


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
