import numpy as np
import pytest

from exemplarnet.gradcheck import check_gradients
from exemplarnet.tensor import Tensor


def leaf(rng, *shape, lo=-1.0, hi=1.0, name=None):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True, name=name)


def assert_grads(loss_fn, params, rel=1e-5, h=1e-6):
    report = check_gradients(loss_fn, params, h=h)
    worst = {n: r for n, (_, r) in report.items() if r >= rel}
    assert not worst, f"gradient mismatch (rel err): {worst}"
    return report


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed after the run regardless of capture
ACCEPTANCE: list[str] = []


def record(num: int, ok: bool, text: str) -> bool:
    line = f"criterion {num}: {'PASS' if ok else 'FAIL'}  {text}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
