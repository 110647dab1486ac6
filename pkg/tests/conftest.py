import numpy as np
import pytest

from pasturefuse.autodiff import RngStream, set_precision


@pytest.fixture(autouse=True)
def _double_precision():
    set_precision("f64")
    yield
    set_precision("f64")


@pytest.fixture
def rng():
    return RngStream(1234)


def randn(rng, *shape, grad=True):
    from pasturefuse.autodiff import Tensor
    return Tensor(rng.normal(0.0, 1.0, shape), requires_grad=grad)


def allclose(a, b, tol=1e-12):
    return np.allclose(np.asarray(a), np.asarray(b), atol=tol, rtol=0)


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(tag: str, title: str, passed: bool, detail: str) -> None:
    line = f"{tag} {title}: {'PASS' if passed else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
