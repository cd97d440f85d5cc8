import numpy as np
import pytest

from evofilter import dynsys, kalman

CRITERIA = {}


def record_criterion(number, title, passed, detail=""):
    CRITERIA[number] = (title, bool(passed), detail)
    line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title}"
    print(line + (f" ({detail})" if detail else ""))


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        title, passed, detail = CRITERIA[number]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number}. {title}: {detail}")


@pytest.fixture(scope="session")
def system():
    return dynsys.make_system()


@pytest.fixture(scope="session")
def gaussian_data(system):
    return kalman.make_datasets(system, dynsys.Scenario("gaussian"), seed=0)


@pytest.fixture(scope="session")
def small_data(system):
    sizes = {"train": (1, 100), "validation": (4, 100), "test": (4, 100)}
    return kalman.make_datasets(system, dynsys.Scenario("gaussian"), seed=1, sizes=sizes)


def random_psd(rng, n=2):
    a = rng.uniform(-1, 1, (n, n))
    return a @ a.T + 0.5 * np.eye(n)


def filter_inputs(rng, n=2):
    """Random (x, F, P, Q, z, R) with symmetric positive definite covariances."""
    return {
        "x": rng.normal(size=(n, 1)),
        "F": rng.uniform(-1.5, 1.5, (n, n)),
        "P": random_psd(rng, n),
        "Q": random_psd(rng, n),
        "z": rng.normal(size=(n, 1)),
        "R": random_psd(rng, n),
    }
