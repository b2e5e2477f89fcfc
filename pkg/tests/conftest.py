import numpy as np
import pytest

from honestforest.data import Dataset, DgpSpec, generate_dataset


@pytest.fixture
def stylized_strong():
    return generate_dataset(DgpSpec("stylized", n=800, d=4, effect_scale=2.0, noise_sd=0.1, seed=3))


@pytest.fixture
def linear_ds():
    return generate_dataset(DgpSpec("linear", n=600, d=5, effect_scale=1.0, noise_sd=1.0, seed=11))


def make_dataset(X, t, y, **kw):
    return Dataset(np.asarray(X, dtype=float), np.asarray(t), np.asarray(y, dtype=float), **kw)


ACCEPTANCE_LINES = []


def record_acceptance(number, passed, detail):
    line = f"CRITERION {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
