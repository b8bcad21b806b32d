import warnings

import numpy as np
import pytest

from gtreg.dictionary import DictionarySpec, build_dictionary
from gtreg.simulate import DgpSpec, generate

# Lines reported by tests/test_acceptance.py, printed in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


CLASS_SPECS = {
    "linear-linear": DictionarySpec.linear_linear(),
    "spline-x": DictionarySpec.spline_x(6),
    "spline-y": DictionarySpec.spline_y(6, 2),
    "spline-spline": DictionarySpec.spline_spline(6, 6, 3, 2),
}


@pytest.fixture(scope="session")
def ls_sample():
    return generate(DgpSpec("linear-location-scale", 2000, 11))


@pytest.fixture(scope="session")
def ls_designs(ls_sample):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return {k: build_dictionary(s, ls_sample.y, ls_sample.x) for k, s in CLASS_SPECS.items()}


@pytest.fixture(scope="session")
def ls_fits(ls_designs):
    from gtreg.solver import fit_ml

    return {k: fit_ml(d) for k, d in ls_designs.items()}


def random_feasible_point(d, rng, scale=0.3):
    """Canonical point plus a perturbation shrunk until b't_i > 0 at every row."""
    b0 = np.zeros(d.jk)
    b0[1] = 1.0
    step = rng.normal(scale=scale, size=d.jk)
    for _ in range(60):
        b = b0 + step
        if np.min(d.t @ b) > 0.05:
            return b
        step *= 0.5
    return b0
