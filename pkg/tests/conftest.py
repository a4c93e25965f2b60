import pytest

from heatlab.grid_model import FactorFamily, build_torus, make_factor


@pytest.fixture(scope="session")
def torus_n2():
    return build_torus(2, 16)


@pytest.fixture(scope="session")
def sin_factor_n3():
    tor = build_torus(3, 12)
    return tor, make_factor(tor, FactorFamily("sinusoidal", 0.1))


def pytest_terminal_summary(terminalreporter):
    lines = getattr(terminalreporter.config, "acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
