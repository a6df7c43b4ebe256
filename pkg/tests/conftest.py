from pathlib import Path

import pytest

from ihpm.cli import parse_instance
from ihpm.dispatch import solve_ihpd

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


@pytest.fixture(scope="session")
def summer():
    return parse_instance((FIXTURES / "summer.json").read_bytes())


@pytest.fixture(scope="session")
def winter():
    return parse_instance((FIXTURES / "winter.json").read_bytes())


@pytest.fixture(scope="session")
def summer_dispatch(summer):
    return solve_ihpd(summer)


@pytest.fixture(scope="session")
def winter_dispatch(winter):
    return solve_ihpd(winter)
