import pytest

from xmlqui.cli import load_schema
from xmlqui.schema import parse_dtd


@pytest.fixture(scope="session")
def fig1():
    return load_schema("fig1.dtd")


@pytest.fixture(scope="session")
def d1():
    return load_schema("d1.dtd")


@pytest.fixture(scope="session")
def bib():
    return load_schema("bib.dtd")


@pytest.fixture(scope="session")
def control():
    return load_schema("control.dtd")


@pytest.fixture(scope="session")
def flat():
    return parse_dtd("<!ELEMENT a (b+, c*)><!ELEMENT b EMPTY><!ELEMENT c EMPTY>")
