from pathlib import Path

import pytest
from hypothesis import settings

from lexboost.text_index import Corpus, build_index

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

FIXTURE_DIR = Path(__file__).resolve().parent.parent / "data" / "fixture"

TOY = [("d1", "a b a"), ("d2", "b c"), ("d3", "c c c")]


@pytest.fixture
def toy_corpus():
    return Corpus.from_pairs(TOY)


@pytest.fixture
def toy_index(toy_corpus):
    return build_index(toy_corpus)


@pytest.fixture(scope="session")
def fixture_dir():
    return FIXTURE_DIR


# one pass/fail line per acceptance criterion at the end of the session
_criteria = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    _criteria[name] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in sorted(_criteria.items()):
        terminalreporter.write_line(f"{outcome}  {name}")
