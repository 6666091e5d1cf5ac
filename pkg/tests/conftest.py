from pathlib import Path

import pytest

from commentqoe.embedding import AnchorSet, HashedBagOfWordsEmbedder, default_anchor_phrases
from commentqoe.lexicon import default_lexicon
from commentqoe.normalize import default_normalization

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def norm():
    return default_normalization()


@pytest.fixture(scope="session")
def lex():
    return default_lexicon()


@pytest.fixture(scope="session")
def stub():
    return HashedBagOfWordsEmbedder()


@pytest.fixture(scope="session")
def anchors(stub):
    return AnchorSet.build(default_anchor_phrases(), stub)


# -- acceptance summary ------------------------------------------------------
# Tests marked ``@pytest.mark.acceptance(n, "title")`` report one line per
# criterion at the end of the run.

_criteria: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    n, title = mark.args
    prev = _criteria.get(n, (title, "PASS"))[1]
    if rep.failed:
        status = "FAIL"
    elif rep.skipped and prev == "PASS" and rep.when in ("setup", "call"):
        status = "SKIP"
    else:
        status = prev
    _criteria[n] = (title, status)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, status = _criteria[n]
        terminalreporter.write_line(f"criterion {n} [{status}] {title}")
