import numpy as np
import pytest

from cbpf.dataset import ContextFactorSpec, DatasetSchema


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def movie_schema():
    return DatasetSchema(
        factors=(
            ContextFactorSpec("time", ("weekend", "workingday", "holiday")),
            ContextFactorSpec("season", ("summer", "winter", "spring", "autumn")),
            ContextFactorSpec("location", ("home", "cinema")),
            ContextFactorSpec("companion", ("alone", "friends", "family")),
        ),
    )


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(RESULTS):
        ok, detail = RESULTS[key]
        status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        terminalreporter.write_line(f"criterion {key}: {status} - {detail}")
