import pytest
import torch
from hypothesis import settings

from hybrid_slm import acceptance

torch.set_num_threads(1)

settings.register_profile("default", deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def overfit():
    """The 2000-step overfit run, trained once and shared."""
    return acceptance.overfit_run(0)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for result in sorted(RESULTS, key=lambda r: r.number):
            terminalreporter.write_line(result.line())
