import pytest

from cfnt import decoder
from oracles import AUDIT


@pytest.fixture(autouse=True, scope="session")
def beam_audit():
    """Check S0 retention and span closure on every decode in the session."""
    decoder.OBSERVERS.append(AUDIT)
    yield AUDIT
    decoder.OBSERVERS.remove(AUDIT)


def pytest_terminal_summary(terminalreporter):
    a = AUDIT
    terminalreporter.write_line(
        f"beam audit: {a.snapshots} snapshots, {a.final_lists} final lists, "
        f"{a.spans_checked} spans checked, {a.violations} violations"
    )
