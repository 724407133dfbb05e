import pytest

from coopaim.road_net import build_four_way

ACCEPTANCE_FILE = "test_acceptance.py"


@pytest.fixture(scope="session")
def net():
    return build_four_way()


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion, in criterion order."""
    lines = []
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            if getattr(rep, "when", "call") not in ("call", "setup"):
                continue
            if ACCEPTANCE_FILE not in rep.nodeid:
                continue
            if rep.when == "setup" and rep.passed:
                continue
            props = dict(getattr(rep, "user_properties", []))
            crit = props.get("criterion")
            if crit is None:
                continue
            verdict = "PASS" if rep.passed else "FAIL"
            lines.append((crit, f"criterion {crit:>2}: {verdict}  {props.get('summary', '')}".rstrip()))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, text in sorted(lines):
        terminalreporter.write_line(text)
