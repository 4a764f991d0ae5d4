import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance verdict lines, which are otherwise captured."""
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if rep.when == "call" and "test_acceptance" in rep.nodeid:
                lines += [l for l in rep.capstdout.splitlines() if l.startswith(("[PASS]", "[FAIL]"))]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[2])):
            terminalreporter.write_line(line)
