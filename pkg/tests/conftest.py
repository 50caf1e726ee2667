"""Shared fixtures and the acceptance-criteria reporter.

The acceptance tests record one line per criterion; the terminal
summary hook prints them after the run so pass/fail status is visible
even when pytest captures test output.
"""
import numpy as np
import pytest

from dualinv import harness

ACCEPTANCE_LINES = []


def record_criterion(number: int, name: str, ok: bool, detail: str = ""):
    status = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    ACCEPTANCE_LINES.append(f"[{status}] criterion {number}: {name}{suffix}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def default_experiment(tmp_path_factory):
    """The default 100-instance experiment, run once and shared."""
    out = tmp_path_factory.mktemp("default-exp")
    config = harness.config_from_mapping({"output_dir": str(out)}, env={})
    rows, summary, errors = harness.run_experiment(config)
    return {"config": config, "rows": rows, "summary": summary,
            "errors": errors, "dir": str(out)}


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(0)
