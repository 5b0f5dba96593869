import os
import shutil
import time
from pathlib import Path

import pytest

from grnea import cli

# criterion lines collected by test_acceptance, echoed after the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    """The default fiber run (400 samples at 64 px, 300/100 split, 100 iterations).

    Set GRNEA_DESK_RUN to a directory to keep the run around; an existing
    complete run there is reused instead of retraining.
    """
    keep = os.environ.get("GRNEA_DESK_RUN")
    out = Path(keep) if keep else tmp_path_factory.mktemp("desk") / "run"
    marker = out / "report" / "report.txt"
    if keep and marker.exists():
        return out, None, None
    if out.exists():
        shutil.rmtree(out)
    t0 = time.perf_counter()
    code = cli.main(["run", "--seed", "0", "--out", str(out), "--benchmark", "fiber"])
    return out, code, time.perf_counter() - t0


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
