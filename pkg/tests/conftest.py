import time
from pathlib import Path

import pytest

from fedgan.cli import main

# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def record(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])


class PresetRuns:
    """Runs each preset bundle once per session; remembers wall time and exit code."""

    def __init__(self, root: Path):
        self.root = root
        self.seconds: dict[str, float] = {}
        self.codes: dict[str, int] = {}

    def __call__(self, name: str) -> Path:
        out = self.root / name
        if name not in self.codes:
            t0 = time.perf_counter()
            self.codes[name] = main(["run", "--preset", name, "--out", str(out)])
            self.seconds[name] = time.perf_counter() - t0
        return out


@pytest.fixture(scope="session")
def preset_run(tmp_path_factory):
    return PresetRuns(tmp_path_factory.mktemp("presets"))
