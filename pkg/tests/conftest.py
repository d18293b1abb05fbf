import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from aprx import cli, interp, lang  # noqa: E402
from aprx.termprover import InputDomain  # noqa: E402

CORPUS = Path(__file__).resolve().parents[1] / "src" / "aprx" / "corpus"
SEQ_DIR = CORPUS / "sequential"
CONC_DIR = CORPUS / "concurrent"


def manifest(directory):
    return cli.parse_manifest((directory / "manifest.txt").read_text())


def load(directory, name):
    """(program, source, tests, domain) for one corpus entry."""
    path = directory / name
    src = path.read_text()
    tests_path = path.with_suffix(".tests")
    tests = list(interp.parse_tests(tests_path.read_text())) if tests_path.exists() else []
    dom = InputDomain.parse([m.group(1) for m in cli.DOM_PRAGMA.finditer(src)])
    return lang.parse(src), src, tests, dom


@pytest.fixture(scope="session")
def seq_manifest():
    return manifest(SEQ_DIR)


@pytest.fixture(scope="session")
def conc_manifest():
    return manifest(CONC_DIR)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
