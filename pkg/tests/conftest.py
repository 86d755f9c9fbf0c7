from __future__ import annotations

import shutil
from pathlib import Path

import pytest

from featrack.feedbackmodel import load_feedback_model_file
from featrack.splmodels import load_configuration, load_feature_model, load_file_index

FIXTURES = Path(__file__).parent / "fixtures"
WACLINE = FIXTURES / "wacline"

_acceptance_lines: list[str] = []


@pytest.fixture
def wacline(tmp_path) -> Path:
    """A private copy of the mini-WACline project."""
    dest = tmp_path / "wacline"
    shutil.copytree(WACLINE, dest)
    return dest


class Project:
    def __init__(self, root: Path) -> None:
        self.root = root
        self.platform = root / "platform"
        self.fm = load_feature_model(root / "model" / "feature-model.yaml")
        self.usage_fm = load_feature_model(root / "model" / "usage-model.yaml")
        self.index = load_file_index(root / "model" / "file-index.yaml", self.platform)
        self.feedback = load_feedback_model_file(root / "model" / "myFirstfeedback.yaml")
        self.configs = {v: load_configuration(root / "configs" / f"{v}.yaml", self.fm) for v in ("V1", "V2", "V3")}

    def config_path(self, variant: str) -> Path:
        return self.root / "configs" / f"{variant}.yaml"


@pytest.fixture
def project(wacline) -> Project:
    return Project(wacline)


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    if "acceptance" not in report.keywords:
        return
    status = "PASS" if report.outcome == "passed" else "FAIL"
    name = report.nodeid.split("::")[-1]
    _acceptance_lines.append(f"{status}  {name}")


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)
