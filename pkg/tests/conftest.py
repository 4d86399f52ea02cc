import json
from pathlib import Path

import numpy as np
import pytest

from switchdiff.cli import main
from switchdiff.gmm import default_gmm
from switchdiff.schedule import VpSchedule, make_grid
from switchdiff.scorenet import NetworkScore, load_checkpoint

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def schedule():
    return VpSchedule()


@pytest.fixture
def gmm():
    return default_gmm()


@pytest.fixture
def grid():
    return make_grid(1000, 10)


def write_config(path: Path, **blocks) -> Path:
    doc = {"schema_version": 1, "seed": 0}
    doc.update(blocks)
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture(scope="session")
def trained_run(tmp_path_factory):
    """Default GMM, 20000 DSM steps through the CLI; shared by every test that needs a network."""
    root = tmp_path_factory.mktemp("trained")
    cfg = write_config(root / "train.json", train={"steps": 20000})
    assert main(["train", "--config", str(cfg), "--out", str(root / "out")]) == 0
    ckpt = root / "out" / "checkpoint.json"
    model, schedule, _ = load_checkpoint(ckpt)
    loss = np.loadtxt(root / "out" / "loss.csv", delimiter=",", skiprows=1)
    return {"checkpoint": ckpt, "source": NetworkScore(model, schedule), "loss": loss}
