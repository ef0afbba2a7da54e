import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from avcil.harness import ExperimentConfig  # noqa: E402
from avcil.synth import SynthConfig  # noqa: E402

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(scope="session")
def small_synth():
    return SynthConfig(n_species=3, samples_per_class_train=30, samples_per_class_val=8,
                       samples_per_class_test=10, d=12, L=2, S=2)


@pytest.fixture(scope="session")
def small_experiment(small_synth):
    from avcil.pipeline import HailConfig

    return ExperimentConfig(
        methods=("hail", "finetune"), synth=small_synth, seeds=(0,),
        hail=HailConfig(fusion_steps=20, balancer_steps=20),
    )


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
