from pathlib import Path

import pytest
import torch

from pqdast.checkpoint import save_checkpoint
from pqdast.networks import StyleTransferModel, VGGEncoder
from pqdast.training import TrainConfig

FIXTURES = Path(__file__).parent / "fixtures"
VIDEO_ROOT = FIXTURES / "mini_sintel"
STYLE_ROOT = FIXTURES / "styles"


@pytest.fixture(scope="session")
def encoder():
    return VGGEncoder.surrogate(0)


@pytest.fixture(scope="session")
def teacher(encoder):
    return StyleTransferModel.build("teacher", encoder, seed=1)


@pytest.fixture(scope="session")
def teacher_ckpt(tmp_path_factory, teacher):
    return save_checkpoint(tmp_path_factory.mktemp("teacher") / "teacher.pt", teacher)


@pytest.fixture
def make_config(tmp_path, teacher_ckpt):
    def make(**kw):
        base = dict(
            steps=10, batch_size=2, image_size=64, video_root=str(VIDEO_ROOT),
            style_root=str(STYLE_ROOT), teacher_checkpoint=str(teacher_ckpt),
            encoder="surrogate:0", depth="stub", out_dir=str(tmp_path / "run"),
            checkpoint_every=0,
        )
        base.update(kw)
        return TrainConfig(**base)

    return make


def rand_image(gen, h=32, w=32, n=None, dtype=torch.float32):
    shape = (3, h, w) if n is None else (n, 3, h, w)
    return torch.rand(shape, generator=gen, dtype=dtype)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = {}


def record_criterion(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {title} ({detail})"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
