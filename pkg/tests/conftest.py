import dataclasses

import pytest
import torch

from maskdit.backbone import BackboneConfig
from maskdit.config import RunConfig, TrainConfig
from maskdit.data import DatasetSpec

ACCEPTANCE_LINES = []


def tiny_backbone(**overrides):
    """~2k-parameter model on 4x4 single-channel images (N = 4 tokens)."""
    base = dict(
        image_size=4, channels=1, patch_size=2, num_classes=2,
        encoder_depth=1, encoder_width=8, encoder_heads=2,
        decoder_depth=1, decoder_width=4, decoder_heads=2,
        mlp_ratio=2.0, frequency_dim=8,
    )
    base.update(overrides)
    return BackboneConfig(**base)


def small_config(**training):
    """A fast run config on 8x8 images for trainer / CLI tests."""
    backbone = BackboneConfig(
        image_size=8, channels=1, patch_size=2, num_classes=2,
        encoder_depth=2, encoder_width=32, encoder_heads=4,
        decoder_depth=1, decoder_width=16, decoder_heads=4,
        mlp_ratio=2.0, frequency_dim=32,
    )
    data = DatasetSpec(image_size=8, centers=((2.0, 2.0), (5.0, 5.0)), blob_width=1.0)
    train = dict(batch_size=8, phase1_steps=6, phase2_steps=4, ckpt_every=3)
    train.update(training)
    return RunConfig(backbone=backbone, data=data, training=TrainConfig(**train))


@pytest.fixture
def gen():
    return torch.Generator().manual_seed(1234)


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


__all__ = ["tiny_backbone", "small_config", "dataclasses"]
