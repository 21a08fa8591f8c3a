import numpy as np
import pytest
from hypothesis import settings

from bcnn_ctn.backbone import BackboneConfig, ConvBlock
from bcnn_ctn.data import make_synthetic
from bcnn_ctn.mining import SamplerConfig
from bcnn_ctn.trainer import TrainConfig

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_data():
    """k=3, 12 per class, 12x12 blobs."""
    return make_synthetic(3, 12, (12, 12), seed=7)


@pytest.fixture
def tiny_config():
    return TrainConfig(
        epochs=3, phase1_epochs=1, learning_rate=0.01, momentum=0.9, augment=None,
        sampler=SamplerConfig(classes_per_batch=2, samples_per_class=3),
        backbone=BackboneConfig(input_size=(3, 12, 12), conv_blocks=(ConvBlock(4), ConvBlock(4)),
                                embedding_dim=8, num_classes=3),
    )


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
