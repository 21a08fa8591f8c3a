"""Published hyper-parameters carried as defaults."""

import inspect

import numpy as np
import pytest

from bcnn_ctn.backbone import BackboneConfig
from bcnn_ctn.cli import build_parser
from bcnn_ctn.data import AugmentConfig, SplitSpec, to_signed
from bcnn_ctn.evaluation import build_pair_set, full_report
from bcnn_ctn.losses import Margins
from bcnn_ctn.trainer import TrainConfig


def test_joint_weight_default():
    assert Margins().alpha_t == 0.55


def test_optimiser_defaults():
    assert TrainConfig().learning_rate == 1e-4  # SGD, joint phase


def test_augmentation_defaults():
    a = AugmentConfig()
    assert (a.rotation_range, a.zoom_range, a.horizontal_flip) == (0.3, 0.3, True)
    np.testing.assert_array_equal(to_signed(np.array([0.0, 1.0])), [-1.0, 1.0])


def test_split_defaults():
    s = SplitSpec()
    assert (s.train_fraction, s.test_fraction, s.validation_fraction_of_train) == (0.8, 0.2, 0.1)


@pytest.mark.parametrize("rate,ok", [(0.25, True), (0.5, True), (0.2, False), (0.55, False)])
def test_dropout_range(rate, ok):
    if ok:
        BackboneConfig(dropout_rate=rate)
    else:
        with pytest.raises(ValueError):
            BackboneConfig(dropout_rate=rate)


def test_pair_protocol_defaults():
    sig = inspect.signature(build_pair_set).parameters
    assert (sig["count"].default, sig["same_fraction"].default) == (600, 0.6)
    assert inspect.signature(full_report).parameters["folds"].default == 10
    args = build_parser().parse_args(["pairs", "--data", "d", "--checkpoint", "c", "--out", "o"])
    assert (args.folds, args.count, args.same_fraction) == (10, 600, 0.6)
