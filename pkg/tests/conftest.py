"""Shared fixtures: a tiny synthetic task and a small model config that keep
module tests in the sub-second range."""

import pytest

from masktune.data import SpuriousTaskSpec, gen_spurious_task
from masktune.trainer import TrainConfig


TINY_TRAIN_KWARGS = dict(
    epochs=1, seeds=1, batch_size=16, eval_batch_size=32,
    d_model=16, n_layers=1, n_heads=2, d_ff=32, max_len=16,
)


@pytest.fixture(scope="session")
def tiny_spec():
    return SpuriousTaskSpec(n_train=128, n_dev=32, n_test_indist=64,
                            n_test_ood=64, min_sentence_len=6,
                            max_sentence_len=9)


@pytest.fixture(scope="session")
def tiny_splits(tiny_spec):
    return gen_spurious_task(tiny_spec)


@pytest.fixture
def tiny_cfg():
    return TrainConfig(mode="mask_tuning", **TINY_TRAIN_KWARGS)
