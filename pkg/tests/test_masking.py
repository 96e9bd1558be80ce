"""Masking policy tests.

The empirical mask rate oracle: with independent per-token draws at rate r
and a floor of one mask per example, an example with L eligible tokens has
expected rate r + (1-r)^L / L. Sentence lengths here are chosen so that the
pooled expectation sits inside the asserted window.
"""

import numpy as np
import pytest

from masktune.masking import (MaskPolicy, MaskedBatch, NEVER_MASKED,
                              build_perturbed, eligible_positions,
                              perturbation_records, select_and_mask)
from masktune.tokenizer import CLS, MASK, PAD, SEP, UNK, build_vocab


def sentences(n, length, vocab_size=40, seed=0):
    rng = np.random.default_rng(seed)
    ids = rng.integers(5, vocab_size, size=(n, length + 1))
    ids[:, 0] = CLS
    return ids


# ------------------------------------------------------------------ policy

def test_policy_validation():
    MaskPolicy(mask_rate=0.5)
    for rate in (0.0, 1.0, -0.2, 1.5):
        with pytest.raises(ValueError):
            MaskPolicy(mask_rate=rate)
    with pytest.raises(ValueError):
        MaskPolicy(min_masks_per_example=-1)


def test_eligible_positions_excludes_specials():
    ids = np.array([[CLS, 7, PAD, SEP, MASK, UNK]])
    elig = eligible_positions(ids)
    assert elig.tolist() == [[False, True, False, False, True, True]]
    assert set(NEVER_MASKED) == {PAD, CLS, SEP}


# ----------------------------------------------------------- select_and_mask

def test_empirical_mask_rate_window():
    # 60 eligible tokens per example: floor inflation (1-r)^60/60 is ~0.0008,
    # so the pooled rate stays near 0.05. 2000 x 60 = 120k eligible tokens.
    policy = MaskPolicy(mask_rate=0.05, rng_seed=11)
    total_masks = 0
    total_eligible = 0
    for b in range(20):
        ids = sentences(100, 60, seed=100 + b)
        masked = select_and_mask(ids, policy, epoch=0, batch_index=b)
        total_masks += masked.n_masks
        total_eligible += int(eligible_positions(ids).sum())
    assert total_eligible >= 100000
    rate = total_masks / total_eligible
    assert 0.045 < rate < 0.055


def test_special_positions_never_masked():
    policy = MaskPolicy(mask_rate=0.6, rng_seed=3)
    ids = sentences(50, 8, seed=5)
    ids[:, 3] = PAD
    ids[:, 4] = SEP
    masked = select_and_mask(ids, policy)
    assert masked.n_masks > 0
    assert not np.any(masked.mask_cols == 0)  # [CLS]
    assert not np.any(masked.mask_cols == 3)
    assert not np.any(masked.mask_cols == 4)
    # Masked slots really hold [MASK]; untouched slots are unchanged.
    assert np.all(
        masked.input_ids[masked.mask_rows, masked.mask_cols] == MASK)
    untouched = ids.copy()
    untouched[masked.mask_rows, masked.mask_cols] = MASK
    assert np.array_equal(masked.input_ids, untouched)


def test_floor_rule_tiny_rate_masks_exactly_one():
    policy = MaskPolicy(mask_rate=1e-9, rng_seed=0, min_masks_per_example=1)
    ids = sentences(40, 10, seed=6)
    masked = select_and_mask(ids, policy)
    per_row = np.bincount(masked.mask_rows, minlength=40)
    assert np.all(per_row == 1)


def test_floor_rule_respects_short_examples():
    # Only 2 eligible tokens but a floor of 3: mask both, never more.
    policy = MaskPolicy(mask_rate=1e-9, rng_seed=0, min_masks_per_example=3)
    ids = np.array([[CLS, 9, 8, PAD, PAD]])
    masked = select_and_mask(ids, policy)
    assert masked.n_masks == 2


def test_example_without_eligible_tokens_is_skipped():
    policy = MaskPolicy(mask_rate=0.5, rng_seed=1)
    ids = np.array([[CLS, PAD, PAD], [CLS, 7, 8]])
    masked = select_and_mask(ids, policy)
    assert masked.skipped == 1
    assert not np.any(masked.mask_rows == 0)
    assert np.any(masked.mask_rows == 1)


def test_select_and_mask_deterministic_per_step():
    policy = MaskPolicy(mask_rate=0.15, rng_seed=9)
    ids = sentences(30, 12, seed=7)
    a = select_and_mask(ids, policy, epoch=2, batch_index=5)
    b = select_and_mask(ids, policy, epoch=2, batch_index=5)
    assert np.array_equal(a.input_ids, b.input_ids)
    assert np.array_equal(a.mask_rows, b.mask_rows)
    assert np.array_equal(a.mask_cols, b.mask_cols)
    assert np.array_equal(a.original_ids, b.original_ids)
    # A different step re-rolls the pattern.
    c = select_and_mask(ids, policy, epoch=3, batch_index=5)
    same = (np.array_equal(a.mask_rows, c.mask_rows)
            and np.array_equal(a.mask_cols, c.mask_cols))
    assert not same


def test_select_and_mask_rejects_bad_input():
    policy = MaskPolicy(mask_rate=0.1)
    with pytest.raises(ValueError):
        select_and_mask(np.zeros((0, 4), dtype=np.int64), policy)
    with pytest.raises(ValueError):
        select_and_mask(np.array([CLS, 5, 6]), policy)


def test_original_ids_are_the_hidden_tokens():
    policy = MaskPolicy(mask_rate=0.3, rng_seed=2)
    ids = sentences(20, 10, seed=8)
    masked = select_and_mask(ids, policy)
    assert np.array_equal(
        masked.original_ids, ids[masked.mask_rows, masked.mask_cols])


# ------------------------------------------------------------ build_perturbed

def test_build_perturbed_hamming_property():
    # The perturbed batch differs from the ORIGINAL batch exactly where the
    # prediction disagrees with the hidden token.
    rng = np.random.default_rng(10)
    policy = MaskPolicy(mask_rate=0.25, rng_seed=4)
    for trial in range(10):
        ids = sentences(15, 9, seed=20 + trial)
        masked = select_and_mask(ids, policy, batch_index=trial)
        preds = rng.integers(5, 40, size=masked.n_masks)
        labels = rng.integers(0, 2, size=15)
        pert = build_perturbed(masked, preds, labels)
        diff = int((pert.token_ids != ids).sum())
        want = int((preds != masked.original_ids).sum())
        assert diff == want
        assert np.array_equal(pert.labels, labels)


def test_build_perturbed_identical_predictions_recover_original():
    policy = MaskPolicy(mask_rate=0.2, rng_seed=5)
    ids = sentences(10, 8, seed=30)
    masked = select_and_mask(ids, policy)
    pert = build_perturbed(masked, masked.original_ids, np.zeros(10))
    assert np.array_equal(pert.token_ids, ids)


def test_build_perturbed_count_mismatch():
    policy = MaskPolicy(mask_rate=0.2, rng_seed=5)
    ids = sentences(6, 8, seed=31)
    masked = select_and_mask(ids, policy)
    with pytest.raises(ValueError) as exc:
        build_perturbed(masked, masked.original_ids[:-1], np.zeros(6))
    assert "mismatch" in str(exc.value)
    with pytest.raises(ValueError):
        build_perturbed(masked, masked.original_ids, np.zeros(5))


def test_positions_for_row():
    masked = MaskedBatch(
        input_ids=np.full((3, 4), 9),
        mask_rows=np.array([0, 0, 2]),
        mask_cols=np.array([1, 3, 2]),
        original_ids=np.array([7, 7, 7]),
    )
    assert masked.positions_for(0).tolist() == [1, 3]
    assert masked.positions_for(1).tolist() == []
    assert masked.positions_for(2).tolist() == [2]


# ------------------------------------------------------ perturbation_records

def test_perturbation_records_fields():
    vocab = build_vocab(["tree house river stone cloud"])
    text_ids = np.array([
        [CLS, vocab.id_of("tree"), vocab.id_of("house")],
        [CLS, vocab.id_of("river"), vocab.id_of("stone")],
    ])
    policy = MaskPolicy(mask_rate=1e-9, rng_seed=0)
    masked = select_and_mask(text_ids, policy)
    preds = np.full(masked.n_masks, vocab.id_of("cloud"))
    records = perturbation_records(
        masked, preds, vocab, example_ids=np.array([41, 42]), epoch=2)
    assert len(records) == masked.n_masks == 2
    for rec in records:
        assert rec["epoch"] == 2
        assert rec["example_id"] in (41, 42)
        assert rec["predicted_token"] == "cloud"
        assert rec["original_token"] in ("tree", "house", "river", "stone")
        assert rec["position"] in (1, 2)


def test_perturbation_records_count_mismatch():
    vocab = build_vocab(["a b"])
    ids = np.array([[CLS, 5, 6]])
    masked = select_and_mask(ids, MaskPolicy(mask_rate=0.9, rng_seed=1))
    with pytest.raises(ValueError):
        perturbation_records(masked, np.zeros(masked.n_masks + 1, dtype=int),
                             vocab, np.array([0]), epoch=0)
