"""Token masking and perturbed-example construction.

The pipeline has two halves: pick positions and hide them behind [MASK]
(producing the language-model targets), then splice the model's predictions
back in to form a perturbed copy of the batch that keeps the original
labels.  Prediction substitution is a plain array write, so no gradient can
flow from the classifier back through the discrete token choice.
"""

from dataclasses import dataclass

import numpy as np

from .seeding import rng_for
from .tokenizer import CLS, MASK, PAD, SEP

# Structural tokens are never masked; [UNK] and real words are fair game.
NEVER_MASKED = (PAD, CLS, SEP)


@dataclass(frozen=True)
class MaskPolicy:
    """How many tokens to hide and from which random stream."""

    mask_rate: float = 0.05
    rng_seed: int = 0
    min_masks_per_example: int = 1

    def __post_init__(self):
        if not 0.0 < self.mask_rate < 1.0:
            raise ValueError(f"mask_rate must be in (0, 1), got {self.mask_rate}")
        if self.min_masks_per_example < 0:
            raise ValueError("min_masks_per_example must be >= 0")


@dataclass
class MaskedBatch:
    """A batch with [MASK] substituted and the hidden originals kept aside.

    mask_rows/mask_cols/original_ids are parallel arrays in row-major order;
    original_ids are the prediction targets.  skipped counts examples that
    had no maskable token at all (e.g. a lone [CLS]) and therefore
    contribute nothing to the language-model loss.
    """

    input_ids: np.ndarray
    mask_rows: np.ndarray
    mask_cols: np.ndarray
    original_ids: np.ndarray
    skipped: int = 0

    @property
    def n_masks(self):
        return int(self.original_ids.shape[0])

    def positions_for(self, row):
        """Masked column indices of one example."""
        return self.mask_cols[self.mask_rows == row]


@dataclass
class PerturbedBatch:
    """Masked positions replaced by predicted tokens; labels untouched."""

    token_ids: np.ndarray
    labels: np.ndarray


def eligible_positions(input_ids):
    """Boolean map of positions the policy may mask."""
    ids = np.asarray(input_ids)
    out = np.ones(ids.shape, dtype=bool)
    for special in NEVER_MASKED:
        out &= ids != special
    return out


def select_and_mask(input_ids, policy, epoch=0, batch_index=0):
    """Independently mask each eligible token with probability mask_rate.

    An example that draws fewer than min_masks_per_example gets extra
    positions forced in, chosen uniformly among its unmasked eligible
    tokens, so short sentences still produce a prediction target.  The draw
    is a pure function of (policy.rng_seed, epoch, batch_index).
    """
    ids = np.asarray(input_ids, dtype=np.int64)
    if ids.ndim != 2 or ids.shape[0] == 0:
        raise ValueError(f"expected a non-empty [batch, seq] array, got shape {ids.shape}")
    rng = rng_for(policy.rng_seed, "masking", epoch, batch_index)

    eligible = eligible_positions(ids)
    chosen = (rng.random(ids.shape) < policy.mask_rate) & eligible

    skipped = 0
    for row in range(ids.shape[0]):
        open_slots = np.flatnonzero(eligible[row])
        if open_slots.size == 0:
            skipped += 1
            continue
        need = min(policy.min_masks_per_example, open_slots.size)
        short = need - int(chosen[row].sum())
        if short > 0:
            unchosen = np.flatnonzero(eligible[row] & ~chosen[row])
            chosen[row, rng.choice(unchosen, size=short, replace=False)] = True

    rows, cols = np.nonzero(chosen)
    masked = MaskedBatch(
        input_ids=ids.copy(),
        mask_rows=rows.astype(np.int64),
        mask_cols=cols.astype(np.int64),
        original_ids=ids[rows, cols].copy(),
        skipped=skipped,
    )
    masked.input_ids[rows, cols] = MASK
    return masked


def build_perturbed(masked, predictions, labels):
    """Splice predicted token ids into the masked slots.

    The result differs from the original batch only where predictions differ
    from the hidden originals; every example keeps its original label.
    """
    predictions = np.asarray(predictions, dtype=np.int64)
    if predictions.shape != masked.original_ids.shape:
        raise ValueError(
            f"prediction count mismatch: got {predictions.shape[0]}, "
            f"expected {masked.n_masks}"
        )
    if predictions.size and predictions.min() < 0:
        raise ValueError("predictions must be non-negative token ids")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != masked.input_ids.shape[0]:
        raise ValueError(
            f"label count mismatch: got {labels.shape[0]}, "
            f"expected {masked.input_ids.shape[0]}"
        )
    token_ids = masked.input_ids.copy()
    token_ids[masked.mask_rows, masked.mask_cols] = predictions
    return PerturbedBatch(token_ids=token_ids, labels=labels.copy())


def perturbation_records(masked, predictions, vocab, example_ids, epoch):
    """Log rows (one dict per masked position) for the diversity analysis."""
    predictions = np.asarray(predictions, dtype=np.int64)
    if predictions.shape != masked.original_ids.shape:
        raise ValueError(
            f"prediction count mismatch: got {predictions.shape[0]}, "
            f"expected {masked.n_masks}"
        )
    example_ids = np.asarray(example_ids)
    records = []
    for i in range(masked.n_masks):
        row = int(masked.mask_rows[i])
        records.append({
            "epoch": int(epoch),
            "example_id": int(example_ids[row]),
            "position": int(masked.mask_cols[i]),
            "original_token": vocab.token_of(int(masked.original_ids[i])),
            "predicted_token": vocab.token_of(int(predictions[i])),
        })
    return records
