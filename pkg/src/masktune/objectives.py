"""The two training losses and their weighted aggregation.

Training optimizes one scalar: alpha times the masked-token prediction loss
plus (1 - alpha) times the classification loss on the perturbed batch.
Both operands stay in the same autodiff graph, so one backward pass reaches
the prediction head, the classifier head, and the shared encoder through
both paths at once.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T

# Batches below this loss are counted as "near zero" in run summaries.
# Purely diagnostic; no training decision ever branches on it.
NEAR_ZERO_LOSS = 0.1


@dataclass(frozen=True)
class LossBreakdown:
    """Scalar record of one training step's losses."""

    l_mlm: float
    l_ft: float
    l_masktuning: float
    alpha: float

    def __post_init__(self):
        for name in ("l_mlm", "l_ft", "l_masktuning"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} is not finite: {getattr(self, name)}")


def mlm_loss(logits, original_ids):
    """Mean cross-entropy of masked-position logits against the hidden tokens.

    Zero masked positions yields exactly 0 with zero gradient, so batches
    whose every example was skipped still aggregate cleanly.
    """
    return T.cross_entropy(logits, original_ids)


def ft_loss(cls_logits, labels):
    """Mean cross-entropy of the classifier against the original labels."""
    return T.cross_entropy(cls_logits, labels)


def integrated_loss(l_mlm, l_ft, alpha):
    """Convex combination alpha * l_mlm + (1 - alpha) * l_ft.

    Returns the combined scalar tensor (still connected to both operands)
    and a LossBreakdown of the plain float values for logging.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    alpha = float(alpha)
    combined = l_mlm * alpha + l_ft * (1.0 - alpha)
    breakdown = LossBreakdown(
        l_mlm=l_mlm.item(),
        l_ft=l_ft.item(),
        l_masktuning=combined.item(),
        alpha=alpha,
    )
    return combined, breakdown


def scenario_bucket(breakdown):
    """Diagnostic quadrant of a step: which losses sit near zero."""
    mlm_low = breakdown.l_mlm < NEAR_ZERO_LOSS
    ft_low = breakdown.l_ft < NEAR_ZERO_LOSS
    return f"mlm_{'low' if mlm_low else 'high'}_ft_{'low' if ft_low else 'high'}"
