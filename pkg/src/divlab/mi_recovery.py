"""Mutual-information recovery from a skew-trained critic.

A critic trained on an alpha-skew objective converges to
log(r / (alpha*r + 1 - alpha)) rather than the log density ratio r itself.
This module inverts that transform: estimate the normalization constant from
the batch, recover the approximate density ratio at the positive pairs, and
average its log. The estimate is deliberately left unclamped; a batch where
the inversion denominator goes non-positive is reported as an error so that
variance studies see the pathology instead of a silently biased number.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .objectives import ScoreTable, _check_finite


class SkewInversionError(ArithmeticError):
    """The estimated normalizer cannot be inverted for some positive pair."""

    def __init__(self, indices):
        self.indices = list(indices)
        super().__init__(
            "normalizer minus alpha * exp(pos) is non-positive at positive "
            f"pair(s) {self.indices}; enlarge the batch or lower alpha"
        )


@dataclass(frozen=True)
class RatioEstimate:
    z_hat: float
    r_hat_pos: np.ndarray
    mi_hat: float


def estimate_mi_from_pairs(pos: np.ndarray, neg: np.ndarray, alpha: float) -> RatioEstimate:
    """Recover an MI estimate from scores already on the training scale.

    z_hat = alpha * mean(exp(pos)) + (1 - alpha) * mean(exp(neg));
    r_hat_i = (1 - alpha) * exp(pos_i) / (z_hat - alpha * exp(pos_i));
    mi_hat = mean(log r_hat).
    """
    pos, neg = _check_finite(pos, neg)
    if not 0.0 <= alpha < 0.5:
        raise ValueError(f"alpha must lie in [0, 1/2), got {alpha}")
    exp_pos = np.exp(pos)
    z_hat = alpha * exp_pos.mean() + (1.0 - alpha) * np.exp(neg).mean()
    denom = z_hat - alpha * exp_pos
    bad = np.nonzero(denom <= 0.0)[0]
    if bad.size:
        raise SkewInversionError(bad)
    log_r_hat = np.log1p(-alpha) + pos - np.log(denom)
    return RatioEstimate(
        z_hat=float(z_hat),
        r_hat_pos=np.exp(log_r_hat),
        mi_hat=float(log_r_hat.mean()),
    )


def estimate_mi(table: ScoreTable, alpha: float) -> RatioEstimate:
    """MI estimate from a square score table (diagonal = positives)."""
    return estimate_mi_from_pairs(table.pos, table.neg, alpha)
