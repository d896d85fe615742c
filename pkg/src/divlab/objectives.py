"""Variational divergence estimators over a batch score table.

Each objective reads a table of critic scores where the diagonal holds
positive pairs and the off-diagonal entries hold in-batch negatives. Values
are reported with the bound convention (larger = tighter lower bound) and
trainers minimize the negation; gradient helpers return gradients of that
minimized loss.

Every log-of-mean-of-exponentials is computed max-shifted, so the estimators
themselves cannot overflow no matter how large gamma * score gets. The lone
exception is the NWJ family, whose second term is a plain mean of
exponentials; there an overflow propagates as +/-inf by design so that
variance studies can record the blow-up instead of masking it.

Objectives also accept explicit (pos, neg) arrays, which covers the
multi-view case where the positive list is longer than the batch and the
negative count per anchor is not B-1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .numcore import NonFiniteError


class ObjectiveKind(str, Enum):
    DV = "dv"
    MINE = "mine"
    CPC = "cpc"
    MLCPC = "mlcpc"
    RMLCPC = "rmlcpc"
    NWJ = "nwj"
    SKEW_NWJ = "skew-nwj"


#: Kinds whose value depends on the skew parameter alpha.
SKEW_KINDS = frozenset(
    {ObjectiveKind.CPC, ObjectiveKind.MLCPC, ObjectiveKind.RMLCPC, ObjectiveKind.SKEW_NWJ}
)


@dataclass(frozen=True)
class ObjectiveSpec:
    kind: ObjectiveKind
    alpha: float = 0.0
    gamma: float = 2.0
    tau: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ObjectiveKind(self.kind))
        if not 0.0 <= self.alpha < 0.5:
            raise ValueError(f"alpha must lie in [0, 1/2), got {self.alpha}")
        if self.tau <= 0.0:
            raise ValueError(f"temperature must be positive, got {self.tau}")
        if self.kind is ObjectiveKind.RMLCPC:
            if self.gamma <= 0.0:
                raise ValueError(f"gamma must be positive, got {self.gamma}")
            if self.gamma == 1.0:
                raise ValueError("gamma = 1 is the KL limit; use kind=MLCPC instead")


@dataclass(frozen=True)
class ScoreTable:
    """B x B critic scores; scores[i, j] = f(x_i, y_j)."""

    scores: np.ndarray
    pos: np.ndarray
    neg: np.ndarray

    @classmethod
    def from_scores(cls, scores: np.ndarray) -> "ScoreTable":
        pos, neg = extract_pos_neg(scores)
        return cls(scores=np.asarray(scores, dtype=np.float64), pos=pos, neg=neg)

    @property
    def batch_size(self) -> int:
        return self.pos.shape[0]

    @property
    def num_negatives(self) -> int:
        return self.neg.shape[1]


@dataclass(frozen=True)
class ObjectiveOutput:
    """Objective value plus gradients of the minimized loss (-value)."""

    value: float
    grad_pos: np.ndarray
    grad_neg: np.ndarray


def extract_pos_neg(scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split a square score table into (diagonal, off-diagonal-per-row).

    Row i of the negative matrix contains scores[i, j] for j != i in
    ascending j order; implemented with the flatten/reshape trick so the
    layout matches the reference contrastive pipelines exactly.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] != scores.shape[1]:
        raise ValueError(f"score table must be square, got shape {scores.shape}")
    b = scores.shape[0]
    if b < 2:
        raise ValueError("need batch size >= 2 for at least one negative pair")
    pos = np.diagonal(scores).copy()
    neg = scores.ravel()[1:].reshape(b - 1, b + 1)[:, :-1].reshape(b, b - 1).copy()
    return pos, neg


def _check_finite(pos: np.ndarray, neg: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    if pos.ndim != 1 or neg.ndim != 2 or neg.shape[0] != pos.shape[0]:
        raise ValueError(
            f"expected pos (N,) and neg (N, K); got {pos.shape} and {neg.shape}"
        )
    if not (np.isfinite(pos).all() and np.isfinite(neg).all()):
        raise NonFiniteError("non-finite critic score in objective input")
    return pos, neg


def _log_mix_normalizer(pos: np.ndarray, neg: np.ndarray, alpha: float, scale: float = 1.0):
    """log( alpha*mean_i e^{s*pos_i} + (1-alpha)*mean_ij e^{s*neg_ij} ), max-shifted.

    Returns (log value, positive mixture weights, negative mixture weights);
    the weights are the self-normalized importance weights of each term and
    sum to one.
    """
    n, k = neg.shape
    sp = scale * pos
    sn = scale * neg
    if alpha > 0.0:
        shift = max(sp.max(), sn.max())
    else:
        shift = sn.max()
    ep = np.exp(sp - shift)
    en = np.exp(sn - shift)
    pos_part = (alpha / n) * ep.sum()
    neg_part = (1.0 - alpha) / (n * k) * en.sum()
    total = pos_part + neg_part
    log_norm = shift + math.log(total)
    w_pos = (alpha / n) * ep / total
    w_neg = ((1.0 - alpha) / (n * k)) * en / total
    return log_norm, w_pos, w_neg


def dv_value_from_pairs(pos: np.ndarray, neg: np.ndarray) -> float:
    pos, neg = _check_finite(pos, neg)
    log_norm, _, _ = _log_mix_normalizer(pos, neg, alpha=0.0)
    return float(pos.mean() - log_norm)


def cpc_value_from_pairs(pos: np.ndarray, neg: np.ndarray, alpha: float) -> float:
    pos, neg = _check_finite(pos, neg)
    n, k = neg.shape
    if alpha > 0.0:
        shift = np.maximum(pos, neg.max(axis=1))
        denom = alpha * np.exp(pos - shift) + ((1.0 - alpha) / k) * np.exp(
            neg - shift[:, None]
        ).sum(axis=1)
    else:
        shift = neg.max(axis=1)
        denom = (1.0 / k) * np.exp(neg - shift[:, None]).sum(axis=1)
    log_denom = shift + np.log(denom)
    return float((pos - log_denom).mean())


def mlcpc_value_from_pairs(pos: np.ndarray, neg: np.ndarray, alpha: float) -> float:
    pos, neg = _check_finite(pos, neg)
    log_norm, _, _ = _log_mix_normalizer(pos, neg, alpha)
    return float(pos.mean() - log_norm)


def rmlcpc_value_from_pairs(
    pos: np.ndarray, neg: np.ndarray, alpha: float, gamma: float
) -> float:
    pos, neg = _check_finite(pos, neg)
    if gamma <= 0.0 or gamma == 1.0:
        raise ValueError("rmlcpc needs gamma > 0 and gamma != 1 (gamma=1 is mlcpc)")
    n = pos.shape[0]
    a = (gamma - 1.0) * pos
    shift = a.max()
    first = (shift + math.log(np.exp(a - shift).sum()) - math.log(n)) / (gamma - 1.0)
    log_norm, _, _ = _log_mix_normalizer(pos, neg, alpha, scale=gamma)
    return float(first - log_norm / gamma)


def renyi_dv_value_from_pairs(pos: np.ndarray, neg: np.ndarray, gamma: float) -> float:
    return rmlcpc_value_from_pairs(pos, neg, alpha=0.0, gamma=gamma)


def nwj_value_from_pairs(pos: np.ndarray, neg: np.ndarray, alpha: float) -> float:
    pos, neg = _check_finite(pos, neg)
    with np.errstate(over="ignore"):
        pos_term = np.exp(pos - 1.0).mean()
        neg_term = np.exp(neg - 1.0).mean()
    return float(pos.mean() - alpha * pos_term - (1.0 - alpha) * neg_term)


def dv_value(table: ScoreTable) -> float:
    """Donsker-Varadhan bound: mean(pos) - log mean(exp(neg))."""
    return dv_value_from_pairs(table.pos, table.neg)


def mine_value(table: ScoreTable) -> float:
    """MINE uses the DV form on in-batch negatives; identical value."""
    return dv_value(table)


def cpc_value(table: ScoreTable, alpha: float) -> float:
    """alpha-skew contrastive predictive coding (per-anchor softmax form)."""
    return cpc_value_from_pairs(table.pos, table.neg, alpha)


def mlcpc_value(table: ScoreTable, alpha: float) -> float:
    """alpha-skew multi-label CPC (one shared normalizer for the whole batch)."""
    return mlcpc_value_from_pairs(table.pos, table.neg, alpha)


def rmlcpc_value(table: ScoreTable, alpha: float, gamma: float) -> float:
    """Skew Renyi bound of order gamma; gamma -> 1 recovers mlcpc_value."""
    return rmlcpc_value_from_pairs(table.pos, table.neg, alpha, gamma)


def renyi_dv_value(table: ScoreTable, gamma: float) -> float:
    """Non-skew Renyi variational bound (rmlcpc with alpha = 0)."""
    return rmlcpc_value_from_pairs(table.pos, table.neg, alpha=0.0, gamma=gamma)


def nwj_value(table: ScoreTable, alpha: float = 0.0) -> float:
    """alpha-skew NWJ bound; alpha = 0 is the classic NWJ objective."""
    return nwj_value_from_pairs(table.pos, table.neg, alpha)


def _value_and_grads(pos, neg, spec: ObjectiveSpec):
    """Value and gradients of the *value* w.r.t. the scaled scores."""
    kind, alpha, gamma = spec.kind, spec.alpha, spec.gamma
    n, k = neg.shape
    if kind in (ObjectiveKind.DV, ObjectiveKind.MINE):
        log_norm, _, w_neg = _log_mix_normalizer(pos, neg, alpha=0.0)
        value = float(pos.mean() - log_norm)
        g_pos = np.full(n, 1.0 / n)
        g_neg = -w_neg
    elif kind is ObjectiveKind.MLCPC:
        log_norm, w_pos, w_neg = _log_mix_normalizer(pos, neg, alpha)
        value = float(pos.mean() - log_norm)
        g_pos = 1.0 / n - w_pos
        g_neg = -w_neg
    elif kind is ObjectiveKind.RMLCPC:
        a = (gamma - 1.0) * pos
        shift = a.max()
        ea = np.exp(a - shift)
        first = (shift + math.log(ea.sum()) - math.log(n)) / (gamma - 1.0)
        w_first = ea / ea.sum()
        log_norm, w_pos, w_neg = _log_mix_normalizer(pos, neg, alpha, scale=gamma)
        value = float(first - log_norm / gamma)
        g_pos = w_first - w_pos
        g_neg = -w_neg
    elif kind is ObjectiveKind.CPC:
        if alpha > 0.0:
            shift = np.maximum(pos, neg.max(axis=1))
            ep = alpha * np.exp(pos - shift)
        else:
            shift = neg.max(axis=1)
            ep = np.zeros(n)
        en = ((1.0 - alpha) / k) * np.exp(neg - shift[:, None])
        denom = ep + en.sum(axis=1)
        value = float((pos - shift - np.log(denom)).mean())
        g_pos = (1.0 - ep / denom) / n
        g_neg = -en / denom[:, None] / n
    elif kind in (ObjectiveKind.NWJ, ObjectiveKind.SKEW_NWJ):
        a = alpha if kind is ObjectiveKind.SKEW_NWJ else 0.0
        with np.errstate(over="ignore"):
            ep = np.exp(pos - 1.0)
            en = np.exp(neg - 1.0)
        value = float(pos.mean() - a * ep.mean() - (1.0 - a) * en.mean())
        g_pos = (1.0 - a * ep) / n
        g_neg = -(1.0 - a) * en / (n * k)
    else:  # pragma: no cover
        raise ValueError(f"unknown objective kind {kind}")
    return value, g_pos, g_neg


def objective_value_from_pairs(pos, neg, spec: ObjectiveSpec) -> float:
    pos, neg = _check_finite(pos, neg)
    value, _, _ = _value_and_grads(pos / spec.tau, neg / spec.tau, spec)
    return value


def objective_value(table: ScoreTable, spec: ObjectiveSpec) -> float:
    """Evaluate spec.kind on the table, with scores pre-divided by spec.tau."""
    return objective_value_from_pairs(table.pos, table.neg, spec)


def objective_output_from_pairs(pos, neg, spec: ObjectiveSpec) -> ObjectiveOutput:
    """Value plus gradients of the minimized loss w.r.t. the raw scores.

    The temperature chain rule is included, so the gradients can be fed
    straight back through whatever produced the raw scores.
    """
    pos, neg = _check_finite(pos, neg)
    value, g_pos, g_neg = _value_and_grads(pos / spec.tau, neg / spec.tau, spec)
    return ObjectiveOutput(
        value=value, grad_pos=-g_pos / spec.tau, grad_neg=-g_neg / spec.tau
    )


def objective_output(table: ScoreTable, spec: ObjectiveSpec) -> ObjectiveOutput:
    return objective_output_from_pairs(table.pos, table.neg, spec)


def surrogate_grads(table: ScoreTable, spec: ObjectiveSpec) -> ObjectiveOutput:
    """Importance-weighted gradient form for the multi-label objectives.

    The loss gradients use self-normalized weights (exp((gamma-1)*pos) on the
    first term, alpha*exp(gamma*pos) and (1-alpha)*exp(gamma*neg) on the
    shared second term) treated as constants; these equal the exact gradients
    of -value for MLCPC and RMLCPC. Other kinds are differentiated directly
    and are rejected here.
    """
    if spec.kind not in (ObjectiveKind.MLCPC, ObjectiveKind.RMLCPC):
        raise ValueError(
            f"importance-weighted surrogate exists for MLCPC/RMLCPC only, got {spec.kind}"
        )
    return objective_output(table, spec)


def scatter_pos_neg(pos: np.ndarray, neg: np.ndarray) -> np.ndarray:
    """Inverse of extract_pos_neg: rebuild the square B x B table."""
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    b = pos.shape[0]
    if neg.shape != (b, b - 1):
        raise ValueError(f"expected neg of shape {(b, b - 1)}, got {neg.shape}")
    flat = np.empty(b * b, dtype=np.float64)
    flat[:: b + 1] = pos
    flat[1:].reshape(b - 1, b + 1)[:, :-1] = neg.reshape(b - 1, b)
    return flat.reshape(b, b)
