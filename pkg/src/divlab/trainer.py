"""Critic training on the correlated-Gaussian MI staircase.

Each step samples a fresh pair batch at the current level's correlation,
scores every combination with the joint critic, minimizes the negated
objective with Adam, and logs both the objective value and the recovered MI
estimate. The true MI doubles on a fixed schedule while the critic is warm
started across levels, so a single run traces the whole staircase.

A non-finite loss or gradient aborts the current level but is recorded as
data: with alpha = 0 and a high-order objective that blow-up is the
phenomenon under study, not a bug.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .distributions import (
    GaussianPairSpec,
    StaircaseSchedule,
    batch_rng,
    pairwise_log_density_ratio,
    rho_for_mi,
    sample_pair_batch,
    skew_log_ratio,
)
from .mi_recovery import SkewInversionError, estimate_mi_from_pairs
from .numcore import AdamConfig, CriticNet, NonFiniteError
from .objectives import (
    ObjectiveSpec,
    ScoreTable,
    objective_output,
    scatter_pos_neg,
)

#: Stream tag separating evaluation batches from training batches.
EVAL_STREAM = 0x45564C


@dataclass(frozen=True)
class TrainConfig:
    objective: ObjectiveSpec
    dim: int = 20
    batch_size: int = 128
    hidden: int = 256
    adam: AdamConfig = field(default_factory=AdamConfig)
    schedule: StaircaseSchedule = field(default_factory=StaircaseSchedule)
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1 or self.batch_size < 2 or self.hidden < 1:
            raise ValueError("dim, hidden must be >= 1 and batch_size >= 2")


@dataclass(frozen=True)
class RunRecord:
    step: int
    level_true_mi: float
    objective_value: float
    mi_hat: float
    wallclock_ms: float


@dataclass(frozen=True)
class AbortEvent:
    step: int
    level_true_mi: float
    reason: str


@dataclass
class TrainResult:
    config: TrainConfig
    records: list[RunRecord]
    aborts: list[AbortEvent]
    critic: CriticNet

    def level_records(self, level: int) -> list[RunRecord]:
        mi = self.config.schedule.mi_at_level(level)
        return [r for r in self.records if r.level_true_mi == mi]


class OracleCritic:
    """Closed-form optimal critic for a given pair distribution and objective.

    Emits raw scores tau * log(r / (alpha*r + 1 - alpha)) so that after the
    objective's temperature division the critic is exactly optimal.
    """

    def __init__(self, gspec: GaussianPairSpec, spec: ObjectiveSpec):
        self.gspec = gspec
        self.alpha = spec.alpha
        self.tau = spec.tau

    def pair_scores(self, x, y):
        log_r = pairwise_log_density_ratio(self.gspec, x, y)
        return self.tau * skew_log_ratio(log_r, self.alpha), None


class ConstantCritic:
    """Critic that scores every pair with the same constant."""

    def __init__(self, value: float = 0.0):
        self.value = value

    def pair_scores(self, x, y):
        return np.full((x.shape[0], y.shape[0]), self.value), None


def _mi_hat(table: ScoreTable, spec: ObjectiveSpec) -> float:
    """MI recovery on the temperature-scaled table; NaN on inversion failure."""
    try:
        est = estimate_mi_from_pairs(table.pos / spec.tau, table.neg / spec.tau, spec.alpha)
    except SkewInversionError:
        return float("nan")
    return est.mi_hat


def train(config: TrainConfig) -> TrainResult:
    """Run the staircase; returns the per-step log, abort events, and critic."""
    spec = config.objective
    critic = CriticNet(2 * config.dim, config.hidden, seed=config.seed)
    schedule = config.schedule
    records: list[RunRecord] = []
    aborts: list[AbortEvent] = []
    for level in range(schedule.num_levels):
        true_mi = schedule.mi_at_level(level)
        gspec = GaussianPairSpec(config.dim, rho_for_mi(config.dim, true_mi))
        for step_in_level in range(schedule.steps_per_level):
            step = level * schedule.steps_per_level + step_in_level
            tic = time.perf_counter()
            rng = batch_rng(config.seed, level, step_in_level)
            batch = sample_pair_batch(gspec, config.batch_size, rng)
            try:
                raw, cache = critic.pair_scores(batch.x, batch.y)
                table = ScoreTable.from_scores(raw)
                out = objective_output(table, spec)
                if not np.isfinite(out.value):
                    raise NonFiniteError(f"objective value {out.value}")
                grads = critic.pair_backward(
                    cache, scatter_pos_neg(out.grad_pos, out.grad_neg)
                )
                critic.adam_step(grads, config.adam)
            except NonFiniteError as err:
                aborts.append(AbortEvent(step=step, level_true_mi=true_mi, reason=str(err)))
                break
            ms = (time.perf_counter() - tic) * 1e3
            records.append(
                RunRecord(
                    step=step,
                    level_true_mi=true_mi,
                    objective_value=out.value,
                    mi_hat=_mi_hat(table, spec),
                    wallclock_ms=ms,
                )
            )
    return TrainResult(config=config, records=records, aborts=aborts, critic=critic)


def eval_objective_trace(
    config: TrainConfig, critic, num_batches: int = 1000, level: int = 0
) -> np.ndarray:
    """Objective values over fresh batches with a frozen critic.

    ``critic`` is anything with pair_scores(x, y) -> (table, cache); no
    parameters are touched, and the trace is deterministic given the config
    seed (evaluation draws from a stream disjoint from training's).
    """
    spec = config.objective
    true_mi = config.schedule.mi_at_level(level)
    gspec = GaussianPairSpec(config.dim, rho_for_mi(config.dim, true_mi))
    values = np.empty(num_batches)
    for i in range(num_batches):
        rng = batch_rng(config.seed, EVAL_STREAM, level, i)
        batch = sample_pair_batch(gspec, config.batch_size, rng)
        raw, _ = critic.pair_scores(batch.x, batch.y)
        table = ScoreTable.from_scores(raw)
        values[i] = objective_output(table, spec).value
    return values


def oracle_critic_for(config: TrainConfig, level: int = 0) -> OracleCritic:
    """The exact optimal critic for the config's objective at a given level."""
    true_mi = config.schedule.mi_at_level(level)
    gspec = GaussianPairSpec(config.dim, rho_for_mi(config.dim, true_mi))
    return OracleCritic(gspec, config.objective)
