"""Quick closed-form checks behind `divlab selftest`.

Each check asserts a hand-verifiable identity in well under a second; the
heavier statistical validation lives in the pytest suite.
"""

from __future__ import annotations

import math

import numpy as np

from .distributions import (
    GaussianPairSpec,
    analytic_mi,
    log_density_ratio,
    rho_for_mi,
    sample_pair_batch,
)
from .mi_recovery import estimate_mi
from .numcore import AdamConfig, CriticNet, Mlp
from .objectives import (
    ObjectiveKind,
    ObjectiveSpec,
    ScoreTable,
    cpc_value,
    dv_value,
    extract_pos_neg,
    mlcpc_value,
    nwj_value,
    objective_output,
    renyi_dv_value,
    rmlcpc_value,
)
from .ssl_harness import EncoderPair, cosine_critic, ema_update
from .trainer import ConstantCritic, TrainConfig, eval_objective_trace
from .variance_lab import renyi_lower_bound


def _close(a, b, tol=1e-12):
    assert abs(a - b) <= tol, f"{a!r} != {b!r} (tol {tol})"


def check_zero_weight_critic():
    net = CriticNet(4, hidden=8, seed=0)
    net.weights[0][:] = 0.0
    net.weights[1][:] = 0.0
    net.biases[1][:] = 1.25
    scores, _ = net.scores(np.ones((3, 4)))
    assert np.allclose(scores, 1.25)


def check_identity_critic():
    net = CriticNet(1, hidden=1, seed=0)
    net.weights[0][:] = 1.0
    net.weights[1][:] = 1.0
    net.biases[0][:] = 0.0
    net.biases[1][:] = 0.0
    scores, _ = net.scores(np.array([[2.0]]))
    _close(scores[0], 2.0)


def check_zero_grad_backward():
    net = CriticNet(6, hidden=16, seed=1)
    scores, cache = net.scores(np.random.default_rng(0).normal(size=(5, 6)))
    grads = net.score_grads(cache, np.zeros(5))
    assert all(np.all(g == 0) for g in grads.weights + grads.biases)


def check_adam_zero_grad_identity():
    net = CriticNet(4, hidden=8, seed=2)
    before = [p.copy() for p in net.parameters()]
    _, cache = net.scores(np.ones((2, 4)))
    net.adam_step(net.score_grads(cache, np.zeros(2)), AdamConfig())
    assert net.adam_t == 1
    assert all(np.array_equal(a, b) for a, b in zip(before, net.parameters()))


def check_adam_first_step_magnitude():
    net = Mlp([1, 1], seed=0)
    net.weights[0][:] = 0.0
    from .numcore import MlpGrads

    g = MlpGrads(weights=[np.array([[0.37]])], biases=[np.zeros(1)])
    net.adam_step(g, AdamConfig(lr=1e-3))
    _close(net.weights[0][0, 0], -1e-3, tol=1e-6)


def check_analytic_mi_zero():
    _close(analytic_mi(GaussianPairSpec(5, 0.0)), 0.0)


def check_rho_mi_round_trip():
    for mi in (1.0, 2.0, 4.0, 8.0, 16.0):
        spec = GaussianPairSpec(20, rho_for_mi(20, mi))
        _close(analytic_mi(spec), mi, tol=1e-12)


def check_log_ratio_uncorrelated():
    spec = GaussianPairSpec(3, 0.0)
    _close(log_density_ratio(spec, np.ones(3), -np.ones(3)), 0.0)


def check_sampler_determinism():
    spec = GaussianPairSpec(4, 0.3)
    a = sample_pair_batch(spec, 8, 123)
    b = sample_pair_batch(spec, 8, 123)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)


def check_extract_pos_neg_3x3():
    pos, neg = extract_pos_neg(np.arange(9.0).reshape(3, 3))
    assert pos.tolist() == [0.0, 4.0, 8.0]
    assert neg.tolist() == [[1.0, 2.0], [3.0, 5.0], [6.0, 7.0]]


def check_extract_pos_neg_2x2():
    pos, neg = extract_pos_neg(np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert pos.tolist() == [1.0, 4.0] and neg.tolist() == [[2.0], [3.0]]


def check_constant_tables_zero():
    table = ScoreTable.from_scores(np.full((4, 4), 1.7))
    _close(dv_value(table), 0.0)
    _close(cpc_value(table, 0.25), 0.0)
    _close(mlcpc_value(table, 0.25), 0.0)
    _close(rmlcpc_value(table, 0.25, 2.0), 0.0)
    _close(renyi_dv_value(table, 3.0), 0.0)
    ones = ScoreTable.from_scores(np.ones((4, 4)))
    _close(nwj_value(ones, 0.3), 0.0)


def check_dv_example():
    table = ScoreTable(
        scores=np.array([[1.0, 0.0], [0.0, 1.0]]),
        pos=np.array([1.0, 1.0]),
        neg=np.array([[0.0], [0.0]]),
    )
    _close(dv_value(table), 1.0)
    _close(mlcpc_value(table, 0.0), dv_value(table))


def check_renyi_dv_is_rmlcpc_alpha0():
    rng = np.random.default_rng(7)
    table = ScoreTable.from_scores(rng.normal(size=(5, 5)))
    _close(renyi_dv_value(table, 2.5), rmlcpc_value(table, 0.0, 2.5))


def check_cpc_upper_bound():
    rng = np.random.default_rng(8)
    table = ScoreTable.from_scores(rng.normal(size=(6, 6)))
    for alpha in (1e-3, 0.1, 0.4):
        assert cpc_value(table, alpha) <= math.log(1.0 / alpha) + 1e-12


def check_uniform_loss_grads():
    b = 4
    table = ScoreTable.from_scores(np.full((b, b), 0.3))
    out = objective_output(table, ObjectiveSpec(ObjectiveKind.MLCPC, alpha=0.0))
    assert np.allclose(out.grad_pos, -1.0 / b)
    assert np.allclose(out.grad_neg, 1.0 / (b * (b - 1)))


def check_mi_recovery_uninformative():
    table = ScoreTable.from_scores(np.zeros((6, 6)))
    est = estimate_mi(table, alpha=0.125)
    _close(est.z_hat, 1.0)
    _close(est.mi_hat, 0.0)
    assert np.allclose(est.r_hat_pos, 1.0)


def check_mi_recovery_alpha0_is_dv():
    rng = np.random.default_rng(9)
    table = ScoreTable.from_scores(rng.normal(size=(6, 6)))
    _close(estimate_mi(table, 0.0).mi_hat, dv_value(table), tol=1e-10)


def check_constant_critic_trace():
    config = TrainConfig(objective=ObjectiveSpec(ObjectiveKind.MLCPC, alpha=0.01), dim=3, batch_size=8)
    values = eval_objective_trace(config, ConstantCritic(0.0), num_batches=3)
    assert np.allclose(values, 0.0)


def check_trace_determinism():
    config = TrainConfig(objective=ObjectiveSpec(ObjectiveKind.DV), dim=3, batch_size=8, seed=5)
    critic = ConstantCritic(0.7)
    a = eval_objective_trace(config, critic, num_batches=4)
    b = eval_objective_trace(config, critic, num_batches=4)
    assert np.array_equal(a, b)


def check_variance_bound_vacuous_at_zero():
    _close(renyi_lower_bound(2.0, 0.0, 0.0), 0.0)


def check_cosine_critic_orthonormal():
    z = np.eye(3)
    table = cosine_critic(z, z, tau=0.5)
    assert np.allclose(np.diag(table), 2.0)
    assert np.allclose(table - np.diag(np.diag(table)), 0.0)


def check_cosine_scale_invariance():
    rng = np.random.default_rng(11)
    zq = rng.normal(size=(4, 6))
    zk = rng.normal(size=(4, 6))
    base = cosine_critic(zq, zk, tau=0.7)
    zq2 = zq.copy()
    zq2[2] *= 10.0
    assert np.allclose(cosine_critic(zq2, zk, tau=0.7), base)


def check_ema_identities():
    for momentum, expect_q in ((1.0, False), (0.0, True)):
        pair = EncoderPair.create([3, 4, 2], momentum=momentum, seed=3)
        reference = [p.copy() for p in pair.g_k.parameters()]
        pair.g_q.weights[0] += 1.0
        ema_update(pair)
        target = pair.g_q.parameters() if expect_q else reference
        assert all(
            np.allclose(a, b) for a, b in zip(pair.g_k.parameters(), target)
        )
    pair = EncoderPair.create([2, 2], momentum=0.99, seed=4)
    pair.g_k.weights[0][:] = 1.0
    pair.g_q.weights[0][:] = 2.0
    ema_update(pair)
    assert np.allclose(pair.g_k.weights[0], 0.99 * 1.0 + 0.01 * 2.0)


CHECKS = [
    ("numcore: zero-weight critic scores b2", check_zero_weight_critic),
    ("numcore: 1x1 identity net relu(2)=2", check_identity_critic),
    ("numcore: zero score-grad -> zero grads", check_zero_grad_backward),
    ("numcore: adam zero-grad identity", check_adam_zero_grad_identity),
    ("numcore: adam first-step magnitude", check_adam_first_step_magnitude),
    ("distributions: analytic_mi(rho=0)=0", check_analytic_mi_zero),
    ("distributions: rho_for_mi round trip", check_rho_mi_round_trip),
    ("distributions: log ratio at rho=0", check_log_ratio_uncorrelated),
    ("distributions: seeded sampler determinism", check_sampler_determinism),
    ("objectives: extract_pos_neg 3x3", check_extract_pos_neg_3x3),
    ("objectives: extract_pos_neg 2x2", check_extract_pos_neg_2x2),
    ("objectives: constant tables give 0", check_constant_tables_zero),
    ("objectives: dv on pos=1, neg=0", check_dv_example),
    ("objectives: renyi-dv = rmlcpc(alpha=0)", check_renyi_dv_is_rmlcpc_alpha0),
    ("objectives: cpc <= log(1/alpha)", check_cpc_upper_bound),
    ("objectives: uniform-table loss grads", check_uniform_loss_grads),
    ("mi_recovery: zero scores -> MI 0", check_mi_recovery_uninformative),
    ("mi_recovery: alpha=0 equals DV", check_mi_recovery_alpha0_is_dv),
    ("trainer: constant critic trace is 0", check_constant_critic_trace),
    ("trainer: trace determinism", check_trace_determinism),
    ("variance_lab: bound vacuous at KL=0", check_variance_bound_vacuous_at_zero),
    ("ssl: cosine critic orthonormal rows", check_cosine_critic_orthonormal),
    ("ssl: cosine scale invariance", check_cosine_scale_invariance),
    ("ssl: EMA identities", check_ema_identities),
]
