"""Desk-scale contrastive representation learning on synthetic clusters.

The loop follows the momentum-contrast recipe: a base encoder scores queries,
an EMA copy scores keys and receives no gradient, the critic is
temperature-scaled cosine similarity, and the loss is symmetrized over the
two global views. Extra "local" views (stronger-noise augmentations) pass
through the base encoder only and are gathered into one positive/negative
list per direction before a single loss evaluation.

Each class is a symmetric pair of blobs at +c and -c. Class means therefore
coincide at the origin, so a linear probe on raw inputs or on an untrained
encoder sits near chance, while any representation that separates the blobs
makes the classes linearly separable. That gives the probe a real gap to
measure without needing image data. Augmentation (additive noise plus random
coordinate masking) never moves a sample across classes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .numcore import AdamConfig, Mlp, MlpGrads
from .numcore import ema_update as _ema_params
from .objectives import (
    ObjectiveSpec,
    extract_pos_neg,
    objective_output_from_pairs,
    scatter_pos_neg,
)


@dataclass(frozen=True)
class SyntheticClusterSpec:
    num_classes: int = 4
    input_dim: int = 20
    center_scale: float = 4.0
    noise: float = 0.6
    aug_noise: float = 0.5
    mask_prob: float = 0.1
    hard_multiplier: float = 4.0
    local_multiplier: float = 2.0
    center_seed: int = 0

    def centers(self) -> np.ndarray:
        """(num_classes, input_dim) seeded unit directions times center_scale."""
        rng = np.random.default_rng(np.random.SeedSequence([self.center_seed, 0xC1]))
        raw = rng.standard_normal((self.num_classes, self.input_dim))
        return self.center_scale * raw / np.linalg.norm(raw, axis=1, keepdims=True)


@dataclass(frozen=True)
class EncoderPair:
    g_q: Mlp
    g_k: Mlp
    momentum: float

    @classmethod
    def create(cls, sizes: list[int], momentum: float = 0.99, seed: int = 0):
        if not 0.0 <= momentum <= 1.0:
            raise ValueError(f"momentum must lie in [0, 1], got {momentum}")
        g_q = Mlp(sizes, seed=seed)
        return cls(g_q=g_q, g_k=g_q.copy(), momentum=momentum)


def ema_update(pair: EncoderPair) -> EncoderPair:
    """g_k <- momentum * g_k + (1 - momentum) * g_q, in place; returns pair."""
    _ema_params(pair.g_k, pair.g_q, pair.momentum)
    return pair


def make_dataset(
    spec: SyntheticClusterSpec, n_per_class: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Balanced samples; each draws a random sign for its class's blob pair."""
    centers = spec.centers()
    xs, labels = [], []
    for c in range(spec.num_classes):
        signs = np.where(rng.random(n_per_class) < 0.5, -1.0, 1.0)
        noise = spec.noise * rng.standard_normal((n_per_class, spec.input_dim))
        xs.append(signs[:, None] * centers[c] + noise)
        labels.append(np.full(n_per_class, c))
    perm = rng.permutation(spec.num_classes * n_per_class)
    return np.concatenate(xs)[perm], np.concatenate(labels)[perm]


def augment(
    spec: SyntheticClusterSpec,
    x: np.ndarray,
    rng: np.random.Generator,
    strength: float = 1.0,
) -> np.ndarray:
    """Additive noise plus random coordinate masking; label-preserving."""
    noisy = x + strength * spec.aug_noise * rng.standard_normal(x.shape)
    mask = rng.random(x.shape) >= spec.mask_prob
    return noisy * mask


def cosine_critic(zq: np.ndarray, zk: np.ndarray, tau: float) -> np.ndarray:
    """Temperature-scaled cosine scores: table[i, j] = cos(zq_i, zk_j) / tau."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    for name, z in (("zq", zq), ("zk", zk)):
        norms = np.linalg.norm(z, axis=1)
        if (norms == 0.0).any():
            row = int(np.nonzero(norms == 0.0)[0][0])
            raise ValueError(f"zero-norm row {row} in {name}; cosine undefined")
    q_hat = zq / np.linalg.norm(zq, axis=1, keepdims=True)
    k_hat = zk / np.linalg.norm(zk, axis=1, keepdims=True)
    return (q_hat @ k_hat.T) / tau


def cosine_critic_query_grad(
    zq: np.ndarray, zk: np.ndarray, tau: float, grad_table: np.ndarray
) -> np.ndarray:
    """d(loss)/d(zq) for loss with table gradient grad_table; keys constant."""
    q_norms = np.linalg.norm(zq, axis=1, keepdims=True)
    q_hat = zq / q_norms
    k_hat = zk / np.linalg.norm(zk, axis=1, keepdims=True)
    d_qhat = (grad_table @ k_hat) / tau
    radial = (d_qhat * q_hat).sum(axis=1, keepdims=True)
    return (d_qhat - radial * q_hat) / q_norms


def gather_pos_neg(
    queries: list[np.ndarray], keys: np.ndarray, tau: float
) -> tuple[np.ndarray, np.ndarray]:
    """Stack per-view (pos, neg) splits into one list per direction.

    With v extra views the positive vector has B*(v+1) entries and the
    negative matrix is B*(v+1) x (B-1), matching the gather-then-single-loss
    treatment of multi-view batches.
    """
    pos_parts, neg_parts = [], []
    for zq in queries:
        pos, neg = extract_pos_neg(cosine_critic(zq, keys, tau))
        pos_parts.append(pos)
        neg_parts.append(neg)
    return np.concatenate(pos_parts), np.vstack(neg_parts)


def linear_probe(
    feats_train: np.ndarray,
    labels_train: np.ndarray,
    feats_test: np.ndarray,
    labels_test: np.ndarray,
    num_classes: int,
) -> float:
    """Closed-form least-squares probe on frozen features; returns accuracy."""

    def with_bias(f):
        return np.hstack([f, np.ones((f.shape[0], 1))])

    onehot = np.eye(num_classes)[labels_train.astype(int)]
    w, *_ = np.linalg.lstsq(with_bias(feats_train), onehot, rcond=None)
    pred = np.argmax(with_bias(feats_test) @ w, axis=1)
    return float((pred == labels_test).mean())


@dataclass
class SslResult:
    pair: EncoderPair
    probe_accuracy: float
    loss_trace: list[float]
    objective: ObjectiveSpec
    spec: SyntheticClusterSpec


def _accumulate(total: MlpGrads | None, extra: MlpGrads) -> MlpGrads:
    if total is None:
        return extra
    return MlpGrads(
        weights=[a + b for a, b in zip(total.weights, extra.weights)],
        biases=[a + b for a, b in zip(total.biases, extra.biases)],
    )


def ssl_step(
    pair: EncoderPair,
    x: np.ndarray,
    objective: ObjectiveSpec,
    spec: SyntheticClusterSpec,
    rng: np.random.Generator,
    adam: AdamConfig,
    n_local_views: int = 0,
    hard: bool = False,
) -> float:
    """One symmetrized contrastive update; returns the minibatch loss."""
    strength = spec.hard_multiplier if hard else 1.0
    x1 = augment(spec, x, rng, strength)
    x2 = augment(spec, x, rng, strength)
    k1, _ = pair.g_k.forward(x1)
    k2, _ = pair.g_k.forward(x2)

    views = [x1, x2] + [
        augment(spec, x, rng, strength * spec.local_multiplier)
        for _ in range(n_local_views)
    ]
    feats, caches = [], []
    for view in views:
        z, cache = pair.g_q.forward(view)
        feats.append(z)
        caches.append(cache)

    local_ids = list(range(2, 2 + n_local_views))
    # Scores already carry the temperature, so the loss runs with tau = 1.
    obj = replace(objective, tau=1.0)
    batch = x.shape[0]
    loss = 0.0
    dz = [np.zeros_like(z) for z in feats]
    for query_ids, keys in (([0] + local_ids, k2), ([1] + local_ids, k1)):
        pos, neg = gather_pos_neg([feats[i] for i in query_ids], keys, objective.tau)
        out = objective_output_from_pairs(pos, neg, obj)
        loss += -out.value
        for block, i in enumerate(query_ids):
            g_table = scatter_pos_neg(
                out.grad_pos[block * batch : (block + 1) * batch],
                out.grad_neg[block * batch : (block + 1) * batch],
            )
            dz[i] += cosine_critic_query_grad(feats[i], keys, objective.tau, g_table)

    grads = None
    for cache, dzi in zip(caches, dz):
        grads = _accumulate(grads, pair.g_q.backward(cache, dzi))
    pair.g_q.adam_step(grads, adam)
    ema_update(pair)
    return loss


def ssl_train(
    spec: SyntheticClusterSpec,
    objective: ObjectiveSpec,
    epochs: int,
    seed: int,
    n_per_class: int = 128,
    batch_size: int = 64,
    encoder_sizes: list[int] | None = None,
    adam: AdamConfig | None = None,
    momentum: float = 0.99,
    n_local_views: int = 0,
    hard: bool = False,
) -> SslResult:
    """Train the encoder pair and report held-out linear-probe accuracy."""
    if batch_size < 2:
        raise ValueError("batch_size must be >= 2")
    adam = adam or AdamConfig()
    sizes = encoder_sizes or [spec.input_dim, 128, 128, 32]
    if sizes[0] != spec.input_dim:
        raise ValueError("encoder input size must match the data dimension")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x551]))
    x_train, y_train = make_dataset(spec, n_per_class, rng)
    x_test, y_test = make_dataset(spec, n_per_class, rng)
    if np.ptp(x_train, axis=0).max() == 0.0:
        raise ValueError("degenerate dataset: all samples identical")

    pair = EncoderPair.create(sizes, momentum=momentum, seed=seed)
    n = x_train.shape[0]
    loss_trace = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n - batch_size + 1, batch_size):
            batch = x_train[order[start : start + batch_size]]
            epoch_losses.append(
                ssl_step(pair, batch, objective, spec, rng, adam, n_local_views, hard)
            )
        loss_trace.append(float(np.mean(epoch_losses)))

    feats_train, _ = pair.g_q.forward(x_train)
    feats_test, _ = pair.g_q.forward(x_test)
    accuracy = linear_probe(feats_train, y_train, feats_test, y_test, spec.num_classes)
    return SslResult(
        pair=pair,
        probe_accuracy=accuracy,
        loss_trace=loss_trace,
        objective=objective,
        spec=spec,
    )
