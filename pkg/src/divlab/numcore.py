"""Small dense MLPs with hand-written backprop and an Adam optimizer.

Everything is float64 on purpose: downstream estimators take exponentials of
scores and measure tail statistics, so single precision would contaminate the
variance measurements. The network shapes used in this repo are fixed and
shallow, which keeps a manual backward pass simpler (and easier to unit-test
against finite differences) than a general autodiff graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Input dimensions do not match the network."""


class NonFiniteError(ValueError):
    """A NaN or Inf appeared where a finite value is required."""


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {b}")


@dataclass
class MlpGrads:
    """Parameter gradients, same shapes as the owning network's parameters."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def all_finite(self) -> bool:
        return all(np.isfinite(g).all() for g in self.weights + self.biases)


class Mlp:
    """Fully connected ReLU network with a linear output layer.

    Parameters are initialized Glorot-uniform (weights) and zero (biases)
    from a seeded generator, which keeps initial outputs O(1) so that
    exp(gamma * score) cannot overflow at step 0. relu'(0) is taken as 0.
    """

    def __init__(self, sizes: list[int], seed: int = 0):
        if len(sizes) < 2:
            raise ValueError("need at least an input and an output size")
        rng = np.random.default_rng(seed)
        self.sizes = list(sizes)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))
        self._init_adam_state()

    def _init_adam_state(self):
        self.adam_m = [np.zeros_like(w) for w in self.weights] + [
            np.zeros_like(b) for b in self.biases
        ]
        self.adam_v = [np.zeros_like(g) for g in self.adam_m]
        self.adam_t = 0

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def parameters(self) -> list[np.ndarray]:
        return self.weights + self.biases

    def copy(self) -> "Mlp":
        other = object.__new__(type(self))
        other.sizes = list(self.sizes)
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        other.adam_m = [m.copy() for m in self.adam_m]
        other.adam_v = [v.copy() for v in self.adam_v]
        other.adam_t = self.adam_t
        return other

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, dict]:
        """Run the net on a batch ``x`` of shape (B, in_dim).

        Returns (outputs of shape (B, out_dim), cache for backward).
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(
                f"expected input of shape (B, {self.in_dim}), got {x.shape}"
            )
        activations = [x]
        pre_acts = []
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            pre_acts.append(z)
            h = z if i == last else np.maximum(z, 0.0)
            activations.append(h)
        if not np.isfinite(h).all():
            bad = int(np.argwhere(~np.isfinite(h).all(axis=1))[0, 0])
            raise NonFiniteError(f"non-finite network output at batch row {bad}")
        cache = {"activations": activations, "pre_acts": pre_acts, "batch": x.shape[0]}
        return h, cache

    def backward(self, cache: dict, grad_out: np.ndarray) -> MlpGrads:
        """Backpropagate ``grad_out`` (B, out_dim) through the cached forward."""
        grad_out = np.asarray(grad_out, dtype=np.float64)
        if grad_out.ndim == 1:
            grad_out = grad_out[:, None]
        if grad_out.shape != (cache["batch"], self.out_dim):
            raise ShapeError(
                f"grad_out shape {grad_out.shape} does not match cached "
                f"forward of batch {cache['batch']} and out_dim {self.out_dim}"
            )
        acts = cache["activations"]
        pre = cache["pre_acts"]
        gw = [np.empty(0)] * len(self.weights)
        gb = [np.empty(0)] * len(self.biases)
        delta = grad_out
        for i in range(len(self.weights) - 1, -1, -1):
            gw[i] = acts[i].T @ delta
            gb[i] = delta.sum(axis=0)
            if i > 0:
                delta = delta @ self.weights[i].T
                delta = np.where(pre[i - 1] > 0.0, delta, 0.0)
        return MlpGrads(weights=gw, biases=gb)

    def input_gradient(self, cache: dict, grad_out: np.ndarray) -> np.ndarray:
        """Gradient of the cached forward w.r.t. its input batch."""
        grad_out = np.asarray(grad_out, dtype=np.float64)
        if grad_out.ndim == 1:
            grad_out = grad_out[:, None]
        pre = cache["pre_acts"]
        delta = grad_out
        for i in range(len(self.weights) - 1, -1, -1):
            delta = delta @ self.weights[i].T
            if i > 0:
                delta = np.where(pre[i - 1] > 0.0, delta, 0.0)
        return delta

    def adam_step(self, grads: MlpGrads, cfg: AdamConfig) -> None:
        """Apply one bias-corrected Adam update in place.

        Raises NonFiniteError (leaving parameters untouched) if any gradient
        entry is non-finite.
        """
        flat = grads.weights + grads.biases
        params = self.weights + self.biases
        if len(flat) != len(params) or any(
            g.shape != p.shape for g, p in zip(flat, params)
        ):
            raise ShapeError("gradient shapes do not match parameters")
        if not grads.all_finite():
            raise NonFiniteError("non-finite gradient; parameters left untouched")
        self.adam_t += 1
        t = self.adam_t
        b1, b2 = cfg.beta1, cfg.beta2
        corr1 = 1.0 - b1**t
        corr2 = 1.0 - b2**t
        for p, g, m, v in zip(params, flat, self.adam_m, self.adam_v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= cfg.lr * (m / corr1) / (np.sqrt(v / corr2) + cfg.eps)


class CriticNet(Mlp):
    """Joint pair critic: a 2-layer MLP mapping a concatenated pair to a scalar.

    For d-dimensional pairs the input dimension is 2*d; the hidden width
    defaults to 256 with a ReLU, and the output layer is linear.
    """

    def __init__(self, in_dim: int, hidden: int = 256, seed: int = 0):
        super().__init__([in_dim, hidden, 1], seed=seed)

    @property
    def w1(self) -> np.ndarray:
        return self.weights[0]

    @property
    def b1(self) -> np.ndarray:
        return self.biases[0]

    @property
    def w2(self) -> np.ndarray:
        return self.weights[1]

    @property
    def b2(self) -> float:
        return float(self.biases[1][0])

    def scores(self, pairs: np.ndarray) -> tuple[np.ndarray, dict]:
        """Score a batch of concatenated pairs; returns (vector of B scores, cache)."""
        out, cache = self.forward(pairs)
        return out[:, 0], cache

    def pair_scores(self, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, dict]:
        """Score every (x[i], y[j]) combination without materializing B^2 pairs.

        Splitting w1 into its x-rows and y-rows turns the first layer into
        two small GEMMs plus a broadcast add, which is what makes full-table
        training batches affordable. Output [i, j] equals
        scores(concat(x[i], y[j])) exactly.
        """
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.ndim != 2 or y.ndim != 2 or x.shape[1] + y.shape[1] != self.in_dim:
            raise ShapeError(
                f"pair parts must combine to in_dim={self.in_dim}, got "
                f"{x.shape} and {y.shape}"
            )
        d = x.shape[1]
        u = x @ self.weights[0][:d]
        v = y @ self.weights[0][d:]
        hidden = np.maximum(u[:, None, :] + v[None, :, :] + self.biases[0], 0.0)
        table = hidden @ self.weights[1][:, 0] + self.biases[1][0]
        if not np.isfinite(table).all():
            bad = np.argwhere(~np.isfinite(table))[0]
            raise NonFiniteError(f"non-finite pair score at table cell {tuple(bad)}")
        cache = {"x": x, "y": y, "hidden": hidden}
        return table, cache

    def pair_backward(self, cache: dict, grad_table: np.ndarray) -> MlpGrads:
        """Parameter gradients for a pair_scores call; grad_table is B x B."""
        x, y, hidden = cache["x"], cache["y"], cache["hidden"]
        b = x.shape[0]
        grad_table = np.asarray(grad_table, dtype=np.float64)
        if grad_table.shape != (b, y.shape[0]):
            raise ShapeError(
                f"grad_table shape {grad_table.shape} does not match cached table"
            )
        d = x.shape[1]
        flat_h = hidden.reshape(-1, hidden.shape[-1])
        gw2 = (flat_h.T @ grad_table.ravel())[:, None]
        gb2 = np.array([grad_table.sum()])
        d_hidden = grad_table[:, :, None] * self.weights[1][:, 0]
        d_hidden = np.where(hidden > 0.0, d_hidden, 0.0)
        gb1 = d_hidden.sum(axis=(0, 1))
        du = d_hidden.sum(axis=1)
        dv = d_hidden.sum(axis=0)
        gw1 = np.empty_like(self.weights[0])
        gw1[:d] = x.T @ du
        gw1[d:] = y.T @ dv
        return MlpGrads(weights=[gw1, gw2], biases=[gb1, gb2])

    def score_grads(self, cache: dict, grad_scores: np.ndarray) -> MlpGrads:
        """Backward pass taking a per-score gradient vector of length B."""
        grad_scores = np.asarray(grad_scores, dtype=np.float64)
        if grad_scores.ndim != 1:
            raise ShapeError("grad_scores must be a vector, one entry per score")
        return self.backward(cache, grad_scores[:, None])


def ema_update(target: Mlp, source: Mlp, momentum: float) -> None:
    """Elementwise EMA: target <- momentum * target + (1 - momentum) * source."""
    if target.sizes != source.sizes:
        raise ShapeError("EMA networks must share an architecture")
    for pt, ps in zip(target.parameters(), source.parameters()):
        pt *= momentum
        pt += (1.0 - momentum) * ps
