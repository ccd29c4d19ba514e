"""LSTM policy that emits one token per decision slot, trained by REINFORCE.

Step ``k`` feeds the embedding of token ``k - 1`` (a learned start vector
at step 0) through a single LSTM cell and reads a softmax over the
``cardinalities[k]`` choices from head ``k``.  Heads start at zero, so the
initial policy is exactly uniform.

The update ascends ``(reward - baseline) * sum_k log p(token_k)`` with Adam;
the baseline is an exponential moving average of rewards seeded with the
first reward.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..errors import NonFiniteError
from ..tensor import DTYPE, Tensor, concat, getitem, linear, log_softmax, mul, no_grad, sigmoid, take, tanh, tsum

log = logging.getLogger(__name__)


@dataclass
class Sample:
    tokens: tuple[int, ...]
    log_probs: tuple[float, ...]

    @property
    def log_prob(self) -> float:
        return float(sum(self.log_probs))


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        self.t += 1
        out = {}
        for name, p in params.items():
            g = grads[name].astype(np.float64)
            m = self.m.get(name, 0.0) * self.beta1 + (1 - self.beta1) * g
            v = self.v.get(name, 0.0) * self.beta2 + (1 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            m_hat = m / (1 - self.beta1**self.t)
            v_hat = v / (1 - self.beta2**self.t)
            out[name] = (p - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(DTYPE)
        return out


class Controller:
    def __init__(self, cardinalities, hidden: int = 64, embedding: int = 32, lr: float = 5e-3,
                 baseline_decay: float = 0.95, seed: int = 0, init_scale: float = 0.1):
        self.cardinalities = [int(c) for c in cardinalities]
        if not self.cardinalities or min(self.cardinalities) < 1:
            raise ValueError("controller needs at least one slot with at least one choice")
        self.hidden, self.embedding = hidden, embedding
        self.baseline_decay = baseline_decay
        self.baseline: float | None = None
        self.episodes = 0
        self.skipped_updates = 0
        self.optimizer = Adam(lr)
        rng = np.random.default_rng(seed)
        u = lambda *shape: rng.uniform(-init_scale, init_scale, shape).astype(DTYPE)
        p = {"start": u(1, embedding),
             "lstm.weight": u(4 * hidden, embedding + hidden),
             "lstm.bias": np.zeros(4 * hidden, DTYPE)}
        for k, n in enumerate(self.cardinalities):
            p[f"embed{k}"] = u(n, embedding)
            p[f"head{k}.weight"] = np.zeros((n, hidden), DTYPE)
            p[f"head{k}.bias"] = np.zeros(n, DTYPE)
        self.params = p

    def _cell(self, x: Tensor, h: Tensor, c: Tensor, p) -> tuple[Tensor, Tensor]:
        z = linear(concat([x, h], axis=-1), p["lstm.weight"], p["lstm.bias"])
        H = self.hidden
        gate = lambda i: getitem(z, (slice(None), slice(i * H, (i + 1) * H)))
        i, f, g, o = sigmoid(gate(0)), sigmoid(gate(1)), tanh(gate(2)), sigmoid(gate(3))
        c = mul(f, c) + mul(i, g)
        return mul(o, tanh(c)), c

    def _unroll(self, p, tokens=None, rng=None):
        """Yield per-slot log-softmax tensors, sampling when ``tokens`` is None."""
        h = Tensor(np.zeros((1, self.hidden), DTYPE))
        c = Tensor(np.zeros((1, self.hidden), DTYPE))
        x = p["start"]
        chosen = []
        for k, n in enumerate(self.cardinalities):
            h, c = self._cell(x, h, c, p)
            logp = log_softmax(linear(h, p[f"head{k}.weight"], p[f"head{k}.bias"]))
            if tokens is None:
                probs = np.exp(logp.data[0].astype(np.float64))
                t = int(rng.choice(n, p=probs / probs.sum()))
            else:
                t = int(tokens[k])
            chosen.append((t, logp))
            x = take(p[f"embed{k}"], np.array([t]))
        return chosen

    def sample(self, rng: np.random.Generator) -> Sample:
        with no_grad():
            p = {k: Tensor(v) for k, v in self.params.items()}
            steps = self._unroll(p, rng=rng)
        return Sample(tuple(t for t, _ in steps), tuple(float(lp.data[0, t]) for t, lp in steps))

    def log_prob(self, tokens) -> float:
        with no_grad():
            p = {k: Tensor(v) for k, v in self.params.items()}
            return float(sum(float(lp.data[0, t]) for t, lp in self._unroll(p, tokens=tokens)))

    def update(self, tokens, reward: float) -> float:
        """One REINFORCE step; returns the advantage used."""
        reward = float(reward)
        if self.baseline is None:
            self.baseline = reward
        advantage = reward - self.baseline
        self.baseline = self.baseline_decay * self.baseline + (1 - self.baseline_decay) * reward
        self.episodes += 1
        if advantage == 0.0:
            # no learning signal; leave parameters and optimizer state untouched
            return advantage
        leaves = {k: Tensor(v, requires_grad=True) for k, v in self.params.items()}
        try:
            steps = self._unroll(leaves, tokens=tokens)
            total = tsum(concat([getitem(lp, (slice(None), slice(t, t + 1))) for t, lp in steps], axis=-1))
            objective = mul(total, Tensor(np.array(-advantage, DTYPE)))
            objective.backward()
        except NonFiniteError as exc:
            self.skipped_updates += 1
            log.warning("controller update skipped: %s", exc)
            return advantage
        grads = {k: t.grad if t.grad is not None else np.zeros_like(t.data) for k, t in leaves.items()}
        if not all(np.isfinite(g).all() for g in grads.values()):
            self.skipped_updates += 1
            log.warning("controller update skipped: non-finite gradient")
            return advantage
        self.params = self.optimizer.step(self.params, grads)
        return advantage

    def probabilities(self, slot: int = 0, tokens=()) -> np.ndarray:
        """Policy distribution at ``slot`` given the preceding ``tokens``."""
        with no_grad():
            p = {k: Tensor(v) for k, v in self.params.items()}
            prefix = list(tokens) + [0] * (len(self.cardinalities) - len(tokens))
            _, logp = self._unroll(p, tokens=prefix)[slot]
        return np.exp(logp.data[0].astype(np.float64))
