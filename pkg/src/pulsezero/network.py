"""Hand-rolled policy/value network: a feedforward torso of batch-normalized
ReLU layers feeding a sigmoid policy head and a linear value head, trained
with plain SGD on (z - v)^2 - pi^T log p + c*||theta||^2.

Backpropagation is derived by hand and cross-checked against central finite
differences in the test suite; no autodiff framework is involved.
"""

from __future__ import annotations

import hashlib
import json
import logging
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import (
    CheckpointMismatchError,
    DomainError,
    InvalidInputError,
    TrainingDivergenceError,
)

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-12
GRADIENT_NORM_LIMIT = 1e6
CHECKPOINT_VERSION = 1


def encode_state(unitary: np.ndarray, step_index: int, horizon: int) -> np.ndarray:
    """Flatten a state unitary into [Re entries, Im entries, t/horizon].

    Every feature lies in [-1, 1]: unitary entries have modulus at most one
    and the step index is normalized by the horizon.
    """
    u = np.asarray(unitary)
    return np.concatenate(
        [u.real.ravel(), u.imag.ravel(), [step_index / horizon]]
    ).astype(float)


def encoding_dim(matrix_dim: int) -> int:
    return 2 * matrix_dim * matrix_dim + 1


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class _Dense:
    def __init__(self, n_in, n_out, rng):
        self.weight = rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, n_out))
        self.bias = np.zeros(n_out)
        self._x = None
        self.grads = {}

    def forward(self, x, cache):
        if cache:
            self._x = x
        return x @ self.weight + self.bias

    def backward(self, d_out):
        self.grads = {
            "weight": self._x.T @ d_out,
            "bias": d_out.sum(axis=0),
        }
        return d_out @ self.weight.T

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def l2_params(self):
        return self.params()


class _BatchNorm:
    """Batch normalization with learned scale/shift and running statistics
    (momentum 0.9, eps 1e-5). Scale/shift are excluded from L2."""

    def __init__(self, n, momentum=0.9, eps=1e-5):
        self.scale = np.ones(n)
        self.shift = np.zeros(n)
        self.running_mean = np.zeros(n)
        self.running_var = np.ones(n)
        self.momentum = momentum
        self.eps = eps
        self._cache = None
        self.grads = {}

    def forward(self, x, train):
        if train:
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            self.running_mean = self.momentum * self.running_mean + (1 - self.momentum) * mean
            self.running_var = self.momentum * self.running_var + (1 - self.momentum) * var
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        x_norm = (x - mean) * inv_std
        if train:
            self._cache = (x_norm, inv_std, x.shape[0])
        return self.scale * x_norm + self.shift

    def backward(self, d_out):
        x_norm, inv_std, batch = self._cache
        self.grads = {
            "scale": (d_out * x_norm).sum(axis=0),
            "shift": d_out.sum(axis=0),
        }
        d_norm = d_out * self.scale
        return (inv_std / batch) * (
            batch * d_norm
            - d_norm.sum(axis=0)
            - x_norm * (d_norm * x_norm).sum(axis=0)
        )

    def params(self):
        return {"scale": self.scale, "shift": self.shift}

    def l2_params(self):
        return {}

    def stats(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}


class _Block:
    """Dense -> BatchNorm -> ReLU."""

    def __init__(self, n_in, n_out, rng):
        self.dense = _Dense(n_in, n_out, rng)
        self.bn = _BatchNorm(n_out)
        self._mask = None

    def forward(self, x, train):
        h = self.bn.forward(self.dense.forward(x, cache=train), train)
        if train:
            self._mask = h > 0
        return np.maximum(h, 0.0)

    def backward(self, d_out):
        return self.dense.backward(self.bn.backward(d_out * self._mask))


def alphazero_loss_terms(p, v, pi, z, clamp=PROB_CLAMP):
    """Per-batch mean of the two data terms: ((z-v)^2, -pi^T log p)."""
    p = np.asarray(p, dtype=float)
    clamped = np.maximum(p, clamp)
    if np.any(p < clamp):
        log.warning("policy outputs saturated below %g before log", clamp)
    value_term = float(np.mean((np.asarray(z) - np.asarray(v)) ** 2))
    policy_term = float(np.mean(-(np.asarray(pi) * np.log(clamped)).sum(axis=1)))
    return value_term, policy_term


class PolicyValueNetwork:
    """Shared torso, per-action sigmoid policy outputs, scalar linear value."""

    def __init__(
        self,
        input_dim: int,
        action_count: int = 60,
        hidden_width: int = 400,
        torso_layers: int = 4,
        l2_coefficient: float = 0.001,
        learning_rate: float = 0.01,
        rng: np.random.Generator | None = None,
    ):
        if rng is None:
            rng = np.random.default_rng()
        self.input_dim = int(input_dim)
        self.action_count = int(action_count)
        self.hidden_width = int(hidden_width)
        self.torso_layers = int(torso_layers)
        self.l2_coefficient = float(l2_coefficient)
        self.learning_rate = float(learning_rate)

        self.torso = []
        n_in = input_dim
        for _ in range(torso_layers):
            self.torso.append(_Block(n_in, hidden_width, rng))
            n_in = hidden_width
        self.policy_hidden = _Block(hidden_width, hidden_width, rng)
        self.policy_out = _Dense(hidden_width, action_count, rng)
        self.value_hidden = _Block(hidden_width, hidden_width, rng)
        self.value_out = _Dense(hidden_width, 1, rng)
        self._p = None
        self._v = None

    # -- plumbing -----------------------------------------------------------

    def _layers(self):
        named = []
        for i, block in enumerate(self.torso):
            named.append((f"torso{i}.dense", block.dense))
            named.append((f"torso{i}.bn", block.bn))
        named.extend(
            [
                ("policy_hidden.dense", self.policy_hidden.dense),
                ("policy_hidden.bn", self.policy_hidden.bn),
                ("policy_out", self.policy_out),
                ("value_hidden.dense", self.value_hidden.dense),
                ("value_hidden.bn", self.value_hidden.bn),
                ("value_out", self.value_out),
            ]
        )
        return named

    def named_parameters(self) -> dict[str, np.ndarray]:
        """Live views of every learnable array, keyed by dotted path."""
        out = {}
        for name, layer in self._layers():
            for key, arr in layer.params().items():
                out[f"{name}.{key}"] = arr
        return out

    def _named_l2_parameters(self):
        out = {}
        for name, layer in self._layers():
            for key, arr in layer.l2_params().items():
                out[f"{name}.{key}"] = arr
        return out

    def running_statistics(self) -> dict[str, np.ndarray]:
        out = {}
        for name, layer in self._layers():
            if isinstance(layer, _BatchNorm):
                for key, arr in layer.stats().items():
                    out[f"{name}.{key}"] = arr
        return out

    def architecture_fingerprint(self) -> str:
        desc = json.dumps(
            {
                "input_dim": self.input_dim,
                "action_count": self.action_count,
                "hidden_width": self.hidden_width,
                "torso_layers": self.torso_layers,
                "version": CHECKPOINT_VERSION,
            },
            sort_keys=True,
        )
        return hashlib.sha256(desc.encode()).hexdigest()

    # -- forward / backward ---------------------------------------------------

    def forward(self, x, train: bool = False):
        """Map encodings (B, F) to policy outputs (B, A) in (0, 1) and
        values (B,). Train mode uses and updates batch statistics."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.input_dim:
            raise InvalidInputError(
                f"encoding width {x.shape[1]} != input_dim {self.input_dim}"
            )
        h = x
        for block in self.torso:
            h = block.forward(h, train)
        hp = self.policy_hidden.forward(h, train)
        p = _sigmoid(self.policy_out.forward(hp, cache=train))
        hv = self.value_hidden.forward(h, train)
        v = self.value_out.forward(hv, cache=train)[:, 0]
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(v))):
            raise TrainingDivergenceError(
                "non-finite network output\n" + self.diagnostics()
            )
        if train:
            self._p, self._v = p, v
        return p, v

    @staticmethod
    def _eval_block(block, h):
        dense, bn = block.dense, block.bn
        z = h @ dense.weight + dense.bias
        inv_std = 1.0 / np.sqrt(bn.running_var + bn.eps)
        x_norm = (z - bn.running_mean) * inv_std
        return np.maximum(bn.scale * x_norm + bn.shift, 0.0)

    def forward_one(self, encoding):
        """Eval-mode forward of a single encoding: (p, v). Specialized 1-D
        path for the tree-search hot loop (no batch axis, no caches)."""
        h = np.asarray(encoding, dtype=float)
        if h.shape != (self.input_dim,):
            raise InvalidInputError(
                f"encoding width {h.shape} != input_dim {self.input_dim}"
            )
        for block in self.torso:
            h = self._eval_block(block, h)
        hp = self._eval_block(self.policy_hidden, h)
        p = _sigmoid(hp @ self.policy_out.weight + self.policy_out.bias)
        hv = self._eval_block(self.value_hidden, h)
        v = float(hv @ self.value_out.weight[:, 0] + self.value_out.bias[0])
        if not (np.all(np.isfinite(p)) and np.isfinite(v)):
            raise TrainingDivergenceError(
                "non-finite network output\n" + self.diagnostics()
            )
        return p, v

    def backward(self, d_p, d_v):
        """Data-term gradients, given dLoss/dp and dLoss/dv from a train-mode
        forward. Returns a dict aligned with named_parameters()."""
        if self._p is None:
            raise InvalidInputError("backward requires a preceding train-mode forward")
        d_logits = d_p * self._p * (1.0 - self._p)
        d_h_policy = self.policy_hidden.backward(self.policy_out.backward(d_logits))
        d_h_value = self.value_hidden.backward(
            self.value_out.backward(np.asarray(d_v, dtype=float)[:, None])
        )
        d_h = d_h_policy + d_h_value
        for block in reversed(self.torso):
            d_h = block.backward(d_h)
        grads = {}
        for name, layer in self._layers():
            for key, arr in layer.grads.items():
                grads[f"{name}.{key}"] = arr
        return grads

    # -- loss and training ----------------------------------------------------

    def l2_term(self) -> float:
        return self.l2_coefficient * sum(
            float((arr**2).sum()) for arr in self._named_l2_parameters().values()
        )

    def loss(self, encodings, policies, outcomes, train: bool = True) -> float:
        p, v = self.forward(encodings, train=train)
        value_term, policy_term = alphazero_loss_terms(p, v, policies, outcomes)
        return value_term + policy_term + self.l2_term()

    def loss_and_grads(self, encodings, policies, outcomes):
        policies = np.atleast_2d(np.asarray(policies, dtype=float))
        outcomes = np.atleast_1d(np.asarray(outcomes, dtype=float))
        if policies.shape[0] == 0:
            raise InvalidInputError("empty batch")
        p, v = self.forward(encodings, train=True)
        value_term, policy_term = alphazero_loss_terms(p, v, policies, outcomes)
        batch = policies.shape[0]
        d_v = 2.0 * (v - outcomes) / batch
        # -pi * d(log p)/dp where the clamp is inactive, zero where saturated
        d_p = np.where(p > PROB_CLAMP, -policies / np.maximum(p, PROB_CLAMP), 0.0) / batch
        grads = self.backward(d_p, d_v)
        for name, arr in self._named_l2_parameters().items():
            grads[name] = grads[name] + 2.0 * self.l2_coefficient * arr
        return value_term + policy_term + self.l2_term(), grads, (value_term, policy_term)

    def sgd_update(self, encodings, policies, outcomes) -> float:
        """One plain SGD step; returns the pre-update loss."""
        loss, grads, _ = self.loss_and_grads(encodings, policies, outcomes)
        norm = np.sqrt(sum(float((g**2).sum()) for g in grads.values()))
        if not np.isfinite(norm) or norm > GRADIENT_NORM_LIMIT:
            raise TrainingDivergenceError(
                f"gradient norm {norm:.3e} exceeds {GRADIENT_NORM_LIMIT:.0e}\n"
                + self.diagnostics()
            )
        params = self.named_parameters()
        for name, grad in grads.items():
            params[name] -= self.learning_rate * grad
        return loss

    def diagnostics(self) -> str:
        lines = []
        for name, arr in self.named_parameters().items():
            finite = np.isfinite(arr).all()
            lines.append(
                f"  {name}: max|.|={np.abs(arr).max():.3e} finite={bool(finite)}"
            )
        return "\n".join(lines)

    # -- persistence ----------------------------------------------------------

    def save(self, path, config_hash: str = "") -> None:
        arrays = dict(self.named_parameters())
        arrays.update(self.running_statistics())
        meta = json.dumps(
            {
                "fingerprint": self.architecture_fingerprint(),
                "config_hash": config_hash,
                "l2_coefficient": self.l2_coefficient,
                "learning_rate": self.learning_rate,
                "input_dim": self.input_dim,
                "action_count": self.action_count,
                "hidden_width": self.hidden_width,
                "torso_layers": self.torso_layers,
                "version": CHECKPOINT_VERSION,
            }
        )
        np.savez(path, __meta__=np.array(meta), **arrays)

    @classmethod
    def load(cls, path, expected_config_hash: str | None = None) -> "PolicyValueNetwork":
        with np.load(path) as data:
            meta = json.loads(str(data["__meta__"]))
            net = cls(
                input_dim=meta["input_dim"],
                action_count=meta["action_count"],
                hidden_width=meta["hidden_width"],
                torso_layers=meta["torso_layers"],
                l2_coefficient=meta["l2_coefficient"],
                learning_rate=meta["learning_rate"],
                rng=np.random.default_rng(0),
            )
            if meta["fingerprint"] != net.architecture_fingerprint():
                raise CheckpointMismatchError("architecture fingerprint mismatch")
            if expected_config_hash is not None and meta["config_hash"] != expected_config_hash:
                raise CheckpointMismatchError(
                    f"checkpoint config hash {meta['config_hash']!r} != "
                    f"expected {expected_config_hash!r}"
                )
            params = net.named_parameters()
            for name, arr in params.items():
                arr[...] = data[name]
            stats = net.running_statistics()
            for name, arr in stats.items():
                arr[...] = data[name]
        return net


# ---------------------------------------------------------------------------
# Replay buffer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReplayRecord:
    """(state encoding, search policy, episode outcome z)."""

    encoding: np.ndarray
    policy: np.ndarray
    outcome: float

    def __post_init__(self):
        policy = np.asarray(self.policy, dtype=float)
        if abs(policy.sum() - 1.0) > 1e-9 or np.any(policy < 0):
            raise InvalidInputError("policy must be a probability distribution")
        if not 0.0 <= self.outcome <= 1.0:
            raise InvalidInputError("outcome must lie in [0, 1]")
        object.__setattr__(self, "encoding", np.asarray(self.encoding, dtype=float))
        object.__setattr__(self, "policy", policy)


class ReplayBuffer:
    """Bounded FIFO of replay records with uniform sampling."""

    def __init__(self, capacity: int = 100_000):
        if capacity < 1:
            raise DomainError("capacity must be positive")
        self.capacity = capacity
        self._records = deque(maxlen=capacity)

    def __len__(self):
        return len(self._records)

    def push(self, record: ReplayRecord) -> None:
        self._records.append(record)

    def extend(self, records) -> None:
        for r in records:
            self.push(r)

    def sample(self, batch_size: int, rng: np.random.Generator):
        """Uniform-with-replacement batch: (encodings, policies, outcomes)."""
        if not self._records:
            raise DomainError("cannot sample from an empty buffer")
        idx = rng.integers(0, len(self._records), size=batch_size)
        recs = [self._records[i] for i in idx]
        return (
            np.stack([r.encoding for r in recs]),
            np.stack([r.policy for r in recs]),
            np.array([r.outcome for r in recs]),
        )


@dataclass(frozen=True)
class TrainingConfig:
    """Replay/training knobs (buffer size, fill threshold, batch size and
    snapshot cadence are not physics-constrained; sweeps live in the harness
    config)."""

    buffer_capacity: int = 100_000
    min_fill: int = 1000
    batch_size: int = 64
    batches_per_step: int = 1
    snapshot_interval: int = 25

    def __post_init__(self):
        if self.buffer_capacity < 1 or self.batch_size < 1:
            raise DomainError("buffer_capacity and batch_size must be positive")
        if self.min_fill < 1 or self.batches_per_step < 0:
            raise DomainError("min_fill must be >= 1 and batches_per_step >= 0")
