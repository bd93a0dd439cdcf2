"""Dense networks with hand-derived gradients.

Weights are stored as ``(fan_in, fan_out)`` arrays so a layer is
``x @ W + b``.  Hidden layers use ReLU; the last layer is either the
identity (classifier logits) or a sigmoid (decoder outputs in [0, 1]).
Everything is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import DimensionError, EmptyInputError, NumericError

OUTPUT_ACTIVATIONS = ("identity", "sigmoid")
PROB_FLOOR = 1e-12
_LOG_PROB_FLOOR = np.log(PROB_FLOOR)


@dataclass(frozen=True)
class ModelSpec:
    layer_sizes: tuple[int, ...]
    output: str = "identity"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise DimensionError(f"need at least 2 layer sizes, got {sizes}")
        if any(s < 1 for s in sizes):
            raise DimensionError(f"layer sizes must be >= 1, got {sizes}")
        if self.output not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output!r}")

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def num_layers(self) -> int:
        return len(self.layer_sizes) - 1

    def shapes(self) -> list[tuple[tuple[int, int], tuple[int]]]:
        return [((a, b), (b,)) for a, b in zip(self.layer_sizes[:-1], self.layer_sizes[1:])]


@dataclass
class ModelParams:
    """Weights and biases of a dense net.  Also used as the gradient record."""

    spec: ModelSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if len(self.weights) != self.spec.num_layers or len(self.biases) != self.spec.num_layers:
            raise DimensionError("layer count does not match spec")
        for (wshape, bshape), w, b in zip(self.spec.shapes(), self.weights, self.biases):
            if w.shape != wshape or b.shape != bshape:
                raise DimensionError(
                    f"expected weight {wshape} / bias {bshape}, got {w.shape} / {b.shape}"
                )

    def arrays(self) -> Iterator[np.ndarray]:
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b

    @property
    def num_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def copy(self) -> ModelParams:
        return ModelParams(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self) -> ModelParams:
        return zeros(self.spec)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def from_flat(cls, spec: ModelSpec, vec: np.ndarray) -> ModelParams:
        vec = np.asarray(vec, dtype=np.float64)
        weights, biases, pos = [], [], 0
        for wshape, bshape in spec.shapes():
            n = wshape[0] * wshape[1]
            weights.append(vec[pos:pos + n].reshape(wshape).copy())
            pos += n
            biases.append(vec[pos:pos + bshape[0]].copy())
            pos += bshape[0]
        if pos != vec.size:
            raise DimensionError(f"flat vector has {vec.size} entries, spec needs {pos}")
        return cls(spec, weights, biases)

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())

    def bit_equal(self, other: ModelParams) -> bool:
        if self.spec != other.spec:
            return False
        return all(
            a.tobytes() == b.tobytes() for a, b in zip(self.arrays(), other.arrays())
        )


@dataclass
class LossGrad:
    loss: float
    grads: ModelParams


def zeros(spec: ModelSpec) -> ModelParams:
    return ModelParams(
        spec,
        [np.zeros(ws) for ws, _ in spec.shapes()],
        [np.zeros(bs) for _, bs in spec.shapes()],
    )


def init_params(spec: ModelSpec, seed) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights = []
    for (fan_in, fan_out), _ in spec.shapes():
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_in, fan_out)))
    return ModelParams(spec, weights, [np.zeros(bs) for _, bs in spec.shapes()])


def _check_batch(spec: ModelSpec, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != spec.input_dim:
        raise DimensionError(
            f"batch of shape {batch.shape} does not fit input dim {spec.input_dim}"
        )
    return batch


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form cannot overflow
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _forward_cache(params: ModelParams, batch: np.ndarray):
    """Return (output, layer inputs) where layer inputs[i] feeds layer i."""
    inputs = []
    a = batch
    last = params.spec.num_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(a)
        z = a @ w + b
        if i < last:
            a = np.maximum(z, 0.0)
        elif params.spec.output == "sigmoid":
            a = _sigmoid(z)
        else:
            a = z
    return a, inputs


def forward(params: ModelParams, batch: np.ndarray) -> np.ndarray:
    batch = _check_batch(params.spec, batch)
    out, _ = _forward_cache(params, batch)
    return out


def _backward(params: ModelParams, inputs: list[np.ndarray], output: np.ndarray,
              grad_out: np.ndarray) -> ModelParams:
    """Backprop ``dL/d(output)`` through the net."""
    g = grad_out
    if params.spec.output == "sigmoid":
        g = g * output * (1.0 - output)
    n = params.spec.num_layers
    gw: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    for i in range(n - 1, -1, -1):
        a = inputs[i]
        gw[i] = a.T @ g
        gb[i] = g.sum(axis=0)
        if i > 0:
            # inputs[i] is relu(z_{i-1}); its positive mask is the relu derivative
            g = (g @ params.weights[i].T) * (a > 0)
    return ModelParams(params.spec, gw, gb)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _nonempty(batch: np.ndarray) -> None:
    if np.asarray(batch).shape[0] == 0:
        raise EmptyInputError("empty batch")


def ce_loss_grad(params: ModelParams, batch: np.ndarray, labels: np.ndarray) -> LossGrad:
    """Mean cross-entropy of softmax(logits) against integer labels."""
    _nonempty(batch)
    batch = _check_batch(params.spec, batch)
    labels = np.asarray(labels, dtype=np.int64)
    n = params.spec.output_dim
    if labels.shape != (batch.shape[0],):
        raise DimensionError("labels must be one per batch row")
    if labels.min() < 0 or labels.max() >= n:
        raise DimensionError(f"labels must lie in [0, {n})")
    logits, inputs = _forward_cache(params, batch)
    logp = log_softmax(logits)
    rows = np.arange(batch.shape[0])
    loss = -float(np.mean(np.maximum(logp[rows, labels], _LOG_PROB_FLOOR)))
    g = np.exp(logp)
    g[rows, labels] -= 1.0
    g /= batch.shape[0]
    return LossGrad(loss, _backward(params, inputs, logits, g))


def kl_uniform_loss_grad(params: ModelParams, batch: np.ndarray) -> LossGrad:
    """Mean KL(uniform || softmax(logits)) over the batch."""
    _nonempty(batch)
    batch = _check_batch(params.spec, batch)
    logits, inputs = _forward_cache(params, batch)
    n = params.spec.output_dim
    logp = np.maximum(log_softmax(logits), _LOG_PROB_FLOOR)
    per_row = -np.log(n) - logp.mean(axis=1)
    loss = max(float(per_row.mean()), 0.0)
    # d/dlogit_j of -(1/n) sum_i log p_i is p_j - 1/n
    g = (softmax(logits) - 1.0 / n) / batch.shape[0]
    return LossGrad(loss, _backward(params, inputs, logits, g))


def l2_recon_loss_grad(hidden: ModelParams, frozen_global: ModelParams,
                       z_batch: np.ndarray) -> LossGrad:
    """Mean L2 distance between ``hidden(softmax(global(z)))`` and ``z``.

    Gradients are taken with respect to ``hidden`` only.
    """
    _nonempty(z_batch)
    if frozen_global.spec.output_dim != hidden.spec.input_dim:
        raise DimensionError("global output dim must equal hidden input dim")
    if hidden.spec.output_dim != frozen_global.spec.input_dim:
        raise DimensionError("hidden output dim must equal global input dim")
    z = _check_batch(frozen_global.spec, z_batch)
    probs = softmax(forward(frozen_global, z))
    recon, inputs = _forward_cache(hidden, probs)
    resid = recon - z
    norms = np.sqrt(np.einsum("ij,ij->i", resid, resid))
    loss = float(norms.mean())
    safe = np.where(norms > 0, norms, 1.0)
    g = np.where(norms[:, None] > 0, resid / safe[:, None], 0.0) / z.shape[0]
    return LossGrad(loss, _backward(hidden, inputs, recon, g))


def add_scaled(a: ModelParams, b: ModelParams, scale: float) -> ModelParams:
    """``a + scale * b`` as a new record."""
    return ModelParams(
        a.spec,
        [x + scale * y for x, y in zip(a.weights, b.weights)],
        [x + scale * y for x, y in zip(a.biases, b.biases)],
    )


def sgd_step(params: ModelParams, grads: ModelParams, lr: float) -> ModelParams:
    if grads.spec != params.spec:
        raise DimensionError("gradient shape does not match params")
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    if not grads.all_finite():
        raise NumericError("non-finite gradient")
    if lr == 0:
        return params.copy()
    return ModelParams(
        params.spec,
        [p - lr * g for p, g in zip(params.weights, grads.weights)],
        [p - lr * g for p, g in zip(params.biases, grads.biases)],
    )


def predict(params: ModelParams, batch: np.ndarray) -> np.ndarray:
    """Arg-max class per row; ties resolve to the lowest index."""
    return np.argmax(forward(params, batch), axis=1)


def mirrored_decoder_spec(classifier: ModelSpec) -> ModelSpec:
    """n -> reversed hidden sizes -> d_in, sigmoid output."""
    sizes = classifier.layer_sizes
    return ModelSpec(tuple(reversed(sizes)), output="sigmoid")


def relu_masks(params: ModelParams, batch: np.ndarray) -> list[np.ndarray]:
    """Active-unit masks of every hidden layer; used to spot finite-difference kinks."""
    _, inputs = _forward_cache(params, _check_batch(params.spec, batch))
    return [a > 0 for a in inputs[1:]]

