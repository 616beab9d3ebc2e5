"""
Small feed-forward networks with analytic backpropagation.

An Mlp has ReLU hidden layers and either a linear or a softmax head. Weights
are stored as (fan_in, fan_out) matrices so a batch of row vectors
propagates as X @ W + b. Networks are immutable; `adam_step` returns a new
network together with the new optimizer state.
"""

from typing import Callable, List, Literal, NamedTuple, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, model_validator

from ..errors import ContractError

Head = Literal["linear", "softmax"]

LossFn = Callable[[np.ndarray], Tuple[float, np.ndarray]]


class TrainConfig(BaseModel):
    """Mini-batch Adam schedule for one network."""

    model_config = ConfigDict(frozen=True)

    batch_size: PositiveInt = Field(default=128, description="Samples per mini-batch")
    epochs: PositiveInt = Field(default=10, description="Passes over the training data")
    learning_rate: PositiveFloat = Field(default=1e-3, description="Adam step size")
    beta1: float = Field(default=0.9, gt=0.0, lt=1.0)
    beta2: float = Field(default=0.999, gt=0.0, lt=1.0)
    adam_eps: PositiveFloat = Field(default=1e-8)


class Mlp(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    layer_sizes: Tuple[int, ...]
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    head: Head = "linear"
    rng_seed: int = 0
    iteration: int = 0

    @model_validator(mode="after")
    def _check_shapes(self) -> "Mlp":
        if len(self.layer_sizes) < 2 or any(size < 1 for size in self.layer_sizes):
            raise ValueError("an Mlp needs at least an input and an output layer of positive size")
        layers = len(self.layer_sizes) - 1
        if len(self.weights) != layers or len(self.biases) != layers:
            raise ValueError("one weight matrix and one bias vector per layer are required")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_sizes[k], self.layer_sizes[k + 1])
            if w.shape != expected or b.shape != (expected[1],):
                raise ValueError(f"layer {k} has shapes {w.shape}/{b.shape}, expected {expected}")
        return self

    @property
    def num_parameters(self) -> int:
        return int(sum(w.size + b.size for w, b in zip(self.weights, self.biases)))

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b.ravel()]) for w, b in zip(self.weights, self.biases)])

    def with_flat_parameters(self, flat: np.ndarray) -> "Mlp":
        weights, biases, offset = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(flat[offset:offset + w.size].reshape(w.shape).copy())
            offset += w.size
            biases.append(flat[offset:offset + b.size].copy())
            offset += b.size
        return self.model_copy(update={"weights": tuple(weights), "biases": tuple(biases)})


class Gradients(NamedTuple):
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    inputs: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b.ravel()]) for w, b in zip(self.weights, self.biases)])


class AdamState(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    m_weights: Tuple[np.ndarray, ...]
    m_biases: Tuple[np.ndarray, ...]
    v_weights: Tuple[np.ndarray, ...]
    v_biases: Tuple[np.ndarray, ...]
    step: int = 0

    @classmethod
    def zeros_like(cls, net: Mlp) -> "AdamState":
        zw = tuple(np.zeros_like(w) for w in net.weights)
        zb = tuple(np.zeros_like(b) for b in net.biases)
        return cls(m_weights=zw, m_biases=zb, v_weights=zw, v_biases=zb, step=0)


def glorot_init(layer_sizes: Sequence[int], seed: int, head: Head = "linear") -> Mlp:
    """Glorot-uniform weights (variance 2 / (fan_in + fan_out)) and zero biases."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2:
        raise ContractError("an Mlp needs at least two layer sizes")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(layer_sizes=sizes, weights=tuple(weights), biases=tuple(biases), head=head, rng_seed=int(seed))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def _check_input(net: Mlp, batch: np.ndarray) -> np.ndarray:
    batch = np.atleast_2d(np.asarray(batch, dtype=float))
    if batch.shape[1] != net.layer_sizes[0]:
        raise ContractError(f"input width {batch.shape[1]} does not match first layer size {net.layer_sizes[0]}")
    return batch


def _forward_trace(net: Mlp, batch: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray]:
    """Layer inputs (for the weight gradients) and the network output."""
    activations = [batch]
    a = batch
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w + b
        if k < last:
            a = np.maximum(z, 0.0)
            activations.append(a)
        else:
            a = softmax(z) if net.head == "softmax" else z
    return activations, a


def forward(net: Mlp, batch: np.ndarray) -> np.ndarray:
    return _forward_trace(net, _check_input(net, batch))[1]


def backward(net: Mlp, batch: np.ndarray, loss_grad_at_output: np.ndarray) -> Gradients:
    """
    Parameter and input gradients given dL/d(output).

    For a softmax head the incoming gradient is taken with respect to the
    probabilities and pushed through the softmax Jacobian.
    """
    batch = _check_input(net, batch)
    activations, output = _forward_trace(net, batch)
    grad = np.asarray(loss_grad_at_output, dtype=float)
    if grad.shape != output.shape:
        raise ContractError(f"output gradient shape {grad.shape} does not match output {output.shape}")
    if net.head == "softmax":
        grad = output * (grad - (grad * output).sum(axis=1, keepdims=True))

    grad_w: List[np.ndarray] = [None] * len(net.weights)
    grad_b: List[np.ndarray] = [None] * len(net.biases)
    for k in range(len(net.weights) - 1, -1, -1):
        grad_w[k] = activations[k].T @ grad
        grad_b[k] = grad.sum(axis=0)
        grad = grad @ net.weights[k].T
        if k > 0:
            grad = grad * (activations[k] > 0.0)
    return Gradients(weights=tuple(grad_w), biases=tuple(grad_b), inputs=grad)


def adam_step(
    net: Mlp,
    grads: Gradients,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> Tuple[Mlp, AdamState]:
    """One bias-corrected Adam update; returns the new network and state."""
    if len(state.m_weights) != len(net.weights):
        raise ContractError("optimizer state does not match the network")
    t = state.step + 1
    correction1 = 1.0 - beta1**t
    correction2 = 1.0 - beta2**t

    def update(params, g, m, v):
        new_params, new_m, new_v = [], [], []
        for p_k, g_k, m_k, v_k in zip(params, g, m, v):
            m_next = beta1 * m_k + (1.0 - beta1) * g_k
            v_next = beta2 * v_k + (1.0 - beta2) * g_k * g_k
            step = lr * (m_next / correction1) / (np.sqrt(v_next / correction2) + eps)
            new_params.append(p_k - step)
            new_m.append(m_next)
            new_v.append(v_next)
        return tuple(new_params), tuple(new_m), tuple(new_v)

    weights, m_w, v_w = update(net.weights, grads.weights, state.m_weights, state.v_weights)
    biases, m_b, v_b = update(net.biases, grads.biases, state.m_biases, state.v_biases)
    new_net = net.model_copy(update={"weights": weights, "biases": biases})
    new_state = AdamState(m_weights=m_w, m_biases=m_b, v_weights=v_w, v_biases=v_b, step=t)
    return new_net, new_state


def one_hot_cross_entropy(probs: np.ndarray, labels: np.ndarray, floor: float = 1e-12) -> Tuple[float, np.ndarray]:
    """Mean -log probs[i, labels[i]] and its gradient with respect to `probs`."""
    probs = np.atleast_2d(probs)
    rows = np.arange(len(labels))
    picked = np.maximum(probs[rows, labels], floor)
    grad = np.zeros_like(probs)
    grad[rows, labels] = -1.0 / picked / len(labels)
    return float(-np.log(picked).mean()), grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Largest |a - n| / max(|a| + |n|, floor) over all entries."""
    analytic, numeric = np.ravel(analytic), np.ravel(numeric)
    scale = np.maximum(np.abs(analytic) + np.abs(numeric), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def numerical_gradient(fn: Callable[[np.ndarray], float], params: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of a flat parameter vector."""
    params = np.array(params, dtype=float, copy=True)
    grad = np.zeros_like(params)
    for i in range(params.size):
        original = params[i]
        params[i] = original + step
        f_plus = fn(params)
        params[i] = original - step
        f_minus = fn(params)
        params[i] = original
        grad[i] = (f_plus - f_minus) / (2.0 * step)
    return grad


def gradient_check(net: Mlp, batch: np.ndarray, loss_fn: LossFn, step: float = 1e-5) -> float:
    """
    Compare `backward` against central differences of loss_fn(forward(net, batch)).
    Returns:
        Largest relative error over all parameters
    """
    _, output_grad = loss_fn(forward(net, batch))
    analytic = backward(net, batch, output_grad).flat()
    numeric = numerical_gradient(lambda flat: loss_fn(forward(net.with_flat_parameters(flat), batch))[0],
                                 net.flat_parameters(), step)
    return relative_error(analytic, numeric)
