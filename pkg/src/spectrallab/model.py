"""Multilayer perceptron with hand-written forward and backward passes.

Layer indexing follows the usual 1-based convention: ``state.weights[l - 1]``
is ``W_l`` of shape ``(d_l, d_{l-1})``, while activation and gradient records
are indexed directly by ``l`` (index 0 holds the network input).

Every function accepts either a single example (1-D input) or a batch
(2-D input, one example per row).
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Sequence

import numpy as np

from .linalg import ShapeMismatchError


class EmptyBatchError(ValueError):
    pass


class Activation(str, Enum):
    LINEAR = "linear"
    RELU = "relu"
    TANH = "tanh"

    def apply(self, z: np.ndarray) -> np.ndarray:
        if self is Activation.RELU:
            return np.maximum(z, 0.0)
        if self is Activation.TANH:
            return np.tanh(z)
        return z

    def derivative(self, z: np.ndarray) -> np.ndarray:
        # relu'(0) := 0
        if self is Activation.RELU:
            return (z > 0.0).astype(np.float64)
        if self is Activation.TANH:
            return 1.0 - np.tanh(z) ** 2
        return np.ones_like(z)


@dataclass(frozen=True)
class MlpConfig:
    widths: tuple[int, ...]
    activation: Activation = Activation.RELU
    use_bias: bool = False

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "activation", Activation(self.activation))
        if len(self.widths) < 2:
            raise ValueError("an MLP needs at least an input and an output width")
        if any(w < 1 for w in self.widths):
            raise ValueError(f"widths must be positive, got {self.widths}")

    @property
    def depth(self) -> int:
        return len(self.widths) - 1

    def shapes(self) -> list[tuple[int, int]]:
        return [(self.widths[l], self.widths[l - 1]) for l in range(1, self.depth + 1)]


def _frozen_copy(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64, copy=True)
    out.flags.writeable = False
    return out


class MlpState:
    """Weights (and optional biases) plus a read-only snapshot of their initial values."""

    def __init__(self, config: MlpConfig, weights: Sequence[np.ndarray],
                 biases: Sequence[np.ndarray] | None = None):
        self.config = config
        self.weights = [np.array(w, dtype=np.float64, copy=True) for w in weights]
        if len(self.weights) != config.depth:
            raise ShapeMismatchError(f"expected {config.depth} weight matrices, got {len(self.weights)}")
        for l, (w, shape) in enumerate(zip(self.weights, config.shapes()), start=1):
            if w.shape != shape:
                raise ShapeMismatchError(f"W_{l} has shape {w.shape}, expected {shape}")
        if config.use_bias:
            if biases is None:
                biases = [np.zeros(d) for d in config.widths[1:]]
            self.biases = [np.array(b, dtype=np.float64, copy=True) for b in biases]
            for l, b in enumerate(self.biases, start=1):
                if b.shape != (config.widths[l],):
                    raise ShapeMismatchError(f"b_{l} has shape {b.shape}, expected ({config.widths[l]},)")
        else:
            if biases is not None:
                raise ValueError("biases given but config.use_bias is False")
            self.biases = None
        self.init_weights = tuple(_frozen_copy(w) for w in self.weights)
        self.init_biases = None if self.biases is None else tuple(_frozen_copy(b) for b in self.biases)

    @property
    def depth(self) -> int:
        return self.config.depth

    def weight_deltas(self) -> list[np.ndarray]:
        """Cumulative updates ``W_l - W_l^0``."""
        return [w - w0 for w, w0 in zip(self.weights, self.init_weights)]

    def initial(self) -> "MlpState":
        """A fresh state holding the initial snapshot."""
        return MlpState(self.config, self.init_weights, self.init_biases)

    def copy(self) -> "MlpState":
        return copy.deepcopy(self)

    def with_weights(self, weights: Sequence[np.ndarray], biases=None) -> "MlpState":
        """Same config, different weights; the snapshot is carried over unchanged."""
        new = copy.copy(self)
        new.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        new.biases = None if biases is None else [np.asarray(b, dtype=np.float64) for b in biases]
        if self.config.use_bias and new.biases is None:
            new.biases = [b.copy() for b in self.biases]
        return new


@dataclass
class ActivationRecord:
    """Forward-pass record. ``preacts[l]`` is ``h_l`` and ``postacts[l]`` is ``h'_l``.

    Index 0 holds the input in both lists; ``postacts[L]`` equals the output
    ``h_L`` (no nonlinearity on the readout).
    """

    input: np.ndarray
    preacts: list[np.ndarray]
    postacts: list[np.ndarray]

    @property
    def output(self) -> np.ndarray:
        return self.preacts[-1]

    @property
    def batched(self) -> bool:
        return self.input.ndim == 2

    def __len__(self) -> int:
        return self.input.shape[0] if self.batched else 1

    def __getitem__(self, i: int) -> "ActivationRecord":
        if not self.batched:
            if i not in (0, -1):
                raise IndexError(i)
            return self
        return ActivationRecord(self.input[i], [h[i] for h in self.preacts], [h[i] for h in self.postacts])

    def __iter__(self) -> Iterator["ActivationRecord"]:
        for i in range(len(self)):
            yield self[i]


@dataclass
class GradientRecord:
    """Backward-pass record.

    ``preact_grads[l]`` holds the per-example loss gradient with respect to
    ``h_l`` (index 0 is the input gradient). ``weight_grads[l - 1]`` is the
    gradient of the batch-mean loss with respect to ``W_l``.
    """

    preact_grads: list[np.ndarray]
    weight_grads: list[np.ndarray]
    bias_grads: list[np.ndarray] | None = field(default=None)


def forward(state: MlpState, x) -> ActivationRecord:
    x = np.asarray(x, dtype=np.float64)
    d0 = state.config.widths[0]
    if x.ndim not in (1, 2) or x.shape[-1] != d0:
        raise ShapeMismatchError(f"input shape {x.shape} incompatible with d_0={d0}")
    act = state.config.activation
    preacts = [x]
    postacts = [x]
    h_prev = x
    L = state.depth
    for l in range(1, L + 1):
        h = h_prev @ state.weights[l - 1].T
        if state.biases is not None:
            h = h + state.biases[l - 1]
        preacts.append(h)
        h_prev = act.apply(h) if l < L else h
        postacts.append(h_prev)
    return ActivationRecord(x, preacts, postacts)


def loss_and_grad(output, target, kind: str = "squared_error") -> tuple[float, np.ndarray]:
    """Squared error ``0.5 * ||output - target||^2`` and its gradient.

    For batched input the loss is the batch mean and the returned gradient
    holds one row per example (gradient of that example's loss).
    """
    if kind != "squared_error":
        raise ValueError(f"unsupported loss {kind!r}")
    output = np.asarray(output, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if output.shape != target.shape:
        raise ShapeMismatchError(f"output {output.shape} vs target {target.shape}")
    diff = output - target
    if diff.ndim == 1:
        return 0.5 * float(diff @ diff), diff
    return 0.5 * float(np.mean(np.sum(diff * diff, axis=1))), diff


def backward(state: MlpState, rec: ActivationRecord, out_grad) -> GradientRecord:
    g = np.asarray(out_grad, dtype=np.float64)
    if g.shape != rec.output.shape:
        raise ShapeMismatchError(f"out_grad {g.shape} vs output {rec.output.shape}")
    batched = g.ndim == 2
    n = g.shape[0] if batched else 1
    act = state.config.activation
    L = state.depth
    preact_grads: list[np.ndarray] = [None] * (L + 1)  # type: ignore[list-item]
    weight_grads: list[np.ndarray] = [None] * L  # type: ignore[list-item]
    bias_grads = [None] * L if state.biases is not None else None
    preact_grads[L] = g
    for l in range(L, 0, -1):
        h_in = rec.postacts[l - 1]
        if batched:
            weight_grads[l - 1] = g.T @ h_in / n
        else:
            weight_grads[l - 1] = np.outer(g, h_in)
        if bias_grads is not None:
            bias_grads[l - 1] = g.mean(axis=0) if batched else g.copy()
        back = g @ state.weights[l - 1]
        if l > 1:
            g = back * act.derivative(rec.preacts[l - 1])
        else:
            g = back
        preact_grads[l - 1] = g
    return GradientRecord(preact_grads, weight_grads, bias_grads)


def batch_forward_backward(state: MlpState, inputs, targets,
                           loss_kind: str = "squared_error") -> tuple[float, GradientRecord, ActivationRecord]:
    """Mean loss and mean gradients over a batch.

    The returned record is batched but indexes and iterates like a list of
    per-example records.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if inputs.ndim == 1:
        inputs = inputs[None, :]
    if targets.ndim == 1:
        targets = targets[None, :]
    if inputs.shape[0] == 0:
        raise EmptyBatchError("batch must contain at least one example")
    if inputs.shape[0] != targets.shape[0]:
        raise ShapeMismatchError(f"{inputs.shape[0]} inputs but {targets.shape[0]} targets")
    rec = forward(state, inputs)
    loss, out_grad = loss_and_grad(rec.output, targets, loss_kind)
    return loss, backward(state, rec, out_grad), rec
