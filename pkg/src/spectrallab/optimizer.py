"""Weight-update rules and a full-batch training loop."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .linalg import Density, ShapeMismatchError, spectral_norm
from .model import GradientRecord, MlpState, batch_forward_backward
from .parametrization import DEFAULT_PREFACTORS, GlobalPrefactors, PznKind, network_hyperparams


class RuleKind(str, Enum):
    SGD = "sgd"
    SPECTRAL = "spectral"
    FROBENIUS = "frobenius"
    WIDTH_FROBENIUS = "width_frobenius"
    SIGN = "sign"


class ZeroGradientWarning(RuntimeWarning):
    """A normalized rule met an all-zero gradient; that layer's step was skipped."""


@dataclass(frozen=True)
class UpdateRule:
    """One update rule.

    ``SGD`` and ``SIGN`` use the per-layer ``etas``; the normalized rules use
    the global ``eta0``. Biases, when present, always step with ``bias_etas``.
    ``sparse_input`` makes the normalized rules treat layer 1's fan-in as 1.
    """

    kind: RuleKind = RuleKind.SGD
    eta0: float = DEFAULT_PREFACTORS.eta0
    etas: tuple[float, ...] | None = None
    bias_etas: tuple[float, ...] | None = None
    sparse_input: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", RuleKind(self.kind))
        if self.eta0 < 0 or any(e < 0 for e in (self.etas or ())) or any(e < 0 for e in (self.bias_etas or ())):
            raise ValueError("learning rates must be nonnegative")
        if self.kind in (RuleKind.SGD, RuleKind.SIGN) and self.etas is None:
            raise ValueError(f"rule {self.kind.value!r} needs per-layer etas")

    @classmethod
    def from_parametrization(cls, widths, kind: PznKind | str, pref: GlobalPrefactors = DEFAULT_PREFACTORS,
                             rule: RuleKind | str = RuleKind.SGD,
                             input_density: Density | str = Density.DENSE) -> "UpdateRule":
        hps = network_hyperparams(widths, kind, pref, input_density=input_density)
        return cls(RuleKind(rule), pref.eta0, tuple(h.eta for h in hps), tuple(h.eta_b for h in hps),
                   Density(input_density) is Density.SPARSE)


def _normalized_step(grad: np.ndarray, target: float, denom: float, layer: int) -> np.ndarray:
    if denom == 0.0:
        warnings.warn(f"zero gradient at layer {layer}; step skipped", ZeroGradientWarning, stacklevel=3)
        return np.zeros_like(grad)
    return grad * (-target / denom)


def compute_deltas(state: MlpState, grads: GradientRecord, rule: UpdateRule,
                   spectral_tol: float = 1e-8, spectral_max_iters: int = 10_000) -> list[np.ndarray]:
    """The weight steps ``rule`` would take, without touching ``state``."""
    if len(grads.weight_grads) != state.depth:
        raise ShapeMismatchError("gradient record depth differs from the model")
    deltas = []
    for l, (w, g) in enumerate(zip(state.weights, grads.weight_grads), start=1):
        if g.shape != w.shape:
            raise ShapeMismatchError(f"grad for W_{l} has shape {g.shape}, expected {w.shape}")
        fan_out, fan_in = w.shape
        if l == 1 and rule.sparse_input:
            fan_in = 1
        if rule.kind is RuleKind.SGD:
            deltas.append(-rule.etas[l - 1] * g)
        elif rule.kind is RuleKind.SIGN:
            deltas.append(-rule.etas[l - 1] * np.sign(g))
        elif rule.kind is RuleKind.SPECTRAL:
            target = rule.eta0 * math.sqrt(fan_out / fan_in)
            deltas.append(_normalized_step(g, target, spectral_norm(g, spectral_tol, spectral_max_iters), l))
        elif rule.kind is RuleKind.FROBENIUS:
            target = rule.eta0 * math.sqrt(fan_out / fan_in)
            deltas.append(_normalized_step(g, target, float(np.linalg.norm(g)), l))
        else:
            target = rule.eta0 * float(np.linalg.norm(w)) / math.sqrt(min(fan_out, fan_in))
            deltas.append(_normalized_step(g, target, float(np.linalg.norm(g)), l))
    return deltas


def apply_update(state: MlpState, grads: GradientRecord, rule: UpdateRule, **kwargs) -> list[np.ndarray]:
    """Step ``state`` in place and return the applied weight deltas.

    The returned deltas are the rounded changes actually made, so
    ``old + delta`` reproduces the new weights bitwise, and ``new - delta``
    restores the old ones wherever ``|step| <= |weight|`` entrywise.
    """
    deltas = compute_deltas(state, grads, rule, **kwargs)
    for i, (w, dw) in enumerate(zip(state.weights, deltas)):
        new = w + dw
        deltas[i] = new - w
        w[...] = new
    if state.biases is not None and grads.bias_grads is not None and rule.bias_etas is not None:
        for b, gb, eta_b in zip(state.biases, grads.bias_grads, rule.bias_etas):
            b -= eta_b * gb
    return deltas


@dataclass
class TrainResult:
    """Losses recorded before each step; ``diverged_step`` marks a non-finite loss."""

    losses: list[float] = field(default_factory=list)
    diverged_step: int | None = None

    @property
    def diverged(self) -> bool:
        return self.diverged_step is not None

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else math.nan


Recorder = Callable[[int, MlpState, Sequence[np.ndarray], float], None]


def train(state: MlpState, batch, rule: UpdateRule, steps: int, loss_kind: str = "squared_error",
          recorder: Recorder | None = None, minibatch: int | None = None, seed: int = 0) -> TrainResult:
    """Gradient descent on ``batch`` for ``steps`` steps.

    Full-batch by default; ``minibatch`` draws seeded subsets each step.
    ``recorder(step, state, deltas, loss)`` is called after every step with
    ``step`` counted from 1. Training stops early when the loss or the
    weights stop being finite.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    inputs, targets = batch.inputs, batch.targets
    rng = np.random.default_rng(seed) if minibatch else None
    result = TrainResult()
    for step in range(1, steps + 1):
        if rng is not None:
            idx = rng.choice(inputs.shape[0], size=minibatch, replace=False)
            x, y = inputs[idx], targets[idx]
        else:
            x, y = inputs, targets
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grads, _ = batch_forward_backward(state, x, y, loss_kind)
        if not math.isfinite(loss) or not all(np.isfinite(g).all() for g in grads.weight_grads):
            result.diverged_step = step
            break
        result.losses.append(loss)
        with np.errstate(over="ignore", invalid="ignore"):
            deltas = apply_update(state, grads, rule)
        if not all(np.isfinite(w).all() for w in state.weights):
            result.diverged_step = step
            break
        if recorder is not None:
            recorder(step, state, deltas, loss)
    return result
