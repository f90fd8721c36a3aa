"""Per-layer initialization scales and learning rates for each width-scaling rule."""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .linalg import Density, ZeroMatrixError, as_matrix, sample_gaussian, sample_semi_orthogonal, spectral_norm
from .model import MlpConfig, MlpState


class PznKind(str, Enum):
    """Scaling rules.

    ``SPECTRAL`` is the general fan-in/fan-out rule. ``MUP`` is the
    three-block table used for the width sweeps (input, hidden, readout);
    it differs from ``SPECTRAL`` only at an input layer narrower than its
    fan-in.
    """

    SPECTRAL = "spectral"
    SP = "sp"
    NTP = "ntp"
    MUP = "mup"


class LayerRole(str, Enum):
    INPUT = "input"
    HIDDEN = "hidden"
    OUTPUT = "output"


class InitStyle(str, Enum):
    GAUSSIAN = "gaussian"
    SEMI_ORTHOGONAL = "semi_orthogonal"


@dataclass(frozen=True)
class GlobalPrefactors:
    sigma0: float = math.sqrt(2.0)
    eta0: float = 0.1

    def __post_init__(self):
        if not (self.sigma0 > 0 and self.eta0 > 0):
            raise ValueError("sigma0 and eta0 must be positive")


@dataclass(frozen=True)
class LayerHyperparams:
    sigma: float
    eta: float
    sigma_b: float = 0.0
    eta_b: float = 0.0


DEFAULT_PREFACTORS = GlobalPrefactors()


def effective_fan_in(kind: PznKind | str, fan_in: int, in_density: Density | str = Density.DENSE) -> int:
    """Fan-in seen by the spectral rules: a sparse (one-hot) input counts as dimension 1."""
    if Density(in_density) is Density.SPARSE and PznKind(kind) in (PznKind.SPECTRAL, PznKind.MUP):
        return 1
    return fan_in


def layer_hyperparams(kind: PznKind | str, fan_in: int, fan_out: int,
                      pref: GlobalPrefactors = DEFAULT_PREFACTORS,
                      role: LayerRole | str = LayerRole.HIDDEN,
                      bias_init: bool = False,
                      in_density: Density | str = Density.DENSE) -> LayerHyperparams:
    """``sigma``/``eta`` for one layer.

    With a sparse input the muP rules measure the input in plain l2 norm,
    so ``fan_in`` is replaced by 1; SP and NTP ignore density.
    """
    kind = PznKind(kind)
    role = LayerRole(role)
    if fan_in < 1 or fan_out < 1:
        raise ValueError("fan_in and fan_out must be >= 1")
    fan_in_eff = effective_fan_in(kind, fan_in, in_density)
    s0, e0 = pref.sigma0, pref.eta0
    ratio = fan_out / fan_in_eff
    if kind is PznKind.SPECTRAL or (kind is PznKind.MUP and (role is not LayerRole.INPUT or fan_in_eff != fan_in)):
        # target norm s0 * sqrt(ratio) over a Gaussian norm of about sigma * sqrt(max(fan_in, fan_out))
        sigma = s0 * math.sqrt(ratio) / math.sqrt(max(fan_in, fan_out))
        eta = e0 * ratio
    elif kind is PznKind.MUP:
        sigma = s0 / math.sqrt(fan_in)
        eta = e0 * ratio
    elif kind is PznKind.SP:
        sigma = s0 / math.sqrt(fan_in)
        eta = e0
    else:
        sigma = s0 / math.sqrt(fan_in)
        eta = e0 / fan_in
    # a bias is a fan_out x 1 matrix fed by a constant unit input
    sigma_b = s0 if bias_init else 0.0
    eta_b = e0 * fan_out if kind in (PznKind.SPECTRAL, PznKind.MUP) else e0
    return LayerHyperparams(sigma, eta, sigma_b, eta_b)


def layer_roles(depth: int) -> list[LayerRole]:
    if depth == 1:
        return [LayerRole.INPUT]
    return [LayerRole.INPUT] + [LayerRole.HIDDEN] * (depth - 2) + [LayerRole.OUTPUT]


def network_hyperparams(widths, kind: PznKind | str, pref: GlobalPrefactors = DEFAULT_PREFACTORS,
                        bias_init: bool = False,
                        input_density: Density | str = Density.DENSE) -> list[LayerHyperparams]:
    """Per-layer hyperparameters; only layer 1 can read a sparse input."""
    widths = list(widths)
    roles = layer_roles(len(widths) - 1)
    return [
        layer_hyperparams(kind, widths[l - 1], widths[l], pref, roles[l - 1], bias_init,
                          input_density if l == 1 else Density.DENSE)
        for l in range(1, len(widths))
    ]


def mup_mismatches(widths, pref: GlobalPrefactors = DEFAULT_PREFACTORS) -> list[tuple[int, LayerHyperparams, LayerHyperparams]]:
    """Layers where the ``MUP`` table and the general ``SPECTRAL`` rule disagree.

    Returns ``(layer, mup, spectral)`` tuples, 1-based layer index.
    """
    mup = network_hyperparams(widths, PznKind.MUP, pref)
    spec = network_hyperparams(widths, PznKind.SPECTRAL, pref)
    return [(l, a, b) for l, (a, b) in enumerate(zip(mup, spec), start=1) if a != b]


def init_mlp(config: MlpConfig, kind: PznKind | str, pref: GlobalPrefactors = DEFAULT_PREFACTORS,
             init_style: InitStyle | str = InitStyle.GAUSSIAN, seed: int = 0,
             bias_init: bool = False, input_density: Density | str = Density.DENSE) -> MlpState:
    """Sample initial weights scaled by the rule's per-layer sigma.

    The semi-orthogonal style targets the same spectral norm as the Gaussian
    one: ``sigma0 * sqrt(fan_out / fan_in)`` for the muP rules, and
    ``sigma * (sqrt(fan_in) + sqrt(fan_out))`` for SP and NTP.
    """
    kind = PznKind(kind)
    init_style = InitStyle(init_style)
    rng = np.random.default_rng(seed)
    hps = network_hyperparams(config.widths, kind, pref, bias_init, input_density)
    weights = []
    for l, ((fan_out, fan_in), hp) in enumerate(zip(config.shapes(), hps), start=1):
        if init_style is InitStyle.GAUSSIAN:
            weights.append(sample_gaussian(fan_out, fan_in, hp.sigma, rng))
        else:
            if kind in (PznKind.SPECTRAL, PznKind.MUP):
                fi = effective_fan_in(kind, fan_in, input_density if l == 1 else Density.DENSE)
                scale = pref.sigma0 * math.sqrt(fan_out / fi)
            else:
                scale = hp.sigma * (math.sqrt(fan_in) + math.sqrt(fan_out))
            weights.append(scale * sample_semi_orthogonal(fan_out, fan_in, rng))
    biases = None
    if config.use_bias:
        biases = [hp.sigma_b * rng.standard_normal(d) for d, hp in zip(config.widths[1:], hps)]
    return MlpState(config, weights, biases)


def spectral_renormalize(m, fan_in: int, fan_out: int, sigma0: float = DEFAULT_PREFACTORS.sigma0,
                         tol: float = 1e-10, max_iters: int = 100_000) -> np.ndarray:
    """Rescale ``m`` to spectral norm ``sigma0 * sqrt(fan_out / fan_in)``."""
    m = as_matrix(m)
    s = spectral_norm(m, tol=tol, max_iters=max_iters)
    if s == 0.0:
        raise ZeroMatrixError("cannot renormalize an all-zero matrix")
    return m * (sigma0 * math.sqrt(fan_out / fan_in) / s)
