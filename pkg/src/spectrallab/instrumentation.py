"""Spectral diagnostics of a network before and after training.

Expectations over inputs are plain means over the rows of a batched
:class:`~spectrallab.model.ActivationRecord`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import Density, ZeroMatrixError, natural_spectral_norm, spectral_norm, stable_rank
from .model import ActivationRecord, GradientRecord, MlpState, batch_forward_backward


class ZeroVectorError(ValueError):
    pass


@dataclass(frozen=True)
class MetricInfo:
    description: str
    panel: str
    per_layer: bool = False


# Stable public ids, used as CSV column names (per-layer ids get a ".l<layer>" suffix).
METRIC_REGISTRY: dict[str, MetricInfo] = {
    "feature_change_ratio": MetricInfo("mean ||h_l - h_l^0|| / ||h_l^0||", "fig2.A", True),
    "weight_change_spectral": MetricInfo("||W_l - W_l^0||_* / ||W_l^0||_*", "fig2.B", True),
    "final_layer_alignment": MetricInfo("mean ||W_L h'|| / (||W_L||_* ||h'||) after training", "fig2.C"),
    "final_layer_alignment_init": MetricInfo("final-layer alignment at initialization", "fig2.C-init"),
    "weight_change_frobenius": MetricInfo("||W_l - W_l^0||_F / ||W_l^0||_F", "fig2.D", True),
    "update_stable_rank": MetricInfo("stable rank of one batch gradient step", "fig1.left"),
    "update_alignment": MetricInfo("mean ||dW h'|| / (||dW||_* ||h'||) for one step", "fig1.right"),
    "srank_H": MetricInfo("stable rank of stacked inputs to the layer", "app-exp.forward-srank"),
    "srank_G": MetricInfo("stable rank of stacked preactivation gradients", "app-exp.backward-srank"),
    "assumption1_w": MetricInfo("||W^0 + dW||_* / (||W^0||_* + ||dW||_*)", "assumption1.weights", True),
    "assumption1_h": MetricInfo("mean ||h^0 + dh|| / (||h^0|| + ||dh||)", "assumption1.features", True),
    "assumption2": MetricInfo("mean ||h'_l|| / ||h_l|| after training", "assumption2", True),
    "assumption3": MetricInfo("mean ||dW^(i) h_i / B|| / ||dW h_i|| for a step at the trained weights", "assumption3"),
    "assumption3_init": MetricInfo("assumption3 ratio for the first step", "assumption3-init"),
    "natural_spectral_W": MetricInfo("natural spectral norm of W_l", "natural-norms.W", True),
    "natural_spectral_dW": MetricInfo("natural spectral norm of W_l - W_l^0", "natural-norms.dW", True),
    "signsgd_stable_rank": MetricInfo("stable rank of sign(gradient) for one step", "entrywise-rank"),
    "update_grad_alignment": MetricInfo("mean |<g_l, dh_l>| / (||g_l|| ||dh_l||) for one step", "corollary.grad-update"),
    "output_change_first_step": MetricInfo("mean ||h_L^1 - h_L^0|| after the first step", "sp-blowup"),
    "loss": MetricInfo("final training loss", "loss"),
}


def metric_id(base: str, layer: int | None = None) -> str:
    if base not in METRIC_REGISTRY:
        raise KeyError(f"unknown metric {base!r}")
    return f"{base}.l{layer}" if METRIC_REGISTRY[base].per_layer else base


@dataclass
class MetricRecord:
    width: int
    seed: int
    step: int
    values: dict[str, float] = field(default_factory=dict)
    flags: str = ""


def _rows(a: np.ndarray) -> np.ndarray:
    return np.atleast_2d(a)


def _row_norms(a: np.ndarray) -> np.ndarray:
    return np.linalg.norm(_rows(a), axis=1)


def feature_change_ratio(rec0: ActivationRecord, rec_t: ActivationRecord, layer: int) -> float:
    h0 = _rows(rec0.preacts[layer])
    ht = _rows(rec_t.preacts[layer])
    base = _row_norms(h0)
    if np.any(base == 0.0):
        raise ZeroVectorError(f"initial features at layer {layer} vanish for some input")
    return float(np.mean(_row_norms(ht - h0) / base))


def weight_change_spectral(w0, w, **kw) -> float:
    w0 = np.asarray(w0)
    return spectral_norm(np.asarray(w) - w0, **kw) / spectral_norm(w0, **kw)


def weight_change_frobenius(w0, w) -> float:
    w0 = np.asarray(w0)
    return float(np.linalg.norm(np.asarray(w) - w0) / np.linalg.norm(w0))


def _input_alignment(m: np.ndarray, h: np.ndarray, **kw) -> float:
    h = _rows(h)
    hn = _row_norms(h)
    if np.any(hn == 0.0):
        raise ZeroVectorError("an input vector vanishes")
    s = spectral_norm(m, **kw)
    if s == 0.0:
        raise ZeroMatrixError("alignment with an all-zero matrix")
    return float(np.mean(_row_norms(h @ m.T) / (s * hn)))


def final_layer_alignment(state: MlpState, rec: ActivationRecord, **kw) -> float:
    L = state.depth
    return _input_alignment(state.weights[L - 1], rec.postacts[L - 1], **kw)


def update_alignment(dw, rec: ActivationRecord, layer: int, **kw) -> float:
    """How well a step ``dw`` at ``layer`` aligns with that layer's inputs ``h'_{layer-1}``."""
    return _input_alignment(np.asarray(dw), rec.postacts[layer - 1], **kw)


def update_stable_rank(dw, **kw) -> float:
    return stable_rank(dw, **kw)


def forward_backward_sranks(rec: ActivationRecord, grads: GradientRecord, layer: int, **kw) -> tuple[float, float]:
    """Stable ranks of ``H' = [h'_{l-1}(x_i)]`` and ``G = [g_l(x_i)]`` (columns are examples)."""
    h = _rows(rec.postacts[layer - 1]).T
    g = _rows(grads.preact_grads[layer]).T
    return stable_rank(h, **kw), stable_rank(g, **kw)


def assumption1_weights(w0, dw, **kw) -> float:
    w0 = np.asarray(w0)
    dw = np.asarray(dw)
    return spectral_norm(w0 + dw, **kw) / (spectral_norm(w0, **kw) + spectral_norm(dw, **kw))


def assumption1_features(rec0: ActivationRecord, rec_t: ActivationRecord, layer: int) -> float:
    h0 = _rows(rec0.preacts[layer])
    ht = _rows(rec_t.preacts[layer])
    return float(np.mean(_row_norms(ht) / (_row_norms(h0) + _row_norms(ht - h0))))


def assumption2(rec: ActivationRecord, layer: int) -> float:
    pre = _row_norms(rec.preacts[layer])
    if np.any(pre == 0.0):
        raise ZeroVectorError(f"preactivation at layer {layer} vanishes")
    return float(np.mean(_row_norms(rec.postacts[layer]) / pre))


def assumption3(rec: ActivationRecord, grads: GradientRecord, layer: int) -> float:
    """Mean over examples of ``||dW^(i) h_i / B|| / ||dW h_i||``.

    ``dW^(i)`` is example ``i``'s own step and ``dW`` the batch-mean step;
    the learning rate cancels.
    """
    h = _rows(rec.postacts[layer - 1])
    g = _rows(grads.preact_grads[layer])
    n = h.shape[0]
    gram = h @ h.T
    own = _row_norms(g) * np.diag(gram) / n
    full = np.linalg.norm(gram @ g, axis=1) / n
    if np.any(full == 0.0):
        raise ZeroVectorError("batch step annihilates an input")
    return float(np.mean(own / full))


@dataclass(frozen=True)
class AssumptionChecks:
    a1_weights: float
    a1_features: float
    a2: float
    a3: float


def assumption_checks(state: MlpState, rec0: ActivationRecord, rec_t: ActivationRecord,
                      grads: GradientRecord, layer: int = 2, **kw) -> AssumptionChecks:
    """All three checks at one layer; ``grads`` is a batch step taken at ``state``."""
    w0 = state.init_weights[layer - 1]
    return AssumptionChecks(
        assumption1_weights(w0, state.weights[layer - 1] - w0, **kw),
        assumption1_features(rec0, rec_t, layer),
        assumption2(rec_t, layer),
        assumption3(rec_t, grads, layer),
    )


def update_grad_alignment(g, dh) -> float:
    """``|<g, dh>| / (||g|| ||dh||)``, averaged over rows when batched."""
    g = _rows(np.asarray(g, dtype=np.float64))
    dh = _rows(np.asarray(dh, dtype=np.float64))
    den = _row_norms(g) * _row_norms(dh)
    if np.any(den == 0.0):
        raise ZeroVectorError("gradient or feature update vanishes")
    return float(np.mean(np.abs(np.sum(g * dh, axis=1)) / den))


def natural_spectral_norms(mats, input_density: Density = Density.DENSE, **kw) -> list[float]:
    """Natural spectral norm per layer; only the first layer may read a sparse input."""
    out = []
    for l, m in enumerate(mats, start=1):
        dens = input_density if l == 1 else Density.DENSE
        out.append(natural_spectral_norm(m, dens, Density.DENSE, **kw))
    return out


def measure_run(state: MlpState, batch, layer: int = 2, first_step: dict | None = None,
                failures: list | None = None, **kw) -> dict[str, float]:
    """All registry metrics for a trained ``state`` against its own initial snapshot.

    ``first_step`` may carry values gathered during training (such as
    ``output_change_first_step``); they are copied in unchanged. A metric whose
    inputs are degenerate (a dead layer, a zero update) is stored as NaN and its
    id and reason are appended to ``failures`` when given.
    """
    L = state.depth
    init = state.initial()
    x, y = batch.inputs, batch.targets
    _, grads0, rec0 = batch_forward_backward(init, x, y)
    loss_t, grads_t, rec_t = batch_forward_backward(state, x, y)
    deltas = state.weight_deltas()
    out: dict[str, float] = {"loss": loss_t}

    def put(key, fn, *args, **kwargs):
        try:
            out[key] = fn(*args, **kwargs)
        except (ZeroVectorError, ZeroMatrixError) as exc:
            out[key] = math.nan
            if failures is not None:
                failures.append((key, str(exc)))

    for l in range(1, L + 1):
        w0, w = state.init_weights[l - 1], state.weights[l - 1]
        changed = bool(np.any(deltas[l - 1]))
        put(metric_id("feature_change_ratio", l), feature_change_ratio, rec0, rec_t, l)
        put(metric_id("weight_change_spectral", l), weight_change_spectral, w0, w, **kw)
        put(metric_id("weight_change_frobenius", l), weight_change_frobenius, w0, w)
        put(metric_id("assumption1_w", l), assumption1_weights, w0, deltas[l - 1], **kw)
        put(metric_id("assumption1_h", l), assumption1_features, rec0, rec_t, l)
        if l < L:
            put(metric_id("assumption2", l), assumption2, rec_t, l)
        dens = batch.density if l == 1 else Density.DENSE
        put(metric_id("natural_spectral_W", l), natural_spectral_norm, w, dens, Density.DENSE, **kw)
        if changed:
            put(metric_id("natural_spectral_dW", l), natural_spectral_norm, deltas[l - 1], dens, Density.DENSE, **kw)
        else:
            out[metric_id("natural_spectral_dW", l)] = 0.0

    put("final_layer_alignment", final_layer_alignment, state, rec_t, **kw)
    put("final_layer_alignment_init", final_layer_alignment, init, rec0, **kw)

    # one-step quantities at initialization; the step direction is -grad
    g0 = grads0.weight_grads[layer - 1]
    put("update_stable_rank", update_stable_rank, g0, **kw)
    put("update_alignment", update_alignment, g0, rec0, layer, **kw)
    try:
        out["srank_H"], out["srank_G"] = forward_backward_sranks(rec0, grads0, layer, **kw)
    except ZeroMatrixError as exc:
        out["srank_H"] = out["srank_G"] = math.nan
        if failures is not None:
            failures.append(("srank_H", str(exc)))
    put("signsgd_stable_rank", update_stable_rank, np.sign(g0), **kw)
    put("assumption3_init", assumption3, rec0, grads0, layer)
    put("assumption3", assumption3, rec_t, grads_t, layer)
    # feature change from a small step of W_layer alone, against the incoming gradient
    dh = -_rows(rec0.postacts[layer - 1]) @ g0.T
    put("update_grad_alignment", update_grad_alignment, grads0.preact_grads[layer], dh)
    if first_step:
        out.update(first_step)
    return out


def nan_metrics(depth: int) -> dict[str, float]:
    """Placeholder row for runs that produced no usable state."""
    out = {}
    for base, info in METRIC_REGISTRY.items():
        if info.per_layer:
            for l in range(1, depth + 1):
                if base == "assumption2" and l == depth:
                    continue
                out[metric_id(base, l)] = math.nan
        else:
            out[base] = math.nan
    return out
