"""Fast property checks over the core numerics, run by ``spectrallab selftest``.

Each check returns ``(passed, detail)``; everything is seeded and finishes in
a few seconds.
"""
from __future__ import annotations

import math
import sys
import time
from typing import Callable

import numpy as np

from .data import synthetic_gaussian
from .linalg import alignment, l2_norm, spectral_norm, stable_rank
from .model import Activation, MlpConfig, batch_forward_backward
from .optimizer import RuleKind, UpdateRule, apply_update, compute_deltas
from .parametrization import PznKind, init_mlp, layer_hyperparams
from .paths import all_subsets, path_contribution

TIGHT = dict(tol=1e-14, max_iters=200_000)


def check_spectral_norm() -> tuple[bool, str]:
    r = np.random.default_rng(0)
    worst = 0.0
    for _ in range(20):
        m = r.standard_normal(tuple(r.integers(1, 40, size=2)))
        ref = np.linalg.svd(m, compute_uv=False)[0]
        worst = max(worst, abs(spectral_norm(m, **TIGHT) - ref) / ref)
    return worst <= 1e-8, f"max rel err {worst:.2e}"


def check_alignment_proposition() -> tuple[bool, str]:
    r = np.random.default_rng(1)
    worst = 0.0
    for _ in range(50):
        a, b, c, d = r.integers(1, 12, size=4)
        p, q, s = r.standard_normal((a, b)), r.standard_normal((b, c)), r.standard_normal((c, d))
        apq = alignment(p, q, **TIGHT)
        errs = [
            max(0.0, -apq, apq - 1.0),
            abs(alignment(p, p.T, **TIGHT) - 1.0),
            abs(apq * alignment(p @ q, s, **TIGHT) - alignment(p, q @ s, **TIGHT) * alignment(q, s, **TIGHT)),
            max(0.0, apq - alignment(p.T, p @ q, **TIGHT)),
        ]
        worst = max(worst, *errs)
    return worst <= 1e-8, f"max violation {worst:.2e}"


def check_batch_one_alignment() -> tuple[bool, str]:
    worst = 0.0
    for seed in range(10):
        widths = (12, 20, 16, 3)
        state = init_mlp(MlpConfig(widths, Activation.TANH), PznKind.MUP, seed=seed)
        b = synthetic_gaussian(1, widths[0], seed, widths[-1])
        _, grads, rec = batch_forward_backward(state, b.inputs, b.targets)
        deltas = apply_update(state, grads, UpdateRule.from_parametrization(widths, PznKind.MUP))
        for l, dw in enumerate(deltas, start=1):
            h = rec.postacts[l - 1][0]
            worst = max(worst, abs(l2_norm(dw @ h) / (spectral_norm(dw, **TIGHT) * l2_norm(h)) - 1.0))
    return worst <= 1e-8, f"max |A - 1| {worst:.2e}"


def check_gradients() -> tuple[bool, str]:
    r = np.random.default_rng(2)
    worst = 0.0
    for act in Activation:
        widths = tuple(int(w) for w in r.integers(2, 9, size=4))
        state = init_mlp(MlpConfig(widths, act), PznKind.NTP, seed=3)
        x, y = r.standard_normal((3, widths[0])), r.standard_normal((3, widths[-1]))
        _, grads, _ = batch_forward_backward(state, x, y)
        for l, g in enumerate(grads.weight_grads):
            fd = np.zeros_like(g)
            for idx in np.ndindex(g.shape):
                ws = [w.copy() for w in state.weights]
                ws[l][idx] += 1e-6
                up = batch_forward_backward(state.with_weights(ws), x, y)[0]
                ws[l][idx] -= 2e-6
                down = batch_forward_backward(state.with_weights(ws), x, y)[0]
                fd[idx] = (up - down) / 2e-6
            worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(g), 1e-8))
    return worst <= 1e-5, f"max rel err {worst:.2e}"


def check_spectral_update_rule() -> tuple[bool, str]:
    widths = (24, 48, 32, 2)
    state = init_mlp(MlpConfig(widths), PznKind.SPECTRAL, seed=4)
    b = synthetic_gaussian(16, widths[0], 4, widths[-1])
    _, grads, _ = batch_forward_backward(state, b.inputs, b.targets)
    deltas = compute_deltas(state, grads, UpdateRule(RuleKind.SPECTRAL, eta0=0.1), spectral_tol=1e-12)
    worst = max(abs(spectral_norm(dw, **TIGHT) / (0.1 * math.sqrt(fo / fi)) - 1.0)
                for dw, (fo, fi) in zip(deltas, MlpConfig(widths).shapes()))
    return worst <= 1e-4, f"max rel err {worst:.2e}"


def check_sign_update_rank() -> tuple[bool, str]:
    widths = (16, 32, 32, 1)
    state = init_mlp(MlpConfig(widths), PznKind.MUP, seed=5)
    b = synthetic_gaussian(1, widths[0], 5)
    _, grads, _ = batch_forward_backward(state, b.inputs, b.targets)
    deltas = compute_deltas(state, grads, UpdateRule(RuleKind.SIGN, etas=(1.0, 1.0, 1.0)))
    worst = max(abs(stable_rank(dw, **TIGHT) - 1.0) for dw in deltas if dw.any())
    return worst <= 1e-6, f"max |srank - 1| {worst:.2e}"


def check_unit_width_equivalence() -> tuple[bool, str]:
    ref = layer_hyperparams(PznKind.SPECTRAL, 1, 1)
    same = all(layer_hyperparams(k, 1, 1, role=role) == ref
               for k in PznKind for role in ("input", "hidden", "output"))
    return same, "sigma/eta identical at fan_in = fan_out = 1" if same else "kinds disagree at unit width"


def check_path_identity() -> tuple[bool, str]:
    widths = (6, 10, 8, 2)
    state = init_mlp(MlpConfig(widths, Activation.LINEAR), PznKind.MUP, seed=6)
    b = synthetic_gaussian(4, widths[0], 6, widths[-1])
    rule = UpdateRule.from_parametrization(widths, PznKind.MUP)
    for _ in range(5):
        _, grads, _ = batch_forward_backward(state, b.inputs, b.targets)
        apply_update(state, grads, rule)
    total = sum(path_contribution(state, b.inputs, s) for s in all_subsets(state.depth))
    direct = batch_forward_backward(state, b.inputs, b.targets)[2].output
    err = float(np.max(np.abs(total - direct)))
    return err <= 1e-8, f"max abs err {err:.2e}"


CHECKS: dict[str, Callable[[], tuple[bool, str]]] = {
    "spectral-norm": check_spectral_norm,
    "alignment-proposition": check_alignment_proposition,
    "batch-one-alignment": check_batch_one_alignment,
    "gradients": check_gradients,
    "spectral-update-rule": check_spectral_update_rule,
    "sign-update-rank": check_sign_update_rank,
    "unit-width-equivalence": check_unit_width_equivalence,
    "path-identity": check_path_identity,
}


def run_selftest(out=sys.stdout) -> bool:
    """Run every check, print one line each, return whether all passed."""
    ok = True
    for name, fn in CHECKS.items():
        t0 = time.perf_counter()
        try:
            passed, detail = fn()
        except Exception as exc:  # a crash is a failed check, not an aborted run
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name:<24} {detail}  ({time.perf_counter() - t0:.2f}s)", file=out)
    return ok
