"""Pathwise decomposition of a trained network's output.

Each subset ``B`` of layers picks, per layer, either the initial weights or
the cumulative update; its contribution ``f_B(x)`` is isolated by
inclusion-exclusion over the partially-updated networks. For a linear network
this equals the plain product of the chosen factors.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from .data import Batch, synthetic_gaussian
from .linalg import spectral_norm
from .model import Activation, MlpConfig, MlpState, forward
from .optimizer import UpdateRule, train
from .parametrization import DEFAULT_PREFACTORS, GlobalPrefactors, PznKind, init_mlp

MAX_DEPTH = 20
LEADING_ORDER_SLOPE = -0.15
MAXIMALITY_RATIO = 0.05
CLASSES = ("0", "1", ">1")


class NonlinearModelError(ValueError):
    pass


class SlopeUndefinedError(ValueError):
    pass


def _subset(subset, depth: int) -> frozenset[int]:
    """Accept an iterable of 1-based layer indices or an integer bitmask (bit l-1 is layer l)."""
    if depth > MAX_DEPTH:
        raise ValueError(f"path enumeration is limited to depth {MAX_DEPTH}")
    if isinstance(subset, (int, np.integer)):
        if subset < 0 or subset >= 1 << depth:
            raise ValueError(f"bitmask {subset} out of range for depth {depth}")
        return frozenset(l for l in range(1, depth + 1) if subset >> (l - 1) & 1)
    s = frozenset(int(l) for l in subset)
    if any(l < 1 or l > depth for l in s):
        raise ValueError(f"layer indices must lie in 1..{depth}")
    return s


def all_subsets(depth: int) -> list[frozenset[int]]:
    return [_subset(mask, depth) for mask in range(1 << depth)]


def cardinality_class(subset) -> str:
    n = len(subset)
    return "0" if n == 0 else "1" if n == 1 else ">1"


def _require_linear(state: MlpState) -> None:
    if state.config.activation is not Activation.LINEAR:
        raise NonlinearModelError("closed-form paths need a linear network")
    if state.biases is not None:
        raise NonlinearModelError("closed-form paths need a bias-free network")


def path_factors(state: MlpState, subset, deltas=None) -> list[np.ndarray]:
    """``W_l^0`` for layers outside ``subset`` and ``dW_l`` inside it."""
    s = _subset(subset, state.depth)
    deltas = state.weight_deltas() if deltas is None else deltas
    return [deltas[l - 1] if l in s else state.init_weights[l - 1] for l in range(1, state.depth + 1)]


def path_contribution(state: MlpState, x, subset, deltas=None) -> np.ndarray:
    """Product of the path's factors applied to ``x`` (linear networks only)."""
    _require_linear(state)
    h = np.asarray(x, dtype=np.float64)
    for m in path_factors(state, subset, deltas):
        h = h @ m.T
    return h


def partial_update_output(state: MlpState, x, subset, deltas=None) -> np.ndarray:
    """Network output when only the layers in ``subset`` carry their updates."""
    s = _subset(subset, state.depth)
    deltas = state.weight_deltas() if deltas is None else deltas
    weights = [w0 + dw if l in s else w0
               for l, (w0, dw) in enumerate(zip(state.init_weights, deltas), start=1)]
    return forward(state.with_weights(weights, state.init_biases), x).output


def inclusion_exclusion_contribution(state: MlpState, x, subset, deltas=None) -> np.ndarray:
    """Joint contribution of ``subset`` by inclusion-exclusion.

    Works for any activation; for nonlinear networks the decomposition is
    exact but individual terms have no product form (experimental).
    """
    s = sorted(_subset(subset, state.depth))
    total = None
    for k in range(len(s) + 1):
        for sub in itertools.combinations(s, k):
            term = partial_update_output(state, x, sub, deltas)
            term = term if (len(s) - k) % 2 == 0 else -term
            total = term if total is None else total + term
    return total


def maximality_ratio(state: MlpState, x, subset, deltas=None, **kw) -> np.ndarray | float:
    """``||f_B(x)|| / (prod_l ||W_l^(B)||_* * ||x||)``; one value per input row."""
    factors = path_factors(state, subset, deltas)
    bound = reduce(lambda a, m: a * spectral_norm(m, **kw), factors, 1.0)
    out = path_contribution(state, x, subset, deltas)
    x = np.asarray(x, dtype=np.float64)
    num = np.linalg.norm(np.atleast_2d(out), axis=1)
    den = bound * np.linalg.norm(np.atleast_2d(x), axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return float(r[0]) if np.ndim(x) == 1 else r


def path_maximality(state: MlpState, x, subset, deltas=None, threshold: float = MAXIMALITY_RATIO, **kw) -> bool:
    """Whether the path reaches a fixed fraction of its spectral-norm bound on input ``x``."""
    return bool(maximality_ratio(state, np.asarray(x, dtype=np.float64).reshape(-1), subset, deltas, **kw) >= threshold)


@dataclass
class PathEntry:
    subset: frozenset[int]
    norm: float
    ratio: float
    maximal: bool

    @property
    def mask(self) -> int:
        return sum(1 << (l - 1) for l in self.subset)

    @property
    def label(self) -> str:
        return "{" + ",".join(str(l) for l in sorted(self.subset)) + "}"


@dataclass
class PathReport:
    """Per-path mean output norms over a batch, with cardinality-class aggregates.

    A class aggregate is the sum of its members' mean norms.
    """

    width: int
    entries: list[PathEntry]
    total_error: float
    class_norms: dict[str, float] = field(default_factory=dict)
    leading_order: dict[str, bool] = field(default_factory=dict)

    def entry(self, subset) -> PathEntry:
        s = frozenset(subset)
        return next(e for e in self.entries if e.subset == s)


def path_report(state: MlpState, x, width: int | None = None, threshold: float = MAXIMALITY_RATIO,
                **kw) -> PathReport:
    _require_linear(state)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    deltas = state.weight_deltas()
    entries = []
    total = np.zeros((x.shape[0], state.config.widths[-1]))
    for s in all_subsets(state.depth):
        f = path_contribution(state, x, s, deltas)
        total += f
        ratio = maximality_ratio(state, x, s, deltas, **kw)
        entries.append(PathEntry(s, float(np.mean(np.linalg.norm(f, axis=1))), float(np.mean(ratio)),
                                 bool(np.mean(ratio) >= threshold)))
    direct = forward(state, x).output
    err = float(np.max(np.abs(total - direct)) / max(1.0, float(np.max(np.abs(direct)))))
    classes = {c: sum(e.norm for e in entries if cardinality_class(e.subset) == c) for c in CLASSES}
    return PathReport(width if width is not None else state.config.widths[1], entries, err, classes)


@dataclass
class PathSweepResult:
    kind: PznKind
    reports: list[PathReport]
    slopes: dict[str, "object"]
    leading_order: dict[str, bool]


def train_linear_net(width: int, kind: PznKind | str, steps: int, seed: int = 0, d0: int = 64,
                     batch_size: int = 8, depth: int = 3, pref: GlobalPrefactors = DEFAULT_PREFACTORS,
                     batch: Batch | None = None) -> tuple[MlpState, Batch]:
    widths = (d0,) + (width,) * (depth - 1) + (1,)
    cfg = MlpConfig(widths, Activation.LINEAR)
    batch = batch if batch is not None else synthetic_gaussian(batch_size, d0, seed)
    state = init_mlp(cfg, kind, pref, seed=seed)
    result = train(state, batch, UpdateRule.from_parametrization(widths, kind, pref), steps)
    if result.diverged:
        raise FloatingPointError(f"training diverged at step {result.diverged_step} (width {width})")
    return state, batch


def path_scaling_sweep(widths, kind: PznKind | str, steps: int = 200, seed: int = 0, d0: int = 256,
                       batch_size: int = 128, depth: int = 3, pref: GlobalPrefactors = DEFAULT_PREFACTORS,
                       threshold: float = MAXIMALITY_RATIO,
                       leading_slope: float = LEADING_ORDER_SLOPE) -> PathSweepResult:
    """Train one linear net per width and fit each cardinality class's width scaling."""
    from .sweep import fit_slope

    widths = list(widths)
    if len(widths) < 2:
        raise SlopeUndefinedError("a slope needs at least two widths")
    kind = PznKind(kind)
    batch = synthetic_gaussian(batch_size, d0, seed)
    reports = []
    for w in widths:
        state, _ = train_linear_net(w, kind, steps, seed, d0, batch_size, depth, pref, batch)
        reports.append(path_report(state, batch.inputs, w, threshold))
    slopes, leading = {}, {}
    for c in CLASSES:
        fit = fit_slope([(r.width, r.class_norms[c]) for r in reports])
        slopes[c] = fit
        leading[c] = fit.slope >= leading_slope
    for r in reports:
        r.leading_order = dict(leading)
    return PathSweepResult(kind, reports, slopes, leading)


def write_path_csv(result: PathSweepResult, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pzn", "width", "subset", "mask", "cardinality", "norm", "ratio", "leading_order", "maximal"])
        for r in result.reports:
            for e in r.entries:
                c = cardinality_class(e.subset)
                w.writerow([result.kind.value, r.width, e.label, e.mask, len(e.subset), repr(e.norm),
                            repr(e.ratio), int(result.leading_order[c]), int(e.maximal)])


def maximality_table(result: PathSweepResult, width: int | None = None) -> dict[str, bool]:
    """Whether every path in each class is maximal at ``width`` (largest swept width by default)."""
    rep = result.reports[-1] if width is None else next(r for r in result.reports if r.width == width)
    return {c: all(e.maximal for e in rep.entries if cardinality_class(e.subset) == c) for c in CLASSES}
