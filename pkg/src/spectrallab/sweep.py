"""Width sweeps over (parametrization, width, seed) cells and power-law fits."""
from __future__ import annotations

import csv
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import linalg
from .data import Batch, load_cifar10_binary, one_hot_batch, synthetic_gaussian
from .instrumentation import METRIC_REGISTRY, MetricRecord, feature_change_ratio, measure_run, nan_metrics
from .model import Activation, MlpConfig, forward
from .optimizer import RuleKind, UpdateRule, train
from .parametrization import GlobalPrefactors, InitStyle, PznKind, init_mlp


class ConfigError(ValueError):
    pass


class NonPositiveValueError(ValueError):
    pass


class DegenerateFitError(ValueError):
    pass


class UnknownMetricError(KeyError):
    pass


@dataclass
class DataSpec:
    kind: str = "synthetic"  # synthetic | onehot | cifar
    batch_size: int = 128
    d0: int = 256  # input dim (vocab size for onehot); fixed at 3072 for cifar
    out_dim: int = 1
    path: str | None = None
    classes: tuple[int, int] = (0, 1)

    def validate(self) -> None:
        if self.kind not in ("synthetic", "onehot", "cifar"):
            raise ConfigError(f"data.kind must be synthetic, onehot or cifar, got {self.kind!r}")
        if self.batch_size < 1 or self.d0 < 1 or self.out_dim < 1:
            raise ConfigError("data.batch_size, data.d0 and data.out_dim must be >= 1")
        if self.kind == "cifar":
            if not self.path:
                raise ConfigError("data.path is required for cifar data")
            if self.out_dim != 1:
                raise ConfigError("cifar batches have out_dim 1")

    def make(self, seed: int) -> Batch:
        if self.kind == "synthetic":
            return synthetic_gaussian(self.batch_size, self.d0, seed, self.out_dim)
        if self.kind == "onehot":
            return one_hot_batch(self.batch_size, self.d0, seed, self.out_dim)
        return load_cifar10_binary(self.path, tuple(self.classes), self.batch_size, seed)


@dataclass
class SweepConfig:
    """Everything needed to reproduce a sweep. JSON config keys mirror these field names."""

    widths: list[int] = field(default_factory=lambda: [64, 128, 256, 512, 1024])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    pzn: PznKind = PznKind.MUP
    rule: RuleKind = RuleKind.SGD
    steps: int = 2000
    data: DataSpec = field(default_factory=DataSpec)
    hidden_layers: int = 2
    activation: Activation = Activation.RELU
    sigma0: float = math.sqrt(2.0)
    eta0: float = 0.1
    init_style: InitStyle = InitStyle.GAUSSIAN
    layer: int = 2  # canonical layer for one-step and assumption-3 metrics
    metrics: list[str] | None = None  # registry ids to keep; None keeps all
    record_every: int = 0  # >0 adds per-step rows with loss and feature change
    spectral_tol: float = linalg.DEFAULT_TOL
    output: str | None = None

    def __post_init__(self):
        try:
            self.pzn = PznKind(self.pzn)
            self.rule = RuleKind(self.rule)
            self.activation = Activation(self.activation)
            self.init_style = InitStyle(self.init_style)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if isinstance(self.data, dict):
            self.data = _build(DataSpec, self.data, "data.")
        self.data.classes = tuple(self.data.classes)
        self.widths = [int(w) for w in self.widths]
        self.seeds = [int(s) for s in self.seeds]

    def validate(self) -> "SweepConfig":
        if not self.widths:
            raise ConfigError("widths must not be empty")
        if any(w < 1 for w in self.widths) or any(b <= a for a, b in zip(self.widths, self.widths[1:])):
            raise ConfigError(f"widths must be positive and strictly increasing, got {self.widths}")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.hidden_layers < 0:
            raise ConfigError("hidden_layers must be >= 0")
        if not (self.sigma0 > 0 and self.eta0 > 0):
            raise ConfigError("sigma0 and eta0 must be positive")
        if not 1 <= self.layer <= self.hidden_layers + 1:
            raise ConfigError(f"layer must lie in 1..{self.hidden_layers + 1}")
        if self.spectral_tol <= 0:
            raise ConfigError("spectral_tol must be positive")
        if self.record_every < 0:
            raise ConfigError("record_every must be >= 0")
        if self.metrics is not None:
            for m in self.metrics:
                if m.split(".l")[0] not in METRIC_REGISTRY:
                    raise ConfigError(f"unknown metric {m!r}")
        self.data.validate()
        return self

    @property
    def prefactors(self) -> GlobalPrefactors:
        return GlobalPrefactors(self.sigma0, self.eta0)

    def model_widths(self, width: int, d0: int) -> tuple[int, ...]:
        return (d0,) + (width,) * self.hidden_layers + (self.data.out_dim,)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("pzn", "rule", "activation", "init_style"):
            d[k] = getattr(self, k).value
        d["data"]["classes"] = list(self.data.classes)
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "SweepConfig":
        return _build(cls, raw, "").validate()

    @classmethod
    def from_json(cls, path) -> "SweepConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{p}: top level must be an object")
        return cls.from_dict(raw)


def _build(cls, raw: dict, prefix: str):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(prefix + k for k in unknown)}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {prefix or 'config'} value: {exc}") from None


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r_squared: float
    n_points: int


def fit_slope(points) -> SlopeFit:
    """Least-squares line through ``(log width, log value)``."""
    pts = [(float(w), float(v)) for w, v in points]
    if len(pts) < 2:
        raise DegenerateFitError("a slope needs at least two points")
    if any(not (v > 0) or not math.isfinite(v) for _, v in pts):
        raise NonPositiveValueError("log-log fit needs finite positive values")
    if any(not (w > 0) for w, _ in pts):
        raise NonPositiveValueError("widths must be positive")
    x = np.log([w for w, _ in pts])
    y = np.log([v for _, v in pts])
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx == 0.0:
        raise DegenerateFitError("all points share one width")
    slope = float(xc @ (y - y.mean())) / sxx
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (intercept + slope * x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else max(0.0, 1.0 - float(resid @ resid) / ss_tot)
    return SlopeFit(slope, intercept, r2, len(pts))


@dataclass(frozen=True)
class AggregateRow:
    width: int
    mean: float
    std: float
    n_seeds: int


def aggregate(records, metric: str) -> list[AggregateRow]:
    """Per-width mean and sample standard deviation (n-1) over seeds; non-finite values are skipped."""
    records = list(records)
    if not records:
        raise ValueError("no records to aggregate")
    if not any(metric in r.values for r in records):
        raise UnknownMetricError(metric)
    by_width: dict[int, list[float]] = {}
    for r in records:
        by_width.setdefault(r.width, [])
        v = r.values.get(metric, math.nan)
        if math.isfinite(v):
            by_width[r.width].append(v)
    rows = []
    for w in sorted(by_width):
        vals = by_width[w]
        n = len(vals)
        mean = float(np.mean(vals)) if n else math.nan
        std = float(np.std(vals, ddof=1)) if n > 1 else (0.0 if n == 1 else math.nan)
        rows.append(AggregateRow(w, mean, std, n))
    return rows


def fit_metric(records, metric: str, min_width: int = 0) -> SlopeFit:
    """Slope of the per-width seed means of ``metric``."""
    rows = [r for r in aggregate(records, metric) if r.width >= min_width and r.n_seeds > 0]
    return fit_slope([(r.width, r.mean) for r in rows])


def final_records(records) -> list[MetricRecord]:
    """Keep only the end-of-training row of each (width, seed) cell."""
    last: dict[tuple[int, int], MetricRecord] = {}
    for r in records:
        key = (r.width, r.seed)
        if key not in last or r.step >= last[key].step:
            last[key] = r
    return [last[k] for k in sorted(last)]


def run_cell(cfg: SweepConfig, width: int, seed: int) -> list[MetricRecord]:
    """Train one network and measure it. Returns per-step rows (if any) then the final row."""
    batch = cfg.data.make(seed)
    widths = cfg.model_widths(width, batch.input_dim)
    mcfg = MlpConfig(widths, cfg.activation)
    state = init_mlp(mcfg, cfg.pzn, cfg.prefactors, cfg.init_style, seed, input_density=batch.density)
    rule = UpdateRule.from_parametrization(widths, cfg.pzn, cfg.prefactors, cfg.rule, batch.density)
    kw = {"tol": cfg.spectral_tol}
    rec0 = forward(state, batch.inputs)
    out0 = rec0.output.copy()
    extra: dict[str, float] = {}
    rows: list[MetricRecord] = []

    def recorder(step, st, deltas, loss):
        if step == 1:
            out1 = forward(st, batch.inputs).output
            extra["output_change_first_step"] = float(np.mean(np.linalg.norm(out1 - out0, axis=1)))
        if cfg.record_every and step % cfg.record_every == 0:
            rec_t = forward(st, batch.inputs)
            rows.append(MetricRecord(width, seed, step, {
                "loss": loss,
                f"feature_change_ratio.l{cfg.layer}": feature_change_ratio(rec0, rec_t, cfg.layer),
            }))

    result = train(state, batch, rule, cfg.steps, recorder=recorder)
    if cfg.steps == 0:
        extra["output_change_first_step"] = 0.0
    if result.diverged:
        values = nan_metrics(mcfg.depth)
        values.update(extra)
        final = MetricRecord(width, seed, result.diverged_step, values, f"diverged@{result.diverged_step}")
    else:
        failures: list = []
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", linalg.NonConvergenceWarning)
            values = measure_run(state, batch, cfg.layer, extra, failures, **kw)
        flag_list = []
        if any(issubclass(w.category, linalg.NonConvergenceWarning) for w in caught):
            flag_list.append("nonconverged")
        if failures:
            flag_list.append("degenerate:" + "|".join(k for k, _ in failures))
        flags = ";".join(flag_list)
        final = MetricRecord(width, seed, cfg.steps, values, flags)
    if cfg.metrics is not None:
        keep = set(cfg.metrics)
        for r in rows + [final]:
            r.values = {k: v for k, v in r.values.items() if k in keep or k.split(".l")[0] in keep}
    return rows + [final]


def _run_cell_args(args):
    return run_cell(*args)


def run_sweep(cfg: SweepConfig, jobs: int = 1) -> list[MetricRecord]:
    """All (width, seed) cells, sorted by (width, seed, step) whatever the completion order."""
    cfg.validate()
    cells = [(cfg, w, s) for w in cfg.widths for s in cfg.seeds]
    if jobs <= 1 or len(cells) == 1:
        results = [run_cell(*c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(cells))) as pool:
            results = list(pool.map(_run_cell_args, cells))
    records = [r for rs in results for r in rs]
    records.sort(key=lambda r: (r.width, r.seed, r.step))
    return records


def _fmt(v: float) -> str:
    return repr(float(v))


def write_csv(records, path, label: str = "") -> None:
    records = list(records)
    cols = sorted({k for r in records for k in r.values})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pzn", "width", "seed", "step", "flags"] + cols)
        for r in records:
            w.writerow([label, r.width, r.seed, r.step, r.flags] + [_fmt(r.values.get(c, math.nan)) for c in cols])


def read_csv(path) -> list[MetricRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            vals = {k: float(v) for k, v in row.items() if k not in ("pzn", "width", "seed", "step", "flags")}
            out.append(MetricRecord(int(row["width"]), int(row["seed"]), int(row["step"]), vals, row["flags"]))
    return out


def summarize(records, cfg: SweepConfig | None = None) -> dict:
    """Per-metric seed aggregates and slope fits over the final rows."""
    finals = final_records(records)
    ids = sorted({k for r in finals for k in r.values})
    summary: dict = {"config": cfg.to_dict() if cfg else None, "diverged": [
        {"width": r.width, "seed": r.seed, "flags": r.flags} for r in finals if r.flags.startswith("diverged")
    ], "metrics": {}}
    for m in ids:
        rows = aggregate(finals, m)
        entry = {
            "widths": [r.width for r in rows],
            "mean": [r.mean for r in rows],
            "std": [r.std for r in rows],
            "n_seeds": [r.n_seeds for r in rows],
            "fit": None,
        }
        try:
            entry["fit"] = asdict(fit_slope([(r.width, r.mean) for r in rows if r.n_seeds > 0]))
        except (DegenerateFitError, NonPositiveValueError) as exc:
            entry["fit_error"] = str(exc)
        summary["metrics"][m] = entry
    return summary


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def write_outputs(records, cfg: SweepConfig, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "records.csv"
    json_path = out / "summary.json"
    write_csv(records, csv_path, cfg.pzn.value)
    json_path.write_text(json.dumps(_json_safe(summarize(records, cfg)), indent=2, sort_keys=True) + "\n")
    return csv_path, json_path


def default_jobs() -> int:
    return os.cpu_count() or 1
