"""Detection metrics, the SNR sweep and the thread-scaling benchmark."""

import csv
import json
import logging
import statistics
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dataset import BENCHMARK_DURATIONS, generate_benchmark_audio, load_manifest
from .exceptions import InvalidInputError, WheezeNMFError
from .pipeline import STAGES, PipelineConfig, analyze

logger = logging.getLogger(__name__)

DEFAULT_SNR_GRID = (-10.0, -5.0, 0.0, 5.0, 10.0)
MEAN_KIND = "mean"
NA = "NA"

EXPERIMENT_HEADER = ("noise_kind", "snr_db", "tp", "fn", "fp", "tn", "se", "sp", "acc", "n_failed")
BENCH_HEADER = ("stage", "duration_s", "threads", "wall_time_s", "speedup", "efficiency")


@dataclass(frozen=True)
class ConfusionCounts:
    """Contingency counts with wheeze as the positive class.

    The percentage properties return ``None`` when their denominator is zero.
    """

    tp: int = 0
    fn: int = 0
    fp: int = 0
    tn: int = 0

    def __post_init__(self):
        for name in ("tp", "fn", "fp", "tn"):
            value = getattr(self, name)
            if int(value) != value or value < 0:
                raise InvalidInputError(f"{name} must be a non-negative integer, got {value!r}")
            object.__setattr__(self, name, int(value))

    def __add__(self, other):
        return ConfusionCounts(self.tp + other.tp, self.fn + other.fn, self.fp + other.fp, self.tn + other.tn)

    @property
    def total(self):
        return self.tp + self.fn + self.fp + self.tn

    @property
    def se(self):
        pos = self.tp + self.fn
        return 100.0 * self.tp / pos if pos else None

    @property
    def sp(self):
        neg = self.tn + self.fp
        return 100.0 * self.tn / neg if neg else None

    @property
    def acc(self):
        return 100.0 * (self.tp + self.tn) / self.total if self.total else None


def _as_binary(values, name):
    out = []
    for v in values:
        if isinstance(v, str):
            if v not in ("wheeze", "normal"):
                raise InvalidInputError(f"{name}: unknown label {v!r}")
            v = int(v == "wheeze")
        if v not in (0, 1):
            raise InvalidInputError(f"{name} entries must be binary, got {v!r}")
        out.append(int(v))
    return np.array(out, dtype=int)


def score(predictions, labels):
    """Count outcomes; labels may be 0/1 or ``"wheeze"``/``"normal"``."""
    pred = _as_binary(predictions, "predictions")
    true = _as_binary(labels, "labels")
    if pred.shape != true.shape:
        raise InvalidInputError(f"{len(pred)} predictions for {len(true)} labels")
    return ConfusionCounts(
        tp=int(np.sum((pred == 1) & (true == 1))),
        fn=int(np.sum((pred == 0) & (true == 1))),
        fp=int(np.sum((pred == 1) & (true == 0))),
        tn=int(np.sum((pred == 0) & (true == 0))),
    )


@dataclass(frozen=True)
class ExperimentRecord:
    """One sweep cell, or a per-SNR mean row when ``noise_kind == "mean"``.

    For mean rows the percentages are unweighted means of the cell values
    (cells with an undefined value are skipped) and ``counts`` is the sum.
    """

    noise_kind: str
    snr_db: float
    counts: ConfusionCounts
    se: float | None
    sp: float | None
    acc: float | None
    n_failed: int = 0

    @classmethod
    def from_counts(cls, noise_kind, snr_db, counts, n_failed=0):
        return cls(noise_kind, float(snr_db), counts, counts.se, counts.sp, counts.acc, n_failed)

    def row(self):
        fmt = lambda v: NA if v is None else f"{v:.6g}"
        c = self.counts
        return [self.noise_kind, f"{self.snr_db:g}", c.tp, c.fn, c.fp, c.tn,
                fmt(self.se), fmt(self.sp), fmt(self.acc), self.n_failed]

    def to_dict(self):
        d = asdict(self)
        d["counts"] = asdict(self.counts)
        return d


def _mean(values):
    values = [v for v in values if v is not None]
    return statistics.fmean(values) if values else None


def _load_items(corpus):
    if isinstance(corpus, (str, Path)):
        return load_manifest(corpus)
    return list(corpus)


def run_snr_sweep(corpus, config=None, snr_grid=DEFAULT_SNR_GRID, threshold=None):
    """Mix every item at every SNR, detect, and score per (noise kind, SNR).

    ``corpus`` is a list of corpus items or a manifest path. A failing item is
    logged and counted in ``n_failed``; the sweep carries on.
    """
    config = config or PipelineConfig()
    if threshold is not None:
        config = config.with_overrides(threshold=threshold)
    items = _load_items(corpus)
    if not items:
        raise InvalidInputError("corpus is empty")
    if len({it.label for it in items}) < 2:
        logger.warning("corpus has a single class; SE or SP will be reported as %s", NA)
    kinds = list(dict.fromkeys(it.noise_kind for it in items))

    records = []
    for snr in snr_grid:
        preds = {k: [] for k in kinds}
        truth = {k: [] for k in kinds}
        failed = dict.fromkeys(kinds, 0)
        for i, item in enumerate(items):
            try:
                rec = item.mixture(snr)
                omega = analyze(rec.internal, rec.external, config).detection.label
            except (WheezeNMFError, ArithmeticError, OSError, ValueError) as exc:
                logger.error("item %d (%s, %s) failed at %g dB: %s", i, item.label, item.noise_kind, snr, exc)
                failed[item.noise_kind] += 1
                continue
            preds[item.noise_kind].append(omega)
            truth[item.noise_kind].append(item.label)
        cells = [ExperimentRecord.from_counts(k, snr, score(preds[k], truth[k]), failed[k]) for k in kinds]
        records.extend(cells)
        total = ConfusionCounts()
        for c in cells:
            total = total + c.counts
        records.append(ExperimentRecord(
            MEAN_KIND, float(snr), total,
            _mean(c.se for c in cells), _mean(c.sp for c in cells), _mean(c.acc for c in cells),
            sum(c.n_failed for c in cells),
        ))
    return records


def sweep_means(records):
    """``{snr: record}`` for the per-SNR mean rows."""
    return {r.snr_db: r for r in records if r.noise_kind == MEAN_KIND}


@dataclass(frozen=True)
class BenchRecord:
    stage: str
    duration_s: float
    threads: int
    wall_time_s: float
    speedup: float
    efficiency: float

    def row(self):
        return [self.stage, f"{self.duration_s:g}", self.threads, f"{self.wall_time_s:.6f}",
                f"{self.speedup:.6f}", f"{self.efficiency:.6f}"]

    def to_dict(self):
        return asdict(self)


def time_pipeline(recording, config, repeats=5):
    """Median wall time per stage (and ``total``) over ``repeats`` runs."""
    runs = [analyze(recording.internal, recording.external, config).timings for _ in range(repeats)]
    return {stage: statistics.median(r[stage] for r in runs) for stage in (*STAGES, "total")}


def run_scaling_benchmark(durations=BENCHMARK_DURATIONS, thread_counts=(1, 2, 4), config=None,
                          repeats=5, seed=0):
    """Per-stage timings versus thread count; speedups are against one thread.

    A single-thread run is always included as the baseline. Runs execute one
    after another so they do not compete for cores.
    """
    config = config or PipelineConfig()
    if repeats < 1:
        raise InvalidInputError(f"repeats must be >= 1, got {repeats}")
    counts = sorted({1, *(int(p) for p in thread_counts)})
    if counts[0] < 1:
        raise InvalidInputError(f"thread counts must be >= 1, got {thread_counts}")
    records = []
    for duration in durations:
        recording = generate_benchmark_audio(duration, seed=seed)
        base = None
        for p in counts:
            times = time_pipeline(recording, config.with_overrides(threads=p), repeats)
            if base is None:
                base = times
            for stage, wall in times.items():
                speedup = 1.0 if p == 1 else base[stage] / wall
                records.append(BenchRecord(stage, float(duration), p, wall, speedup, speedup / p))
    return records


def write_csv(records, path):
    """CSV with :data:`EXPERIMENT_HEADER` or :data:`BENCH_HEADER` as appropriate."""
    records = list(records)
    header = BENCH_HEADER if records and isinstance(records[0], BenchRecord) else EXPERIMENT_HEADER
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(r.row() for r in records)
    return path


def write_json(records, path):
    path = Path(path)
    path.write_text(json.dumps([r.to_dict() for r in records], indent=2))
    return path
