"""Comparison harness: cross entropy per noise condition, naive baselines,
parameter counts, and single-threaded per-frame latency.

All noise conditions corrupt the same underlying object tracks, so their
truth channels are byte-identical (this is asserted with a hash); only the
measurement channel differs.  Published reference numbers for the synthetic
benchmark are carried along as metadata so reports can show them next to
locally measured values; they are context, not pass/fail bounds.
"""

from __future__ import annotations

import hashlib
import os
import platform
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import BCE_EPS, no_grad
from .dataio import build_sequence
from .errors import ConfigError
from .noise import NoiseConfig
from .training import bce_value, evaluate

# Published reference values for the synthetic benchmark (BCE per condition,
# trainable parameter counts, and per-frame CPU milliseconds). Recorded in
# reports for side-by-side context only; the averaging convention behind the
# reference BCE is not reproducible from the published description.
REFERENCE_BCE_SYNTHETIC = {
    ("miss-only", "ConvGRU"): 0.3265,
    ("miss-only", "KGA"): 0.3306,
    ("shift-only", "ConvGRU"): 0.3235,
    ("shift-only", "KGA"): 0.3227,
    ("both", "ConvGRU"): 0.3312,
    ("both", "KGA"): 0.3351,
}
REFERENCE_PARAM_COUNT = {"KGA": 3906, "ConvGRU": 30626}
REFERENCE_MS_PER_FRAME = {"KGA": 5.0, "ConvGRU": 18.0}

CONDITIONS = ("none", "miss-only", "shift-only", "both")


@dataclass
class ConditionResult:
    condition: str
    model: str
    bce: float
    n_frames: int
    reference_bce: float | None = None
    untrained_flag: bool = False


@dataclass
class BenchResult:
    model: str
    ms_median: float
    ms_p95: float
    param_count: int
    n_frames: int
    host: dict = field(default_factory=dict)


def condition_noise(base: NoiseConfig, condition: str) -> NoiseConfig:
    if condition == "none":
        return replace(base, miss_rate=0.0, shift_rate=0.0)
    if condition == "miss-only":
        return replace(base, shift_rate=0.0)
    if condition == "shift-only":
        return replace(base, miss_rate=0.0)
    if condition == "both":
        return base
    raise ConfigError(f"unknown condition {condition!r}")


def looks_untrained(model) -> bool:
    """Heuristic: freshly initialized checkpoints have all-zero biases."""
    biases = [
        t for name, t in model.params.tensors() if t.values.ndim == 1
    ]
    return all((t.values == 0.0).all() for t in biases)


def _truth_digest(record) -> str:
    h = hashlib.sha256()
    for _, truth in record.frames:
        h.update(truth.tobytes())
    return h.hexdigest()


def run_condition_table(
    models,
    truth_tracks,
    base_noise: NoiseConfig,
    height: int,
    width: int,
    fps: int = 30,
    conditions=CONDITIONS,
) -> list[ConditionResult]:
    """Evaluate each model on each corruption of the shared object tracks.

    ``truth_tracks`` is a list of per-sequence object videos (one list of
    SceneObjects per frame).  Truth frames are hash-checked to be identical
    across conditions.
    """
    results = []
    truth_hashes = None
    for condition in conditions:
        noise = condition_noise(base_noise, condition)
        records = [
            build_sequence(frames, height, width, noise, fps=fps)
            for frames in truth_tracks
        ]
        hashes = [_truth_digest(r) for r in records]
        if truth_hashes is None:
            truth_hashes = hashes
        elif hashes != truth_hashes:
            raise ConfigError("truth channels differ across conditions")
        n_frames = sum(len(r.frames) for r in records)
        for model in models:
            results.append(
                ConditionResult(
                    condition=condition,
                    model=model.name,
                    bce=evaluate(model, records),
                    n_frames=n_frames,
                    reference_bce=REFERENCE_BCE_SYNTHETIC.get(
                        (condition, model.name)
                    ),
                    untrained_flag=looks_untrained(model),
                )
            )
    return results


def naive_baselines(records) -> dict:
    """BCE of two non-learning predictors on the same next-frame task.

    copy-last uses the current measurement (clamped into (0,1)) as the
    probability for the next truth frame; always-free predicts near-zero
    occupancy everywhere.
    """
    copy_scores = []
    free_scores = []
    for record in records:
        frames = record.frames
        free = np.full((record.height, record.width), BCE_EPS)
        for t in range(len(frames) - 1):
            truth_next = frames[t + 1][1]
            copy_scores.append(bce_value(frames[t][0].astype(np.float64), truth_next))
            free_scores.append(bce_value(free, truth_next))
    return {
        "copy-last": float(np.mean(copy_scores)),
        "always-free": float(np.mean(free_scores)),
    }


def host_metadata() -> dict:
    return {
        "machine": platform.machine(),
        "processor": platform.processor() or platform.uname().processor,
        "system": f"{platform.system()} {platform.release()}",
        "python": platform.python_version(),
        "numpy": np.__version__,
        "cpu_count": os.cpu_count(),
    }


def _limit_blas_threads():
    try:
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=1)
    except ImportError:  # fall back to whatever the process has
        import contextlib

        return contextlib.nullcontext()


def bench_latency(
    model,
    height: int = 50,
    width: int = 50,
    n_frames: int = 1000,
    warmup: int = 100,
    seed: int = 0,
) -> BenchResult:
    """Median/p95 per-frame inference latency, single-threaded."""
    if time.get_clock_info("perf_counter").resolution > 1e-5:
        warnings.warn("perf_counter resolution is coarser than 10 microseconds")
    rng = np.random.default_rng(seed)
    frames = [
        (rng.random((height, width)) < 0.05).astype(np.uint8)
        for _ in range(min(64, warmup + n_frames))
    ]
    durations = np.empty(n_frames)
    with _limit_blas_threads(), no_grad():
        state = model.initial_state(height, width)
        for i in range(warmup):
            _, state = model.step(frames[i % len(frames)], state)
        for i in range(n_frames):
            begin = time.perf_counter()
            _, state = model.step(frames[i % len(frames)], state)
            durations[i] = time.perf_counter() - begin
    return BenchResult(
        model=model.name,
        ms_median=float(np.median(durations) * 1e3),
        ms_p95=float(np.percentile(durations, 95) * 1e3),
        param_count=model.count_params(),
        n_frames=n_frames,
        host=host_metadata(),
    )


# --- report formatting ------------------------------------------------------


def condition_table_csv(results) -> str:
    lines = ["condition,model,bce,n_frames,reference_bce,untrained"]
    for r in results:
        ref = "" if r.reference_bce is None else repr(r.reference_bce)
        lines.append(
            f"{r.condition},{r.model},{r.bce!r},{r.n_frames},{ref},{int(r.untrained_flag)}"
        )
    return "\n".join(lines) + "\n"


def condition_table_text(results, baselines=None) -> str:
    lines = [
        "Next-frame occupancy BCE by noise condition",
        "(one model per column, trained once on the 'both' condition)",
        "",
        f"{'condition':<12} {'model':<8} {'bce':>10} {'reference':>10} {'flags'}",
    ]
    for r in results:
        ref = f"{r.reference_bce:.4f}" if r.reference_bce is not None else "-"
        flag = "untrained" if r.untrained_flag else ""
        lines.append(f"{r.condition:<12} {r.model:<8} {r.bce:>10.4f} {ref:>10} {flag}")
    if baselines:
        lines.append("")
        for name, bce in baselines.items():
            lines.append(f"baseline {name}: {bce:.4f}")
    lines.append("")
    lines.append("Reference values are published numbers for context only.")
    return "\n".join(lines) + "\n"


def bench_csv(results) -> str:
    lines = ["model,ms_median,ms_p95,param_count,reference_ms,reference_params"]
    for r in results:
        lines.append(
            f"{r.model},{r.ms_median!r},{r.ms_p95!r},{r.param_count},"
            f"{REFERENCE_MS_PER_FRAME.get(r.model, '')},"
            f"{REFERENCE_PARAM_COUNT.get(r.model, '')}"
        )
    return "\n".join(lines) + "\n"


def bench_text(results) -> str:
    lines = ["Single-threaded per-frame inference latency", ""]
    for r in results:
        lines.append(
            f"{r.model:<8} median {r.ms_median:8.3f} ms  p95 {r.ms_p95:8.3f} ms  "
            f"params {r.param_count}"
        )
    if results:
        h = results[0].host
        lines.append("")
        lines.append(
            f"host: {h.get('processor') or h.get('machine')} "
            f"({h.get('cpu_count')} cpus), {h.get('system')}, "
            f"python {h.get('python')}, numpy {h.get('numpy')}"
        )
        lines.append(
            "reference: "
            + ", ".join(
                f"{m} ~{ms:g} ms/frame" for m, ms in REFERENCE_MS_PER_FRAME.items()
            )
        )
    return "\n".join(lines) + "\n"
