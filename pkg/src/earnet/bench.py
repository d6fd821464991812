"""Single-stream CPU throughput and parameter-count measurement.

Timing uses the monotonic high-resolution clock, excludes warmup runs, and
reuses one pre-generated input so data generation never lands inside the
timed loop.  Thread count is pinned for the whole measurement.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import platform
import time
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import ConfigError, ContractError
from .tensor import Tensor


@dataclass(frozen=True)
class BenchReport:
    avg_fps: float
    p50_ms: float
    p95_ms: float
    p99_ms: float
    n_warmup: int
    n_iter: int
    threads: int
    input_shape: tuple
    param_count: int
    cpu: str
    timestamp: str


def _cpu_model() -> str:
    try:
        with open("/proc/cpuinfo") as f:
            for line in f:
                if line.lower().startswith("model name"):
                    return line.split(":", 1)[1].strip()
    except OSError:
        pass
    return platform.processor() or platform.machine() or "unknown"


def time_callable(fn, n_warmup: int, n_iter: int, threads: int = 1):
    """Run fn n_warmup+n_iter times; returns (total seconds, per-run ms)."""
    if n_iter < 1:
        raise ConfigError(f"n_iter must be >= 1, got {n_iter}")
    if n_warmup < 0:
        raise ConfigError(f"n_warmup must be >= 0, got {n_warmup}")
    latencies = np.empty(n_iter, dtype=np.float64)
    with threadpool_limits(limits=threads):
        for _ in range(n_warmup):
            fn()
        start = time.perf_counter()
        for i in range(n_iter):
            t0 = time.perf_counter()
            fn()
            latencies[i] = (time.perf_counter() - t0) * 1e3
        total = time.perf_counter() - start
    return total, latencies


def count_params(model) -> int:
    """Trainable scalars only; running statistics buffers are excluded."""
    return sum(p.data.size for _, p in model.named_parameters())


def fps_bench(
    model,
    input_shape=(1, 3, 224, 224),
    n_warmup: int = 50,
    n_iter: int = 500,
    threads: int = 1,
    seed: int = 0,
) -> BenchReport:
    """Measure single-stream forward throughput of a frozen eval-mode model."""
    if getattr(model, "training", False):
        raise ContractError(
            "fps_bench requires eval mode; train-mode normalization and "
            "drop layers distort both timing and outputs"
        )
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=input_shape).astype(np.float32))
    total, latencies = time_callable(lambda: model(x), n_warmup, n_iter, threads)
    p50, p95, p99 = np.percentile(latencies, [50, 95, 99])
    return BenchReport(
        avg_fps=n_iter / total,
        p50_ms=float(p50),
        p95_ms=float(p95),
        p99_ms=float(p99),
        n_warmup=n_warmup,
        n_iter=n_iter,
        threads=threads,
        input_shape=tuple(input_shape),
        param_count=count_params(model),
        cpu=_cpu_model(),
        timestamp=time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    )


def report_to_json(report: BenchReport) -> str:
    payload = dataclasses.asdict(report)
    payload["input_shape"] = list(report.input_shape)
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def write_report_json(report: BenchReport, path) -> None:
    with open(path, "w") as f:
        f.write(report_to_json(report))


def write_report_csv(report: BenchReport, path) -> None:
    payload = dataclasses.asdict(report)
    payload["input_shape"] = "x".join(str(d) for d in report.input_shape)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(payload.keys())
        w.writerow(payload.values())


def format_report(report: BenchReport) -> str:
    lines = [
        f"input           {'x'.join(str(d) for d in report.input_shape)}",
        f"parameters      {report.param_count:,}",
        f"threads         {report.threads}",
        f"iterations      {report.n_iter} (+{report.n_warmup} warmup)",
        f"avg fps         {report.avg_fps:.2f}",
        f"latency p50     {report.p50_ms:.2f} ms",
        f"latency p95     {report.p95_ms:.2f} ms",
        f"latency p99     {report.p99_ms:.2f} ms",
        f"cpu             {report.cpu}",
        f"timestamp       {report.timestamp}",
    ]
    return "\n".join(lines) + "\n"
