"""Latency measurement through a transport: warm-up plus multi-iteration
protocol, perf-log parsing, utilization gating, and speedup computation.

Perf-log line grammar (ASCII, one record per line):
    backend=<name>
    threads=<n>
    iter=<k> time_us=<t>     # k is 0-based and contiguous; t a positive real
"""

from __future__ import annotations

import re
import statistics
import time
from dataclasses import dataclass, field

from .exceptions import (
    DeviceBusyError,
    ExecutionFailureError,
    MalformedPerfLogError,
    NonPositiveLatencyError,
)

DEFAULT_ITERS = 100
DEFAULT_WARMUP = 5
DEFAULT_UTIL_THRESHOLD = 0.10
DEFAULT_UTIL_RETRIES = 6
DEFAULT_UTIL_BACKOFF_S = 10.0

_ITER_RE = re.compile(r"^iter=(\d+)\s+time_us=([0-9.eE+-]+)\s*$")
_BACKEND_RE = re.compile(r"^backend=(\S+)\s*$")
_THREADS_RE = re.compile(r"^threads=(\d+)\s*$")


@dataclass(frozen=True)
class PerfProfile:
    samples_us: tuple[float, ...]
    warmup_count: int
    mean_ms: float
    median_ms: float
    backend: str = "CPU"
    threads: int = 1

    @classmethod
    def from_samples(cls, samples_us, warmup_count: int = 0, backend: str = "CPU",
                     threads: int = 1) -> "PerfProfile":
        samples = tuple(float(s) for s in samples_us)
        if not samples:
            raise ValueError("profile requires at least one sample")
        if any(s <= 0 for s in samples):
            raise NonPositiveLatencyError("perf samples must be positive")
        return cls(
            samples_us=samples,
            warmup_count=warmup_count,
            mean_ms=statistics.fmean(samples) / 1000.0,
            median_ms=statistics.median(samples) / 1000.0,
            backend=backend,
            threads=threads,
        )


def parse_perf_log(text: str, warmup_count: int = 0) -> PerfProfile:
    """Parse runner stdout into a PerfProfile.

    Iterations must be 0-based and contiguous; a missing or duplicate index,
    or an unparseable timing value, raises MalformedPerfLogError naming the
    first offending line.
    """
    samples: dict[int, float] = {}
    backend = "CPU"
    threads = 1
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped:
            continue
        m = _ITER_RE.match(stripped)
        if m:
            k = int(m.group(1))
            if k in samples:
                raise MalformedPerfLogError(f"duplicate iteration: {stripped!r}")
            try:
                value = float(m.group(2))
            except ValueError:
                raise MalformedPerfLogError(f"bad timing value: {stripped!r}")
            if value <= 0:
                raise MalformedPerfLogError(f"non-positive timing: {stripped!r}")
            samples[k] = value
            continue
        m = _BACKEND_RE.match(stripped)
        if m:
            backend = m.group(1)
            continue
        m = _THREADS_RE.match(stripped)
        if m:
            threads = int(m.group(1))
            continue
        # Non-grammar lines (runner banners etc.) are ignored.
    if not samples:
        raise MalformedPerfLogError("no iteration lines found")
    for expected in range(len(samples)):
        if expected not in samples:
            raise MalformedPerfLogError(f"missing iteration iter={expected}")
    ordered = [samples[k] for k in range(len(samples))]
    return PerfProfile.from_samples(ordered, warmup_count=warmup_count,
                                    backend=backend, threads=threads)


def utilization_gate(transport, threshold: float = DEFAULT_UTIL_THRESHOLD,
                     retries: int = DEFAULT_UTIL_RETRIES,
                     backoff_s: float = DEFAULT_UTIL_BACKOFF_S,
                     sleep=time.sleep) -> bool:
    """True once transport.utilization() drops below threshold; retries with
    backoff, False when every attempt stays at or above it."""
    for attempt in range(retries + 1):
        if transport.utilization() < threshold:
            return True
        if attempt < retries:
            sleep(backoff_s)
    return False


def run_benchmark(ws, task, transport, framework, iters: int = DEFAULT_ITERS,
                  warmup: int = DEFAULT_WARMUP,
                  util_threshold: float = DEFAULT_UTIL_THRESHOLD,
                  util_retries: int = DEFAULT_UTIL_RETRIES,
                  util_backoff_s: float = DEFAULT_UTIL_BACKOFF_S,
                  sleep=time.sleep) -> PerfProfile:
    """Run the task's operator for warmup discarded plus iters measured
    iterations and parse the emitted perf log.

    Raises DeviceBusyError when the utilization gate never opens,
    ExecutionFailureError on nonzero exit, MalformedPerfLogError when the log
    does not carry exactly the requested iterations.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if not utilization_gate(transport, util_threshold, util_retries, util_backoff_s, sleep=sleep):
        raise DeviceBusyError(
            f"utilization stayed at or above {util_threshold:.0%} after {util_retries} retries"
        )

    session = transport.session_dir(f"bench-{task.id}")
    out_dir = f"{session}/out"
    remote_inputs = []
    for k, local in enumerate(task.reference_inputs):
        remote = f"{session}/in_{k}.tensor"
        transport.push(local, remote)
        remote_inputs.append(remote)
    runner = framework.stage_runner(ws, transport, session)
    command = framework.runner_command(
        runner=runner,
        op=task.operator_name,
        inputs=remote_inputs,
        attributes=task.attributes.as_dict(),
        out_dir=out_dir,
        iters=iters,
        warmup=warmup,
    )
    result = transport.exec(command)
    if result.exit_code != 0:
        raise ExecutionFailureError(
            f"benchmark run for task {task.id} exited {result.exit_code}",
            exit_code=result.exit_code,
            output=result.stdout + result.stderr,
        )
    profile = parse_perf_log(result.stdout, warmup_count=warmup)
    if len(profile.samples_us) != iters:
        raise MalformedPerfLogError(
            f"expected {iters} samples, log carried {len(profile.samples_us)}"
        )
    return profile


def speedup(baseline, generated) -> float:
    """T_baseline / T_generated. Arguments may be PerfProfile or latency in ms."""
    base_ms = baseline.mean_ms if isinstance(baseline, PerfProfile) else float(baseline)
    gen_ms = generated.mean_ms if isinstance(generated, PerfProfile) else float(generated)
    if base_ms <= 0 or gen_ms <= 0:
        raise NonPositiveLatencyError(
            f"latencies must be positive, got baseline={base_ms} generated={gen_ms}"
        )
    return base_ms / gen_ms
