"""Drives the target framework's build system via a configured command
template and captures combined compiler output verbatim.

Timeouts are reported as a failed BuildResult with a marker line appended,
never as an exception that would lose the log.
"""

from __future__ import annotations

import os
import subprocess
import time
from dataclasses import dataclass
from enum import Enum

from .exceptions import BuildSystemMissingError

DEFAULT_BUILD_TIMEOUT_S = 600.0
TIMEOUT_MARKER = "[kernelforge] build timed out"


class BuildMode(Enum):
    FULL = "Full"
    INCREMENTAL = "Incremental"


@dataclass(frozen=True)
class BuildResult:
    success: bool
    log_text: str
    duration_s: float
    incremental: bool

    def __post_init__(self):
        if not self.success and not self.log_text:
            raise ValueError("failed builds must carry a log")


def _build_env(passthrough: list[str]) -> dict[str, str]:
    return {key: os.environ[key] for key in passthrough if key in os.environ}


def build(ws, framework, mode: BuildMode = BuildMode.FULL,
          timeout_s: float = DEFAULT_BUILD_TIMEOUT_S, jobs: int = 1) -> BuildResult:
    """Run the framework's configured build command and capture its output.

    Raises BuildSystemMissingError when the workspace lacks the framework's
    required build file; every other failure mode is a BuildResult with
    success=False and the full interleaved stdout/stderr.
    """
    required = ws.root / framework.build_required_file
    if not required.exists():
        raise BuildSystemMissingError(
            f"{framework.build_required_file} not found under {ws.root}"
        )
    command = framework.build_command(ws.root, mode, jobs)
    env = _build_env(framework.env_passthrough)
    started = time.monotonic()
    try:
        proc = subprocess.run(
            command,
            shell=True,
            stdout=subprocess.PIPE,
            stderr=subprocess.STDOUT,
            text=True,
            timeout=timeout_s,
            env=env,
        )
        log = proc.stdout or ""
        success = proc.returncode == 0
        if not success and not log:
            log = f"[kernelforge] build exited {proc.returncode} with no output\n"
    except subprocess.TimeoutExpired as exc:
        captured = exc.stdout or b""
        if isinstance(captured, bytes):
            captured = captured.decode(errors="replace")
        log = captured + f"\n{TIMEOUT_MARKER} after {timeout_s}s\n"
        success = False
    duration = time.monotonic() - started
    return BuildResult(
        success=success,
        log_text=log,
        duration_s=duration,
        incremental=mode is BuildMode.INCREMENTAL,
    )


def precompile_base(ws, framework, timeout_s: float = DEFAULT_BUILD_TIMEOUT_S,
                    jobs: int = 1) -> BuildResult:
    """Full build of the clean tree so later builds can run incrementally."""
    return build(ws, framework, BuildMode.FULL, timeout_s=timeout_s, jobs=jobs)
