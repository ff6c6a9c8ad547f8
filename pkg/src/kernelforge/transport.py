"""Execution transports: where operator binaries run.

LocalProcessTransport stages files into a host temp directory and runs
commands as local subprocesses. RemoteDeviceTransport is a thin wrapper
around a device-bridge executable (adb-style) named in configuration; the
harness never embeds device-protocol logic beyond invoking that bridge.
"""

from __future__ import annotations

import shlex
import shutil
import subprocess
import tempfile
import time
import uuid
from dataclasses import dataclass
from pathlib import Path

import psutil


@dataclass(frozen=True)
class ExecResult:
    exit_code: int
    stdout: str
    stderr: str


class Transport:
    """Interface; see LocalProcessTransport for the reference semantics."""

    kind = "abstract"

    def push(self, local: str | Path, remote: str) -> None:
        raise NotImplementedError

    def exec(self, command: str, timeout_s: float | None = None) -> ExecResult:
        raise NotImplementedError

    def pull(self, remote: str, local: str | Path) -> None:
        raise NotImplementedError

    def utilization(self) -> float:
        """Current CPU load as a fraction of total capacity (0.0-1.0)."""
        raise NotImplementedError

    def session_dir(self, label: str) -> str:
        """Create and return a fresh staging directory for one run."""
        raise NotImplementedError

    def local_scratch(self) -> str:
        """Host-side directory for pulled files."""
        raise NotImplementedError


class LocalProcessTransport(Transport):
    kind = "LocalProcess"

    def __init__(self, staging_root: str | Path | None = None):
        self._root = Path(staging_root) if staging_root else Path(tempfile.mkdtemp(prefix="kf-local-"))
        self._root.mkdir(parents=True, exist_ok=True)
        self._scratch = self._root / "scratch"
        self._scratch.mkdir(exist_ok=True)

    def push(self, local: str | Path, remote: str) -> None:
        dest = Path(remote)
        dest.parent.mkdir(parents=True, exist_ok=True)
        shutil.copy2(local, dest)

    def exec(self, command: str, timeout_s: float | None = None) -> ExecResult:
        proc = subprocess.run(
            command,
            shell=True,
            capture_output=True,
            text=True,
            timeout=timeout_s,
        )
        return ExecResult(exit_code=proc.returncode, stdout=proc.stdout, stderr=proc.stderr)

    def pull(self, remote: str, local: str | Path) -> None:
        dest = Path(local)
        dest.parent.mkdir(parents=True, exist_ok=True)
        shutil.copy2(remote, dest)

    def utilization(self) -> float:
        return psutil.cpu_percent(interval=0.05) / 100.0

    def session_dir(self, label: str) -> str:
        session = self._root / f"{label}-{uuid.uuid4().hex[:8]}"
        session.mkdir(parents=True)
        (session / "out").mkdir()
        return str(session)

    def local_scratch(self) -> str:
        return str(self._scratch)


class RemoteDeviceTransport(Transport):
    """Bridge-mediated device transport.

    bridge: path to the bridge executable (e.g. adb). serial: device
    identifier passed as `-s <serial>`. staging_dir: remote directory for
    pushed artifacts. utilization_command: remote shell command whose stdout
    starts with the load as a percent of total capacity (100 * cores scale).
    """

    kind = "RemoteDevice"

    def __init__(self, bridge: str, serial: str, staging_dir: str = "/data/local/tmp/kernelforge",
                 cores: int = 8, utilization_command: str | None = None):
        self.bridge = bridge
        self.serial = serial
        self.staging_dir = staging_dir.rstrip("/")
        self.cores = cores
        self.utilization_command = utilization_command
        self._scratch = Path(tempfile.mkdtemp(prefix="kf-remote-scratch-"))

    def _bridge_cmd(self, *args: str) -> list[str]:
        return [self.bridge, "-s", self.serial, *args]

    def _run(self, argv: list[str], timeout_s: float | None = None) -> ExecResult:
        proc = subprocess.run(argv, capture_output=True, text=True, timeout=timeout_s)
        return ExecResult(exit_code=proc.returncode, stdout=proc.stdout, stderr=proc.stderr)

    def push(self, local: str | Path, remote: str) -> None:
        result = self._run(self._bridge_cmd("push", str(local), remote))
        if result.exit_code != 0:
            raise OSError(f"push {local} -> {remote} failed: {result.stderr.strip()}")

    def exec(self, command: str, timeout_s: float | None = None) -> ExecResult:
        return self._run(self._bridge_cmd("shell", command), timeout_s=timeout_s)

    def pull(self, remote: str, local: str | Path) -> None:
        Path(local).parent.mkdir(parents=True, exist_ok=True)
        result = self._run(self._bridge_cmd("pull", remote, str(local)))
        if result.exit_code != 0:
            raise OSError(f"pull {remote} -> {local} failed: {result.stderr.strip()}")

    def utilization(self) -> float:
        if not self.utilization_command:
            return 0.0
        result = self.exec(self.utilization_command)
        try:
            percent = float(result.stdout.split()[0])
        except (IndexError, ValueError):
            return 1.0  # unreadable load counts as busy
        return percent / (100.0 * self.cores)

    def session_dir(self, label: str) -> str:
        session = f"{self.staging_dir}/{label}-{uuid.uuid4().hex[:8]}"
        self.exec(f"mkdir -p {shlex.quote(session)}/out")
        return session

    def local_scratch(self) -> str:
        return str(self._scratch)


def make_transport(spec: str, **kwargs) -> Transport:
    """Build a transport from a CLI-style spec: "local" or "device:<serial>"."""
    if spec == "local":
        return LocalProcessTransport()
    if spec.startswith("device:"):
        serial = spec.split(":", 1)[1]
        bridge = kwargs.pop("bridge", "adb")
        return RemoteDeviceTransport(bridge=bridge, serial=serial, **kwargs)
    raise ValueError(f"unknown transport spec {spec!r}")
