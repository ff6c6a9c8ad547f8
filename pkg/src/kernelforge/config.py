"""Configuration: the per-framework config (operator-location map, build
command templates, runner invocation templates) and the run-level settings
shared by CLI commands.
"""

from __future__ import annotations

import json
import shlex
from dataclasses import dataclass, field
from pathlib import Path

from .build import BuildMode
from .exceptions import ParseError, ValidationError
from .workspace import BACKUP_DIR_NAME

FRAMEWORK_SCHEMA_VERSION = "1"
DEFAULT_ENV_PASSTHROUGH = ["PATH", "HOME", "TMPDIR", "CC", "CXX"]


@dataclass
class FrameworkConfig:
    """Everything the harness needs to know about one target framework."""

    name: str
    operator_locations: dict[str, list[str]]
    build_full: str
    build_incremental: str
    build_required_file: str
    runner_artifact: str
    runner_command_template: str
    inspect_command_template: str
    env_passthrough: list[str] = field(default_factory=lambda: list(DEFAULT_ENV_PASSTHROUGH))
    build_dir: str = "build"

    @classmethod
    def load(cls, path: str | Path) -> "FrameworkConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"framework config {path}: {exc}") from exc
        version = raw.get("schema_version")
        if version != FRAMEWORK_SCHEMA_VERSION:
            raise ValidationError(f"framework config: unsupported schema_version {version!r}")
        try:
            build = raw["build"]
            runner = raw["runner"]
            return cls(
                name=raw["name"],
                operator_locations={
                    str(op): [str(p) for p in paths]
                    for op, paths in raw["operator_locations"].items()
                },
                build_full=build["full"],
                build_incremental=build["incremental"],
                build_required_file=build["required_file"],
                runner_artifact=runner["artifact"],
                runner_command_template=runner["command"],
                inspect_command_template=runner["inspect_command"],
                env_passthrough=list(build.get("env_passthrough", DEFAULT_ENV_PASSTHROUGH)),
                build_dir=str(raw.get("build_dir", "build")),
            )
        except KeyError as exc:
            raise ValidationError(f"framework config: missing field {exc}") from exc

    def build_command(self, root: Path, mode: BuildMode, jobs: int) -> str:
        template = self.build_full if mode is BuildMode.FULL else self.build_incremental
        return template.format(root=shlex.quote(str(root)), jobs=jobs)

    @property
    def tree_hash_excludes(self) -> tuple[str, ...]:
        return (BACKUP_DIR_NAME, self.build_dir)

    def stage_runner(self, ws, transport, session: str) -> str:
        """Push the runner artifact into the session and return its remote path."""
        local = ws.root / self.runner_artifact
        remote = f"{session}/{Path(self.runner_artifact).name}"
        transport.push(local, remote)
        return remote

    def _flags(self, inputs: list[str], attributes: dict[str, str]) -> tuple[str, str]:
        input_flags = " ".join(f"--input {shlex.quote(p)}" for p in inputs)
        attr_flags = " ".join(
            f"--attr {shlex.quote(f'{k}={v}')}" for k, v in sorted(attributes.items())
        )
        return input_flags, attr_flags

    def runner_command(self, runner: str, op: str, inputs: list[str],
                       attributes: dict[str, str], out_dir: str,
                       iters: int, warmup: int) -> str:
        input_flags, attr_flags = self._flags(inputs, attributes)
        return self.runner_command_template.format(
            runner=shlex.quote(runner),
            op=shlex.quote(op),
            inputs=input_flags,
            attrs=attr_flags,
            out_dir=shlex.quote(out_dir),
            iters=iters,
            warmup=warmup,
        )

    def inspect_command(self, runner: str, op: str, inputs: list[str],
                        attributes: dict[str, str]) -> str:
        input_flags, attr_flags = self._flags(inputs, attributes)
        return self.inspect_command_template.format(
            runner=shlex.quote(runner),
            op=shlex.quote(op),
            inputs=input_flags,
            attrs=attr_flags,
        )


@dataclass
class RunConfig:
    """Run-level knobs shared by the CLI commands."""

    manifest_path: Path | None = None
    framework_root: Path | None = None
    framework_config_path: Path | None = None
    transport_spec: str = "local"
    tolerance: float = 1e-4
    iters: int = 100
    warmup: int = 5
    max_iters: int = 10
    jobs: int = 1
    results_path: Path | None = None
    build_timeout_s: float = 600.0
    util_threshold: float = 0.10
    no_bench: bool = False
    remeasure_baseline: bool = False
    llm_transcript: Path | None = None

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValidationError("tolerance must be > 0")
        if self.iters < 1:
            raise ValidationError("iters must be >= 1")
        if self.jobs < 1:
            raise ValidationError("jobs must be >= 1")
