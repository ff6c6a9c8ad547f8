"""Target-framework checkout management: protected hot-swap injection of
candidate source with backup/restore, and full-copy clones for parallel
evaluation.

Injection state is persisted inside the workspace (hidden .kf_backups
directory) so a restore can run from a different process than the inject.
A workspace is single-owner: no concurrent operations on one workspace.
"""

from __future__ import annotations

import hashlib
import json
import shutil
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .exceptions import (
    AlreadyInjectedError,
    CloneOfInjectedError,
    NothingInjectedError,
    TargetNotFoundError,
    ValidationError,
)

BACKUP_DIR_NAME = ".kf_backups"
_INJECTION_RECORD = "injection.json"


class CandidateStage(Enum):
    GENERATED = "Generated"
    COMPILED = "Compiled"
    VERIFIED = "Verified"
    BENCHMARKED = "Benchmarked"
    FAILED = "Failed"


_STAGE_ORDER = [
    CandidateStage.GENERATED,
    CandidateStage.COMPILED,
    CandidateStage.VERIFIED,
    CandidateStage.BENCHMARKED,
]


@dataclass
class KernelCandidate:
    task_id: str
    iteration: int
    files: dict[str, str]  # file name -> source text, in target order
    stage: CandidateStage = CandidateStage.GENERATED

    @classmethod
    def for_task(cls, task, files: dict[str, str], iteration: int) -> "KernelCandidate":
        if tuple(files) != tuple(task.target_file_names):
            raise ValidationError(
                f"task {task.id}: candidate files {list(files)} must equal "
                f"target_file_names {list(task.target_file_names)}"
            )
        if iteration < 0:
            raise ValidationError("iteration must be nonnegative")
        return cls(task_id=task.id, iteration=iteration, files=dict(files))

    def advance(self, new_stage: CandidateStage) -> None:
        """Stage transitions are monotone along Generated -> Compiled ->
        Verified -> Benchmarked; Failed is reachable from any state and final."""
        if self.stage is CandidateStage.FAILED:
            raise ValidationError("candidate already Failed")
        if new_stage is CandidateStage.FAILED:
            self.stage = new_stage
            return
        if _STAGE_ORDER.index(new_stage) <= _STAGE_ORDER.index(self.stage):
            raise ValidationError(
                f"stage transition {self.stage.value} -> {new_stage.value} not monotone"
            )
        self.stage = new_stage


@dataclass
class Workspace:
    root: Path
    label: str = "main"

    def __post_init__(self):
        self.root = Path(self.root)

    @property
    def _backup_dir(self) -> Path:
        return self.root / BACKUP_DIR_NAME

    @property
    def _record_path(self) -> Path:
        return self._backup_dir / _INJECTION_RECORD

    @property
    def injected(self) -> dict | None:
        """Active injection record {task_id, files: {target_rel: backup_name}} or None."""
        if not self._record_path.exists():
            return None
        return json.loads(self._record_path.read_text())


def _resolve_targets(ws: Workspace, task, candidate: KernelCandidate,
                     location_map: dict[str, list[str]]) -> dict[str, Path]:
    """Map each candidate file name to its path inside the framework tree."""
    locations = location_map.get(task.operator_name)
    if not locations:
        raise TargetNotFoundError(
            f"operator {task.operator_name!r} missing from the location map"
        )
    by_name = {Path(rel).name: rel for rel in locations}
    resolved = {}
    for file_name in candidate.files:
        rel = by_name.get(file_name)
        if rel is None:
            raise TargetNotFoundError(
                f"no mapped path for candidate file {file_name!r} "
                f"(operator {task.operator_name!r} maps {sorted(by_name)})"
            )
        target = ws.root / rel
        if not target.is_file():
            raise TargetNotFoundError(f"target {target} missing in framework tree")
        resolved[file_name] = target
    return resolved


def inject(ws: Workspace, task, candidate: KernelCandidate,
           location_map: dict[str, list[str]]) -> Workspace:
    """Back up the original operator sources and write the candidate in place."""
    if ws.injected is not None:
        raise AlreadyInjectedError(f"workspace {ws.root} already has an active injection")
    if tuple(candidate.files) != tuple(task.target_file_names):
        raise ValidationError(
            f"task {task.id}: candidate files must equal target_file_names"
        )
    targets = _resolve_targets(ws, task, candidate, location_map)

    ws._backup_dir.mkdir(exist_ok=True)
    record = {"task_id": task.id, "files": {}}
    for file_name, target in targets.items():
        rel = target.relative_to(ws.root)
        backup_name = str(rel).replace("/", "__")
        shutil.copy2(target, ws._backup_dir / backup_name)
        record["files"][str(rel)] = backup_name
    for file_name, target in targets.items():
        target.write_text(candidate.files[file_name])
    ws._record_path.write_text(json.dumps(record, indent=2))
    return ws


def restore(ws: Workspace) -> Workspace:
    """Move backups back over the injected files and clear the injection."""
    record = ws.injected
    if record is None:
        raise NothingInjectedError(f"workspace {ws.root} has no active injection")
    for rel, backup_name in record["files"].items():
        backup = ws._backup_dir / backup_name
        if not backup.exists():
            raise NothingInjectedError(f"backup {backup} missing; workspace corrupted")
        shutil.copy2(backup, ws.root / rel)
    shutil.rmtree(ws._backup_dir)
    return ws


def clone_workspace(src: Workspace, label: str, dest_dir: str | Path | None = None) -> Workspace:
    """Full independent copy of the framework tree at a fresh root.

    A colliding label gets a numeric suffix so roots are always disjoint.
    """
    if src.injected is not None:
        raise CloneOfInjectedError(f"workspace {src.root} has an active injection")
    parent = Path(dest_dir) if dest_dir else src.root.parent
    parent.mkdir(parents=True, exist_ok=True)
    base = f"{src.root.name}__{label}"
    dest = parent / base
    suffix = 1
    while dest.exists():
        suffix += 1
        dest = parent / f"{base}-{suffix}"
    shutil.copytree(src.root, dest, symlinks=True)
    return Workspace(root=dest, label=label)


def tree_hash(root: str | Path, exclude_names: tuple[str, ...] = (BACKUP_DIR_NAME, "build")) -> str:
    """Recursive content hash of a directory tree.

    Directories named in exclude_names are skipped wholesale (backups and
    build output are not part of the source tree's identity).
    """
    root = Path(root)
    digest = hashlib.sha256()
    entries = sorted(
        p for p in root.rglob("*")
        if not any(part in exclude_names for part in p.relative_to(root).parts)
    )
    for path in entries:
        rel = str(path.relative_to(root))
        digest.update(rel.encode())
        if path.is_file():
            digest.update(b"\x00")
            digest.update(path.read_bytes())
        digest.update(b"\x01")
    return digest.hexdigest()
