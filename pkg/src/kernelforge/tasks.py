"""Benchmark task model: the 12-category operator taxonomy, implementation
mechanisms, task specs, and manifest loading/validation.

A manifest is a JSON document with an explicit schema_version. Unknown fields
are rejected so fixture drift fails fast. Attribute values are stored as
strings; typed accessors live on TaskAttributes because the harness never
interprets attribute semantics beyond diffing and pass-through.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .exceptions import ParseError, ValidationError

MANIFEST_SCHEMA_VERSION = "1"


class OperatorCategory(Enum):
    UNARY = "Unary"
    BINARY = "Binary"
    TRIGONOMETRY = "Trigonometry"
    ACTIVATION = "Activation"
    NORMALIZATION = "Normalization"
    POOLING = "Pooling"
    CONVOLUTION = "Convolution"
    MATRIX = "Matrix"
    REDUCTION = "Reduction"
    TENSOR = "Tensor"
    LOGIC = "Logic"
    OTHERS = "Others"

    @classmethod
    def from_name(cls, name: str) -> "OperatorCategory":
        for member in cls:
            if member.value == name:
                return member
        raise ValidationError(f"unknown operator category {name!r}")


class Mechanism(Enum):
    ATOMIC = "Atomic"
    GEOMETRIC = "Geometric"
    COMPOSITE = "Composite"

    @property
    def file_count(self) -> int:
        # Atomic kernels ship a declaration + implementation pair; geometric
        # and composite operators are a single source file.
        return 2 if self is Mechanism.ATOMIC else 1

    @classmethod
    def from_name(cls, name: str) -> "Mechanism":
        for member in cls:
            if member.value == name:
                return member
        raise ValidationError(f"unknown mechanism {name!r}")


class TaskAttributes:
    """String-valued attribute map with typed accessors."""

    def __init__(self, values: dict[str, str] | None = None):
        self._values = dict(values or {})

    def __eq__(self, other) -> bool:
        return isinstance(other, TaskAttributes) and self._values == other._values

    def __contains__(self, key: str) -> bool:
        return key in self._values

    def __len__(self) -> int:
        return len(self._values)

    def as_dict(self) -> dict[str, str]:
        return dict(self._values)

    def get(self, key: str, default: str | None = None) -> str | None:
        return self._values.get(key, default)

    def get_int(self, key: str, default: int | None = None) -> int | None:
        raw = self._values.get(key)
        if raw is None:
            return default
        try:
            return int(raw)
        except ValueError as exc:
            raise ValidationError(f"attribute {key}={raw!r} is not an int") from exc

    def get_float(self, key: str, default: float | None = None) -> float | None:
        raw = self._values.get(key)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError as exc:
            raise ValidationError(f"attribute {key}={raw!r} is not a float") from exc

    def get_bool(self, key: str, default: bool | None = None) -> bool | None:
        raw = self._values.get(key)
        if raw is None:
            return default
        lowered = raw.strip().lower()
        if lowered in ("1", "true", "yes"):
            return True
        if lowered in ("0", "false", "no"):
            return False
        raise ValidationError(f"attribute {key}={raw!r} is not a bool")

    def get_int_list(self, key: str, default: list[int] | None = None) -> list[int] | None:
        raw = self._values.get(key)
        if raw is None:
            return default
        if not raw.strip():
            return []
        try:
            return [int(part) for part in raw.split(",")]
        except ValueError as exc:
            raise ValidationError(f"attribute {key}={raw!r} is not an int list") from exc


@dataclass(frozen=True)
class TaskSpec:
    id: str
    operator_name: str
    category: OperatorCategory
    mechanism: Mechanism
    attributes: TaskAttributes
    reference_graph: Path
    reference_inputs: tuple[Path, ...]
    reference_outputs: tuple[Path, ...]
    target_file_names: tuple[str, ...]
    baseline_latency_ms: float | None = None


@dataclass(frozen=True)
class Manifest:
    schema_version: str
    tasks: tuple[TaskSpec, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.tasks)

    def task(self, task_id: str) -> TaskSpec:
        for t in self.tasks:
            if t.id == task_id:
                return t
        raise KeyError(task_id)


_MANIFEST_KEYS = {"schema_version", "tasks"}
_TASK_KEYS = {
    "id",
    "operator_name",
    "category",
    "mechanism",
    "attributes",
    "reference_graph",
    "reference_inputs",
    "reference_outputs",
    "target_file_names",
    "baseline_latency_ms",
}


def _require(condition: bool, message: str):
    if not condition:
        raise ValidationError(message)


def _parse_task(raw: dict, base_dir: Path) -> TaskSpec:
    if not isinstance(raw, dict):
        raise ValidationError("task entry is not an object")
    task_id = raw.get("id")
    _require(isinstance(task_id, str) and bool(task_id), "task id missing or empty")
    unknown = set(raw) - _TASK_KEYS
    _require(not unknown, f"task {task_id}: unknown fields {sorted(unknown)}")
    missing = _TASK_KEYS - {"baseline_latency_ms"} - set(raw)
    _require(not missing, f"task {task_id}: missing fields {sorted(missing)}")

    category = OperatorCategory.from_name(raw["category"])
    mechanism = Mechanism.from_name(raw["mechanism"])

    attrs_raw = raw["attributes"]
    _require(isinstance(attrs_raw, dict), f"task {task_id}: attributes must be a map")
    attributes = TaskAttributes({str(k): str(v) for k, v in attrs_raw.items()})

    def _paths(key: str) -> tuple[Path, ...]:
        entries = raw[key]
        _require(isinstance(entries, list), f"task {task_id}: {key} must be a list")
        return tuple(base_dir / str(p) for p in entries)

    reference_graph = base_dir / str(raw["reference_graph"])
    reference_inputs = _paths("reference_inputs")
    reference_outputs = _paths("reference_outputs")
    _require(len(reference_inputs) > 0, f"task {task_id}: reference_inputs empty")
    _require(len(reference_outputs) > 0, f"task {task_id}: reference_outputs empty")
    for p in (reference_graph, *reference_inputs, *reference_outputs):
        _require(p.exists(), f"task {task_id}: referenced file {p} does not exist")

    target_file_names = tuple(str(n) for n in raw["target_file_names"])
    _require(
        len(target_file_names) == mechanism.file_count,
        f"task {task_id}: mechanism {mechanism.value} requires "
        f"{mechanism.file_count} target file(s), got {len(target_file_names)}",
    )

    baseline = raw.get("baseline_latency_ms")
    if baseline is not None:
        _require(
            isinstance(baseline, (int, float)) and baseline > 0,
            f"task {task_id}: baseline_latency_ms must be positive",
        )
        baseline = float(baseline)

    return TaskSpec(
        id=task_id,
        operator_name=str(raw["operator_name"]),
        category=category,
        mechanism=mechanism,
        attributes=attributes,
        reference_graph=reference_graph,
        reference_inputs=reference_inputs,
        reference_outputs=reference_outputs,
        target_file_names=target_file_names,
        baseline_latency_ms=baseline,
    )


def load_manifest(path: str | Path) -> Manifest:
    """Load and validate a task manifest.

    Raises ParseError for malformed JSON, ValidationError for any invariant
    violation (message names the violated invariant and the task id).
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"manifest {path}: {exc}") from exc

    if not isinstance(raw, dict):
        raise ValidationError("manifest root must be an object")
    unknown = set(raw) - _MANIFEST_KEYS
    _require(not unknown, f"manifest: unknown fields {sorted(unknown)}")
    version = raw.get("schema_version")
    _require(
        version == MANIFEST_SCHEMA_VERSION,
        f"manifest: unsupported schema_version {version!r}",
    )
    tasks_raw = raw.get("tasks")
    _require(isinstance(tasks_raw, list), "manifest: tasks must be a list")

    base_dir = path.parent
    tasks = []
    seen_ids: set[str] = set()
    for entry in tasks_raw:
        task = _parse_task(entry, base_dir)
        _require(task.id not in seen_ids, f"duplicate task id {task.id!r}")
        seen_ids.add(task.id)
        tasks.append(task)
    return Manifest(schema_version=version, tasks=tuple(tasks))


def category_histogram(manifest: Manifest) -> dict[OperatorCategory, int]:
    """Task count per category; every category present, zero-filled."""
    counts = Counter(task.category for task in manifest.tasks)
    return {category: counts.get(category, 0) for category in OperatorCategory}
