"""Evaluation metrics (CSR, FCR, fast_p, per-category breakdowns), best-of-K
selection, the shaped GRPO reward, and report emission.

fast_p uses strict inequality: only speedup > p counts. Percentages are
reported to one decimal.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .diagnostics import ErrorClass, ErrorRecord
from .exceptions import MissingLatencyError, NonPositiveLatencyError
from .tasks import OperatorCategory

DEFAULT_THRESHOLDS = (0.5, 1.0, 1.5)
COMPILE_REWARD = 0.3
CORRECT_REWARD = 0.3


@dataclass(frozen=True)
class EvaluationResult:
    task_id: str
    compiled: bool
    correct: bool
    category: OperatorCategory
    t_generated_ms: float | None = None
    t_baseline_ms: float | None = None
    speedup: float | None = None
    iteration: int = 0
    max_abs_diff: float | None = None
    errors: tuple[ErrorRecord, ...] = ()

    def __post_init__(self):
        if self.correct and not self.compiled:
            raise ValueError(f"task {self.task_id}: correct implies compiled")
        if self.speedup is not None and not self.correct:
            raise ValueError(f"task {self.task_id}: speedup implies correct")
        if (
            self.speedup is not None
            and self.t_generated_ms is not None
            and self.t_baseline_ms is not None
        ):
            implied = self.t_baseline_ms / self.t_generated_ms
            if abs(self.speedup - implied) > 1e-9 * max(1.0, abs(implied)):
                raise ValueError(
                    f"task {self.task_id}: speedup {self.speedup} inconsistent with "
                    f"latencies {self.t_baseline_ms}/{self.t_generated_ms}"
                )


def _rank(result: EvaluationResult) -> tuple:
    """Ordering class: correct-with-speedup > correct-untimed > compiled > neither."""
    if result.correct and result.speedup is not None:
        return (3, result.speedup)
    if result.correct:
        return (2, 0.0)
    if result.compiled:
        return (1, 0.0)
    return (0, 0.0)


def best_of(results: list[EvaluationResult]) -> EvaluationResult:
    """Best-performing result for one task; ties keep the earliest entry."""
    if not results:
        raise ValueError("best_of requires a nonempty result list")
    task_ids = {r.task_id for r in results}
    if len(task_ids) != 1:
        raise ValueError(f"best_of requires one task, got {sorted(task_ids)}")
    best = results[0]
    for candidate in results[1:]:
        candidate_rank, best_rank = _rank(candidate), _rank(best)
        if candidate_rank > best_rank or (
            candidate_rank == best_rank and candidate.iteration < best.iteration
        ):
            best = candidate
    return best


@dataclass(frozen=True)
class CategoryMetrics:
    csr: float
    fcr: float
    fast_p: dict[float, float] = field(default_factory=dict)


@dataclass(frozen=True)
class MetricsReport:
    csr_pct: float
    fcr_pct: float
    fast_p: dict[float, float]
    per_category: dict[OperatorCategory, CategoryMetrics]
    n_tasks: int


def _pct(count: int, total: int) -> float:
    if total == 0:
        return 0.0
    return round(100.0 * count / total, 1)


def _subset_metrics(results: list[EvaluationResult], thresholds) -> CategoryMetrics:
    n = len(results)
    compiled = sum(1 for r in results if r.compiled)
    correct = sum(1 for r in results if r.correct)
    fast = {
        p: _pct(sum(1 for r in results if r.speedup is not None and r.speedup > p), n)
        for p in thresholds
    }
    return CategoryMetrics(csr=_pct(compiled, n), fcr=_pct(correct, n), fast_p=fast)


def compute_metrics(best_per_task: list[EvaluationResult],
                    thresholds=DEFAULT_THRESHOLDS) -> MetricsReport:
    """Aggregate best-per-task results into CSR/FCR/fast_p and the
    per-category breakdown (all 12 categories present, zero-filled)."""
    if not best_per_task:
        raise ValueError("compute_metrics requires at least one result")
    ids = [r.task_id for r in best_per_task]
    if len(set(ids)) != len(ids):
        raise ValueError("compute_metrics requires one result per task")
    thresholds = tuple(sorted(float(p) for p in thresholds))
    if any(p <= 0 for p in thresholds):
        raise ValueError("thresholds must be positive")

    overall = _subset_metrics(best_per_task, thresholds)
    per_category = {}
    for category in OperatorCategory:
        subset = [r for r in best_per_task if r.category is category]
        per_category[category] = _subset_metrics(subset, thresholds)
    return MetricsReport(
        csr_pct=overall.csr,
        fcr_pct=overall.fcr,
        fast_p=overall.fast_p,
        per_category=per_category,
        n_tasks=len(best_per_task),
    )


def grpo_reward(compiled: bool, correct: bool, t_baseline_ms: float | None = None,
                t_generated_ms: float | None = None, shaped: bool = True) -> float:
    """Scalar reward for one generated kernel.

    shaped=True:  0.3*1{compile} + 0.3*1{correct} + (T_baseline/T_generated)*1{correct}
    shaped=False: 0.3*1{correct} + (T_baseline/T_generated)*1{correct}
    """
    if correct and not compiled:
        raise ValueError("correct implies compiled")
    reward = 0.0
    if shaped and compiled:
        reward += COMPILE_REWARD
    if correct:
        if t_baseline_ms is None or t_generated_ms is None:
            raise MissingLatencyError("correct kernels require both latencies")
        if t_baseline_ms <= 0 or t_generated_ms <= 0:
            raise NonPositiveLatencyError(
                f"latencies must be positive, got {t_baseline_ms}/{t_generated_ms}"
            )
        reward += CORRECT_REWARD
        reward += t_baseline_ms / t_generated_ms
    return reward


def _fast_key(p: float) -> str:
    return f"{p:g}"


def report_to_dict(report: MetricsReport) -> dict:
    return {
        "csr_pct": report.csr_pct,
        "fcr_pct": report.fcr_pct,
        "fast_p": {_fast_key(p): v for p, v in sorted(report.fast_p.items())},
        "per_category": {
            category.value: {
                "csr": m.csr,
                "fcr": m.fcr,
                "fast_p": {_fast_key(p): v for p, v in sorted(m.fast_p.items())},
            }
            for category, m in report.per_category.items()
        },
        "n_tasks": report.n_tasks,
    }


def report_from_dict(raw: dict) -> MetricsReport:
    return MetricsReport(
        csr_pct=raw["csr_pct"],
        fcr_pct=raw["fcr_pct"],
        fast_p={float(k): v for k, v in raw["fast_p"].items()},
        per_category={
            OperatorCategory.from_name(name): CategoryMetrics(
                csr=m["csr"],
                fcr=m["fcr"],
                fast_p={float(k): v for k, v in m["fast_p"].items()},
            )
            for name, m in raw["per_category"].items()
        },
        n_tasks=raw["n_tasks"],
    )


def render_table(report: MetricsReport) -> str:
    """Aligned plain-text table: CSR, FCR, then fast_p columns ascending."""
    thresholds = sorted(report.fast_p)
    headers = ["Scope", "CSR", "FCR"] + [f"fast_{_fast_key(p)}" for p in thresholds]
    rows = [["overall", f"{report.csr_pct:.1f}", f"{report.fcr_pct:.1f}"]
            + [f"{report.fast_p[p]:.1f}" for p in thresholds]]
    for category in OperatorCategory:
        m = report.per_category[category]
        rows.append([category.value, f"{m.csr:.1f}", f"{m.fcr:.1f}"]
                    + [f"{m.fast_p.get(p, 0.0):.1f}" for p in thresholds])
    widths = [max(len(headers[i]), *(len(r[i]) for r in rows)) for i in range(len(headers))]
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(headers))]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    return "\n".join(lines)


def emit_report(report: MetricsReport, path: str | Path) -> None:
    """Write the JSON report at path and the text table alongside (.txt)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report_to_dict(report), indent=2) + "\n")
    path.with_suffix(".txt").write_text(render_table(report) + "\n")


def load_report(path: str | Path) -> MetricsReport:
    return report_from_dict(json.loads(Path(path).read_text()))


# Append-only results file: one JSON record per line.

def result_to_record(result: EvaluationResult) -> dict:
    return {
        "record": "evaluation",
        "task_id": result.task_id,
        "iteration": result.iteration,
        "category": result.category.value,
        "compiled": result.compiled,
        "correct": result.correct,
        "t_generated_ms": result.t_generated_ms,
        "t_baseline_ms": result.t_baseline_ms,
        "speedup": result.speedup,
        "max_abs_diff": result.max_abs_diff,
        "errors": [
            {
                "file": e.file,
                "line": e.line,
                "column": e.column,
                "message": e.message,
                "classification": e.classification.value,
            }
            for e in result.errors
        ],
    }


def result_from_record(raw: dict) -> EvaluationResult:
    return EvaluationResult(
        task_id=raw["task_id"],
        compiled=raw["compiled"],
        correct=raw["correct"],
        category=OperatorCategory.from_name(raw["category"]),
        t_generated_ms=raw.get("t_generated_ms"),
        t_baseline_ms=raw.get("t_baseline_ms"),
        speedup=raw.get("speedup"),
        iteration=raw.get("iteration", 0),
        max_abs_diff=raw.get("max_abs_diff"),
        errors=tuple(
            ErrorRecord(
                file=e["file"],
                line=e["line"],
                column=e.get("column"),
                message=e["message"],
                classification=ErrorClass(e.get("classification", "CrossFile")),
            )
            for e in raw.get("errors", [])
        ),
    )


def append_record(path: str | Path, record: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a") as fh:
        fh.write(json.dumps(record) + "\n")


def read_results(path: str | Path) -> list[EvaluationResult]:
    """Read every evaluation record from a results file, skipping other
    record kinds (episode summaries etc.)."""
    results = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        raw = json.loads(line)
        if raw.get("record") == "evaluation":
            results.append(result_from_record(raw))
    return results
