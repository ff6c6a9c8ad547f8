"""The four-stage evaluation protocol: inject -> build -> verify -> benchmark,
with short-circuit on failure, guaranteed workspace restore, baseline
latency caching, and workspace-isolated parallel evaluation.
"""

from __future__ import annotations

import concurrent.futures
import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path

from .benchmarking import PerfProfile, run_benchmark, speedup as compute_speedup
from .build import BuildMode, BuildResult, build, precompile_base
from .config import FrameworkConfig, RunConfig
from .diagnostics import (
    ErrorRecord,
    attach_contexts,
    extract_errors,
    group_errors,
)
from .exceptions import (
    AlreadyInjectedError,
    BuildSystemMissingError,
    CloneOfInjectedError,
    DeviceBusyError,
    ExecutionFailureError,
    KernelForgeError,
    MalformedPerfLogError,
    MissingFileError,
    NothingInjectedError,
    OutputMissingError,
    TargetNotFoundError,
)
from .graphs import GraphDesc, parse_graph
from .metrics import EvaluationResult
from .tasks import TaskSpec
from .verification import VerifyResult, run_verification
from .workspace import CandidateStage, KernelCandidate, Workspace, clone_workspace, inject, restore

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_COMPILE_FAIL = 2
EXIT_VERIFY_FAIL = 3
EXIT_INFRA = 4


@dataclass
class CandidateOutcome:
    task_id: str
    category: object
    stage: CandidateStage = CandidateStage.GENERATED
    build: BuildResult | None = None
    diagnosis: dict | None = None
    errors: tuple[ErrorRecord, ...] = ()
    verify: VerifyResult | None = None
    exec_error: str | None = None
    target_graph: GraphDesc | None = None
    perf: PerfProfile | None = None
    t_baseline_ms: float | None = None
    speedup: float | None = None
    infra_error: str | None = None

    @property
    def compiled(self) -> bool:
        return self.build is not None and self.build.success

    @property
    def correct(self) -> bool:
        return self.verify is not None and self.verify.passed

    def evaluation(self, iteration: int = 0) -> EvaluationResult:
        return EvaluationResult(
            task_id=self.task_id,
            compiled=self.compiled,
            correct=self.correct,
            category=self.category,
            t_generated_ms=self.perf.mean_ms if self.perf else None,
            t_baseline_ms=self.t_baseline_ms if self.correct else None,
            speedup=self.speedup,
            iteration=iteration,
            max_abs_diff=self.verify.max_abs_diff if self.verify else None,
            errors=self.errors,
        )

    def exit_code(self, no_bench: bool = False) -> int:
        if self.infra_error is not None:
            return EXIT_INFRA
        if not self.compiled:
            return EXIT_COMPILE_FAIL
        if not self.correct:
            return EXIT_VERIFY_FAIL
        if no_bench or self.stage is CandidateStage.BENCHMARKED:
            return EXIT_OK
        return EXIT_INFRA


class Pipeline:
    """Binds a framework config, a transport, and run settings; owns the
    baseline cache (per task per transport) and precompile tracking."""

    def __init__(self, framework: FrameworkConfig, transport, config: RunConfig | None = None):
        self.framework = framework
        self.transport = transport
        self.config = config or RunConfig()
        self._baseline_cache: dict[str, float] = {}
        self._precompiled: set[str] = set()

    # -- build management

    def ensure_precompiled(self, ws: Workspace) -> BuildResult:
        key = str(ws.root.resolve())
        if key in self._precompiled:
            return BuildResult(success=True, log_text="(cached)", duration_s=0.0, incremental=False)
        result = precompile_base(ws, self.framework,
                                 timeout_s=self.config.build_timeout_s,
                                 jobs=self.config.jobs)
        if result.success:
            self._precompiled.add(key)
        return result

    def mark_precompiled(self, ws: Workspace) -> None:
        self._precompiled.add(str(ws.root.resolve()))

    def _build_mode(self, ws: Workspace) -> BuildMode:
        if str(ws.root.resolve()) in self._precompiled:
            return BuildMode.INCREMENTAL
        return BuildMode.FULL

    # -- baseline

    def baseline_latency(self, ws: Workspace, task: TaskSpec) -> float:
        """Pinned manifest value, cached measurement, or a fresh pre-injection
        measurement of the native implementation."""
        if task.baseline_latency_ms is not None and not self.config.remeasure_baseline:
            return task.baseline_latency_ms
        if task.id in self._baseline_cache and not self.config.remeasure_baseline:
            return self._baseline_cache[task.id]
        base_build = self.ensure_precompiled(ws)
        if not base_build.success:
            raise BuildSystemMissingError(
                f"baseline build failed for task {task.id}:\n{base_build.log_text[-2000:]}"
            )
        profile = run_benchmark(
            ws, task, self.transport, self.framework,
            iters=self.config.iters, warmup=self.config.warmup,
            util_threshold=self.config.util_threshold,
        )
        self._baseline_cache[task.id] = profile.mean_ms
        return profile.mean_ms

    # -- the four-stage protocol

    def evaluate_candidate(self, ws: Workspace, task: TaskSpec,
                           candidate: KernelCandidate) -> CandidateOutcome:
        """Inject, build, verify, benchmark, short-circuiting on the first
        failure; the workspace is restored on every exit path."""
        outcome = CandidateOutcome(task_id=task.id, category=task.category)
        bench_enabled = not self.config.no_bench

        try:
            if bench_enabled:
                outcome.t_baseline_ms = self.baseline_latency(ws, task)
            else:
                self.ensure_precompiled(ws)
        except (KernelForgeError, OSError) as exc:
            outcome.infra_error = f"baseline stage: {exc}"
            candidate.advance(CandidateStage.FAILED)
            outcome.stage = candidate.stage
            return outcome

        injected = False
        try:
            try:
                inject(ws, task, candidate, self.framework.operator_locations)
                injected = True
            except (AlreadyInjectedError, TargetNotFoundError, OSError) as exc:
                outcome.infra_error = f"injection stage: {exc}"
                candidate.advance(CandidateStage.FAILED)
                return outcome

            outcome.build = build(
                ws, self.framework, self._build_mode(ws),
                timeout_s=self.config.build_timeout_s, jobs=self.config.jobs,
            )
            if not outcome.build.success:
                candidate.advance(CandidateStage.FAILED)
                records = extract_errors(outcome.build.log_text, set(candidate.files))
                records = attach_contexts(records, ws.root)
                outcome.errors = tuple(records)
                outcome.diagnosis = group_errors(records, op_name=task.operator_name)
                return outcome
            candidate.advance(CandidateStage.COMPILED)

            try:
                outcome.verify = run_verification(
                    ws, task, self.transport, self.framework,
                    tolerance=self.config.tolerance,
                )
            except (ExecutionFailureError, OutputMissingError) as exc:
                outcome.exec_error = str(exc)
                if isinstance(exc, ExecutionFailureError) and exc.output:
                    outcome.exec_error += f"\ncaptured output:\n{exc.output}"
                candidate.advance(CandidateStage.FAILED)
                outcome.target_graph = self._inspect(ws, task)
                return outcome
            if not outcome.verify.passed:
                candidate.advance(CandidateStage.FAILED)
                outcome.target_graph = self._inspect(ws, task)
                return outcome
            candidate.advance(CandidateStage.VERIFIED)

            if bench_enabled:
                try:
                    outcome.perf = run_benchmark(
                        ws, task, self.transport, self.framework,
                        iters=self.config.iters, warmup=self.config.warmup,
                        util_threshold=self.config.util_threshold,
                    )
                    outcome.speedup = compute_speedup(outcome.t_baseline_ms, outcome.perf)
                    candidate.advance(CandidateStage.BENCHMARKED)
                except (DeviceBusyError, ExecutionFailureError, MalformedPerfLogError) as exc:
                    # Correctness stands; only the timing is missing.
                    outcome.infra_error = f"benchmark stage: {exc}"
            return outcome
        finally:
            if injected:
                try:
                    restore(ws)
                except NothingInjectedError:
                    pass
            outcome.stage = candidate.stage

    def evaluator(self):
        """Callable for run_episode, bound to this pipeline."""
        def _evaluate(ws, task, candidate):
            return self.evaluate_candidate(ws, task, candidate)
        return _evaluate

    def _inspect(self, ws: Workspace, task: TaskSpec) -> GraphDesc | None:
        """Run the framework inspector to get the converted operator's graph
        document; inspection failures degrade to no target graph."""
        try:
            session = self.transport.session_dir(f"inspect-{task.id}")
            remote_inputs = []
            for k, local in enumerate(task.reference_inputs):
                remote = f"{session}/in_{k}.tensor"
                self.transport.push(local, remote)
                remote_inputs.append(remote)
            runner = self.framework.stage_runner(ws, self.transport, session)
            command = self.framework.inspect_command(
                runner=runner, op=task.operator_name, inputs=remote_inputs,
                attributes=task.attributes.as_dict(),
            )
            result = self.transport.exec(command)
            if result.exit_code != 0:
                return None
            return parse_graph(result.stdout)
        except (KernelForgeError, OSError) as exc:
            logger.warning("inspection failed for task %s: %s", task.id, exc)
            return None


def load_candidate_dir(task: TaskSpec, candidate_dir: str | Path,
                       iteration: int = 0) -> KernelCandidate:
    """Candidate from a directory holding one file per target file name."""
    directory = Path(candidate_dir)
    files = {}
    for name in task.target_file_names:
        path = directory / name
        if not path.is_file():
            raise MissingFileError(f"task {task.id}: {path} not found")
        files[name] = path.read_text()
    return KernelCandidate.for_task(task, files, iteration)


def parallel_evaluate(pipeline: Pipeline, ws: Workspace, task: TaskSpec,
                      candidates: list[KernelCandidate],
                      jobs: int | None = None,
                      clone_dir: str | Path | None = None) -> list[CandidateOutcome]:
    """Evaluate a group of candidates on cloned, isolated workspaces.

    Results are returned in input order; one candidate's failure never
    aborts its siblings. jobs bounds in-flight work.
    """
    if not candidates:
        return []
    jobs = jobs or pipeline.config.jobs
    if not pipeline.config.no_bench:
        # Resolve the baseline once, sequentially, so clones share the cache.
        pipeline.baseline_latency(ws, task)

    src_precompiled = str(ws.root.resolve()) in pipeline._precompiled

    def evaluate_one(index: int, candidate: KernelCandidate) -> CandidateOutcome:
        try:
            clone = clone_workspace(ws, label=f"cand{index}", dest_dir=clone_dir)
        except (CloneOfInjectedError, OSError) as exc:
            outcome = CandidateOutcome(task_id=task.id, category=task.category)
            outcome.infra_error = f"clone stage: {exc}"
            candidate.advance(CandidateStage.FAILED)
            outcome.stage = candidate.stage
            return outcome
        try:
            if src_precompiled:
                pipeline.mark_precompiled(clone)
            return pipeline.evaluate_candidate(clone, task, candidate)
        finally:
            shutil.rmtree(clone.root, ignore_errors=True)

    if jobs == 1:
        return [evaluate_one(i, c) for i, c in enumerate(candidates)]
    with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(evaluate_one, i, c) for i, c in enumerate(candidates)]
        return [f.result() for f in futures]
