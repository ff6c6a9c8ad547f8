"""Coder / Debugger / Accelerator loop: context-aware prompt construction,
structured plan parsing, candidate extraction, reflective history, and the
iterative episode driver.

The LLM sits behind a one-method client so tests can script the whole
episode. The evaluation pipeline is injected as a callable so episodes run
against the real pipeline or a recorded one interchangeably.
"""

from __future__ import annotations

import json
import logging
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path

import requests

from .exceptions import (
    ClientError,
    ExtraneousFileError,
    MalformedPlanError,
    MissingBankEntryError,
    MissingFileError,
    NoBlockFoundError,
)
from .graphs import GraphDesc, graph_to_doc
from .tasks import Mechanism, OperatorCategory, TaskSpec
from .workspace import CandidateStage, KernelCandidate

logger = logging.getLogger(__name__)

DEFAULT_MAX_ITERS = 10
REPAIR_TAG = "error_suggestion"
CORRECTION_TAG = "functionality_suggestion"
ACCELERATION_TAG = "json"

ENDPOINT_ENV = "KF_LLM_ENDPOINT"
API_KEY_ENV = "KF_LLM_API_KEY"


# ---------------------------------------------------------------------------
# Clients

class LlmClient:
    def complete(self, prompt: str) -> str:
        raise NotImplementedError


class ScriptedLlmClient(LlmClient):
    """Deterministic client: responses come from a fixed transcript keyed by
    call index. Safe for concurrent use."""

    def __init__(self, transcript: list[str]):
        self._transcript = list(transcript)
        self._index = 0
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedLlmClient":
        raw = json.loads(Path(path).read_text())
        if not isinstance(raw, list) or not all(isinstance(r, str) for r in raw):
            raise ClientError(f"transcript {path} must be a JSON list of strings")
        return cls(raw)

    @property
    def calls_made(self) -> int:
        return self._index

    def complete(self, prompt: str) -> str:
        with self._lock:
            if self._index >= len(self._transcript):
                raise ClientError(
                    f"transcript exhausted after {self._index} calls"
                )
            response = self._transcript[self._index]
            self._index += 1
            return response


class HttpLlmClient(LlmClient):
    """Minimal JSON-over-HTTP client: POST {"prompt": ...} with a bearer key,
    read the completion from the response's "completion" or "text" field."""

    def __init__(self, endpoint: str, api_key: str = "", timeout_s: float = 300.0):
        self.endpoint = endpoint
        self.api_key = api_key
        self.timeout_s = timeout_s

    @classmethod
    def from_env(cls) -> "HttpLlmClient":
        import os
        endpoint = os.environ.get(ENDPOINT_ENV)
        if not endpoint:
            raise ClientError(f"{ENDPOINT_ENV} is not set")
        return cls(endpoint=endpoint, api_key=os.environ.get(API_KEY_ENV, ""))

    def complete(self, prompt: str) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            response = requests.post(
                self.endpoint, json={"prompt": prompt}, headers=headers,
                timeout=self.timeout_s,
            )
            response.raise_for_status()
            payload = response.json()
        except requests.RequestException as exc:
            raise ClientError(f"LLM endpoint failure: {exc}") from exc
        for key in ("completion", "text", "response"):
            if isinstance(payload.get(key), str):
                return payload[key]
        raise ClientError("LLM response carries no completion field")


# ---------------------------------------------------------------------------
# Plans and history

class PlanKind:
    REPAIR = "Repair"
    CORRECTION = "Correction"
    ACCELERATION = "Acceleration"


@dataclass(frozen=True)
class RepairPlan:
    local_suggestions: tuple[str, ...]
    crossfile_suggestions: tuple[str, ...]


@dataclass(frozen=True)
class AccelerationPlan:
    bottleneck: str
    method: str
    plan: str


@dataclass(frozen=True)
class AgentPlan:
    kind: str
    repair: RepairPlan | None = None
    correction: tuple[str, ...] | None = None
    acceleration: AccelerationPlan | None = None

    def __post_init__(self):
        populated = {
            PlanKind.REPAIR: self.repair is not None,
            PlanKind.CORRECTION: self.correction is not None,
            PlanKind.ACCELERATION: self.acceleration is not None,
        }
        if self.kind not in populated:
            raise ValueError(f"unknown plan kind {self.kind!r}")
        for kind, present in populated.items():
            if present != (kind == self.kind):
                raise ValueError(f"plan of kind {self.kind} must populate exactly its own field")


@dataclass(frozen=True)
class HistoryEntry:
    iteration: int
    plan_kind: str  # "initial", a PlanKind value, or "parse_failure"
    plan: AgentPlan | None
    outcome: dict

    def to_dict(self) -> dict:
        plan_dict = None
        if self.plan is not None:
            plan_dict = {"kind": self.plan.kind}
            if self.plan.repair:
                plan_dict["repair"] = {
                    "local_suggestions": list(self.plan.repair.local_suggestions),
                    "crossfile_suggestions": list(self.plan.repair.crossfile_suggestions),
                }
            if self.plan.correction is not None:
                plan_dict["correction"] = list(self.plan.correction)
            if self.plan.acceleration:
                plan_dict["acceleration"] = {
                    "bottleneck": self.plan.acceleration.bottleneck,
                    "method": self.plan.acceleration.method,
                    "plan": self.plan.acceleration.plan,
                }
        return {
            "iteration": self.iteration,
            "plan_kind": self.plan_kind,
            "plan": plan_dict,
            "outcome": dict(self.outcome),
        }


@dataclass
class EpisodeResult:
    task_id: str
    candidates: list  # [(KernelCandidate, EvaluationResult)]
    best: int | None
    history: list[HistoryEntry]

    def to_dict(self, mask_timing: bool = False) -> dict:
        timing_keys = {"latency_ms", "t_generated_ms", "t_baseline_ms", "duration_s"}

        def scrub(outcome: dict) -> dict:
            if not mask_timing:
                return dict(outcome)
            return {k: ("<timing>" if k in timing_keys else v) for k, v in outcome.items()}

        return {
            "task_id": self.task_id,
            "best": self.best,
            "candidates": [
                {
                    "iteration": cand.iteration,
                    "stage": cand.stage.value,
                    "files": dict(cand.files),
                    "compiled": ev.compiled,
                    "correct": ev.correct,
                    "speedup": None if mask_timing else ev.speedup,
                }
                for cand, ev in self.candidates
            ],
            "history": [
                {**e.to_dict(), "outcome": scrub(e.outcome)} for e in self.history
            ],
        }


def select_best(candidates: list) -> int | None:
    """Index of the best candidate under Benchmarked-with-highest-speedup >
    Verified > Compiled > Failed; earliest iteration wins ties."""
    if not candidates:
        return None

    def rank(pair):
        cand, ev = pair
        if cand.stage is CandidateStage.BENCHMARKED:
            return (3, ev.speedup or 0.0)
        if cand.stage is CandidateStage.VERIFIED:
            return (2, 0.0)
        if cand.stage is CandidateStage.COMPILED:
            return (1, 0.0)
        return (0, 0.0)

    best = 0
    for i in range(1, len(candidates)):
        if rank(candidates[i]) > rank(candidates[best]):
            best = i
    return best


# ---------------------------------------------------------------------------
# Prompt banks

@dataclass
class PromptBanks:
    header_bank: dict[OperatorCategory, str]
    example_bank: dict[Mechanism, str]

    @classmethod
    def load(cls, header_path: str | Path, example_path: str | Path) -> "PromptBanks":
        headers_raw = json.loads(Path(header_path).read_text())
        examples_raw = json.loads(Path(example_path).read_text())
        return cls(
            header_bank={
                OperatorCategory.from_name(k): v for k, v in headers_raw.items()
            },
            example_bank={Mechanism.from_name(k): v for k, v in examples_raw.items()},
        )

    @classmethod
    def default(cls) -> "PromptBanks":
        data_dir = Path(__file__).parent / "data"
        return cls.load(data_dir / "header_bank.json", data_dir / "example_bank.json")


def _op_info(task: TaskSpec) -> str:
    return json.dumps({
        "operator": task.operator_name,
        "category": task.category.value,
        "mechanism": task.mechanism.value,
        "attributes": task.attributes.as_dict(),
    }, indent=2)


def _code_book(candidate: KernelCandidate) -> str:
    parts = []
    for name, text in candidate.files.items():
        parts.append(f"```\n{name}\n{text}\n```")
    return "\n\n".join(parts)


def _file_instruction(target_file_names) -> str:
    names = list(target_file_names)
    if len(names) == 1:
        listed = names[0]
        plural = "file"
    else:
        listed = ", ".join(names[:-1]) + " and " + names[-1]
        plural = "files separately"
    return (
        f"Write the {listed} {plural}. Respond with one fenced code block per "
        "file, and put the file name on the very first line inside its block."
    )


def build_initial_prompt(task: TaskSpec, header_bank: dict[OperatorCategory, str],
                         example_bank: dict[Mechanism, str]) -> str:
    if task.category not in header_bank:
        raise MissingBankEntryError(f"no header bank entry for category {task.category.value}")
    if task.mechanism not in example_bank:
        raise MissingBankEntryError(f"no example bank entry for mechanism {task.mechanism.value}")
    reference_doc = task.reference_graph.read_text()
    return "\n".join([
        "You are a mobile model-deployment engineer, fluent in C++ and the",
        "target inference framework's coding conventions. A reference operator",
        "graph will be converted into the framework's computation graph; write",
        "C++ source implementing this operator for the framework's CPU backend.",
        "",
        "Rules:",
        "- Study the example carefully before writing code.",
        "- Reply with code only; no explanations outside the code blocks.",
        "- Call only the framework's public APIs.",
        "- Each file name must appear as the very first line inside its code block.",
        "- Keep the implementation self-contained; minimize coupling to framework internals.",
        "",
        f"## Framework headers for {task.category.value} operators",
        header_bank[task.category],
        "",
        f"## Worked example ({task.mechanism.value} mechanism)",
        example_bank[task.mechanism],
        "",
        "## Reference operator graph",
        reference_doc,
        "",
        f"operator information: {_op_info(task)}",
        "",
        _file_instruction(task.target_file_names),
    ])


def build_repair_prompt(task: TaskSpec, candidate: KernelCandidate, diagnosis: dict) -> str:
    return "\n".join([
        "An operator implementation for the target framework failed to build.",
        "",
        f"operator information: {_op_info(task)}",
        "",
        "Current implementation:",
        _code_book(candidate),
        "",
        "Structured build diagnostics:",
        json.dumps(diagnosis, indent=2),
        "",
        "Analyze the build errors and give repair suggestions for this code.",
        "Rules:",
        "- Text suggestions only; keep each one short and direct.",
        "- Cover every error listed above.",
        "- Suggest changes to the current files only; all other framework code",
        "  is correct and read-only reference.",
        "- For local errors, fix the offending snippet; for cross-file errors,",
        "  adjust this code to match the referenced definitions.",
        "",
        f"Reply with exactly one fenced block tagged {REPAIR_TAG}:",
        f"```{REPAIR_TAG}",
        "{",
        '    "local_error_suggestion": [],',
        '    "crossfile_error_suggestion": []',
        "}",
        "```",
    ])


def build_correction_prompt(task: TaskSpec, candidate: KernelCandidate, exec_error: str,
                            ref_graph: GraphDesc, target_graph: GraphDesc) -> str:
    return "\n".join([
        "An operator implementation built successfully but failed differential",
        "testing against the reference.",
        "",
        f"operator information: {_op_info(task)}",
        "",
        "Current implementation:",
        _code_book(candidate),
        "",
        "Execution report:",
        exec_error,
        "",
        "Reference graph document:",
        graph_to_doc(ref_graph),
        "",
        "Target framework graph document:",
        graph_to_doc(target_graph),
        "",
        "Compare the two graph documents together with the execution report and",
        "give suggestions that make this implementation functionally correct.",
        "Rules:",
        "- Text suggestions only; short and direct.",
        "- Suggest changes to the current files only.",
        "",
        f"Reply with exactly one fenced block tagged {CORRECTION_TAG}:",
        f"```{CORRECTION_TAG}",
        "{",
        '    "suggestion1": ""',
        "}",
        "```",
    ])


def build_acceleration_prompt(task: TaskSpec, candidate: KernelCandidate, perf,
                              history: list[HistoryEntry]) -> str:
    history_lines = []
    for entry in history:
        if entry.plan is not None and entry.plan.kind == PlanKind.ACCELERATION:
            acc = entry.plan.acceleration
            outcome = entry.outcome
            history_lines.append(
                f"- iteration {entry.iteration}: method: {acc.method} | plan: {acc.plan} "
                f"| outcome: {json.dumps(outcome)}"
            )
    history_text = "\n".join(history_lines) if history_lines else "(none)"
    perf_text = "\n".join([
        f"mean latency: {perf.mean_ms:.6f} ms over {len(perf.samples_us)} iterations "
        f"(median {perf.median_ms:.6f} ms)",
        f"backend: {perf.backend}",
        f"threads: {perf.threads}",
    ])
    return "\n".join([
        "You are a performance engineer for the target framework's CPU backend.",
        "Analyze this operator implementation and speed it up.",
        "",
        f"operator information: {_op_info(task)}",
        "",
        "Current implementation:",
        _code_book(candidate),
        "",
        "Current performance:",
        perf_text,
        "",
        "History of optimization attempts on similar operators:",
        history_text,
        "",
        "Identify exactly one highest-impact speed bottleneck and propose",
        "exactly one optimization method with a concrete modification plan.",
        "Rules:",
        "- Return exactly one method: the one with the largest expected speedup.",
        "- Keep every field brief; no lists of alternatives or generic advice.",
        "- Do not repeat a method already attempted in the history above.",
        "",
        "Output format (JSON):",
        f"```{ACCELERATION_TAG}",
        "{",
        '  "bottleneck": "<max 100 words>",',
        '  "optimisation method": "<max 100 words>",',
        '  "modification plan": "<max 100 words>"',
        "}",
        "```",
    ])


def build_refinement_prompt(task: TaskSpec, candidate: KernelCandidate, plan: AgentPlan) -> str:
    if plan.kind == PlanKind.ACCELERATION:
        acc = plan.acceleration
        directive = "\n".join([
            "Implement this optimization plan without breaking correctness:",
            f"- bottleneck: {acc.bottleneck}",
            f"- optimization method: {acc.method}",
            f"- modification plan: {acc.plan}",
        ])
    elif plan.kind == PlanKind.REPAIR:
        suggestions = list(plan.repair.local_suggestions) + list(plan.repair.crossfile_suggestions)
        directive = "Apply these repair suggestions:\n" + "\n".join(f"- {s}" for s in suggestions)
    else:
        directive = "Apply these correction suggestions:\n" + "\n".join(
            f"- {s}" for s in plan.correction
        )
    return "\n".join([
        f"Revise your implementation of operator {task.operator_name}.",
        "",
        "Current implementation:",
        _code_book(candidate),
        "",
        directive,
        "",
        "Reply with the complete revised file contents only; no prose, no",
        "markdown commentary outside the code blocks.",
        _file_instruction(task.target_file_names),
    ])


# ---------------------------------------------------------------------------
# Response parsing

_FENCE_RE = re.compile(r"^```([^\n`]*)\s*$")


def _fenced_blocks(response: str) -> list[tuple[str, str]]:
    """(tag, content) for every fenced block, in order."""
    blocks = []
    tag = None
    content: list[str] = []
    for line in response.splitlines():
        m = _FENCE_RE.match(line.strip())
        if m:
            if tag is None:
                tag = m.group(1).strip()
                content = []
            else:
                blocks.append((tag, "\n".join(content)))
                tag = None
        elif tag is not None:
            content.append(line)
    return blocks


def _lenient_json(text: str) -> dict:
    """json.loads with tolerance for trailing commas and one stray outer
    brace layer (both common in model output)."""
    attempts = [text]
    no_trailing = re.sub(r",(\s*[}\]])", r"\1", text)
    attempts.append(no_trailing)
    inner = no_trailing.strip()
    if inner.startswith("{") and inner.endswith("}"):
        body = inner[1:-1].strip()
        if body.startswith("{") and body.endswith("}"):
            attempts.append(body)
    last_error = None
    for attempt in attempts:
        try:
            parsed = json.loads(attempt)
        except json.JSONDecodeError as exc:
            last_error = exc
            continue
        if isinstance(parsed, dict):
            return parsed
        last_error = ValueError("plan block is not a JSON object")
    raise MalformedPlanError(f"plan block does not parse: {last_error}", raw_block=text)


_EXPECTED_TAGS = {
    PlanKind.REPAIR: REPAIR_TAG,
    PlanKind.CORRECTION: CORRECTION_TAG,
    PlanKind.ACCELERATION: ACCELERATION_TAG,
}


def _string_list(value) -> tuple[str, ...]:
    if value is None:
        return ()
    if isinstance(value, str):
        return (value,) if value.strip() else ()
    if isinstance(value, list):
        return tuple(str(v) for v in value if str(v).strip())
    if isinstance(value, dict):
        return tuple(str(v) for v in value.values() if str(v).strip())
    return (str(value),)


def parse_plan(response: str, expected: str) -> AgentPlan:
    """Extract the last fenced block matching the expected kind's tag and
    parse it; tolerant of surrounding prose."""
    tag = _EXPECTED_TAGS[expected]
    matching = [content for block_tag, content in _fenced_blocks(response) if block_tag == tag]
    if not matching:
        raise NoBlockFoundError(f"no ```{tag} block in response")
    raw = matching[-1]
    parsed = _lenient_json(raw)

    if expected == PlanKind.REPAIR:
        return AgentPlan(
            kind=PlanKind.REPAIR,
            repair=RepairPlan(
                local_suggestions=_string_list(parsed.get("local_error_suggestion")),
                crossfile_suggestions=_string_list(parsed.get("crossfile_error_suggestion")),
            ),
        )
    if expected == PlanKind.CORRECTION:
        suggestions = _string_list(parsed)
        return AgentPlan(kind=PlanKind.CORRECTION, correction=suggestions)

    bottleneck = parsed.get("bottleneck")
    method = parsed.get("optimisation method") or parsed.get("optimization method") or parsed.get("method")
    plan_text = parsed.get("modification plan") or parsed.get("plan")
    if not (bottleneck and method and plan_text):
        raise MalformedPlanError(
            "acceleration plan requires bottleneck, optimisation method, and modification plan",
            raw_block=raw,
        )
    return AgentPlan(
        kind=PlanKind.ACCELERATION,
        acceleration=AccelerationPlan(
            bottleneck=str(bottleneck), method=str(method), plan=str(plan_text),
        ),
    )


_NAME_LINE_RE = re.compile(r"^(?://|/\*|#)?\s*(?P<name>[\w.+-]+)\s*(?:\*/)?\s*:?\s*$")


def parse_candidate(response: str, task: TaskSpec, iteration: int = 0) -> KernelCandidate:
    """Extract one fenced code block per target file.

    The first non-empty line inside each block must name the file (an
    optional comment marker or trailing colon around the name is accepted).
    """
    found: dict[str, str] = {}
    targets = set(task.target_file_names)
    for _tag, content in _fenced_blocks(response):
        lines = content.splitlines()
        head_index = next((i for i, l in enumerate(lines) if l.strip()), None)
        if head_index is None:
            continue
        m = _NAME_LINE_RE.match(lines[head_index].strip())
        if not m:
            continue
        name = m.group("name")
        if name not in targets:
            raise ExtraneousFileError(
                f"task {task.id}: code block names unexpected file {name!r}"
            )
        found[name] = "\n".join(lines[head_index + 1:]).strip("\n") + "\n"
    missing = [n for n in task.target_file_names if n not in found]
    if missing:
        raise MissingFileError(f"task {task.id}: no code block for {missing[0]!r}")
    ordered = {name: found[name] for name in task.target_file_names}
    return KernelCandidate.for_task(task, ordered, iteration)


# ---------------------------------------------------------------------------
# Episode driver

FORMAT_REMINDER = (
    "\n\nReminder: your previous reply did not follow the required output "
    "format. Follow the format instructions exactly this time."
)


def _outcome_summary(candidate: KernelCandidate, outcome) -> dict:
    summary = {"stage": candidate.stage.value}
    if outcome.verify is not None:
        summary["max_abs_diff"] = outcome.verify.max_abs_diff
    if outcome.perf is not None:
        summary["latency_ms"] = outcome.perf.mean_ms
    if outcome.speedup is not None:
        summary["speedup"] = outcome.speedup
    return summary


def _complete_with_retry(client: LlmClient, prompt: str, parse) :
    """One parse attempt plus one re-ask with a format reminder appended.
    Returns (parsed, response) or (None, last_response) after the second failure."""
    response = client.complete(prompt)
    try:
        return parse(response), response
    except (NoBlockFoundError, MalformedPlanError, MissingFileError, ExtraneousFileError) as first:
        logger.warning("unparseable model output (%s); re-asking once", first)
    response = client.complete(prompt + FORMAT_REMINDER)
    try:
        return parse(response), response
    except (NoBlockFoundError, MalformedPlanError, MissingFileError, ExtraneousFileError) as second:
        logger.warning("model output unparseable after re-ask: %s", second)
        return None, response


def _last_acceleration_plan(history: list[HistoryEntry]) -> AccelerationPlan | None:
    for entry in reversed(history):
        if entry.plan is not None and entry.plan.kind == PlanKind.ACCELERATION:
            return entry.plan.acceleration
    return None


def run_episode(task: TaskSpec, ws, client: LlmClient, evaluator, banks: PromptBanks,
                ref_graph: GraphDesc | None = None,
                max_iters: int = DEFAULT_MAX_ITERS,
                on_iteration=None) -> EpisodeResult:
    """Drive one plan-and-execute episode over the pipeline.

    evaluator(ws, task, candidate) must return an object with: stage
    (CandidateStage), build (BuildResult|None), diagnosis (dict|None), verify
    (VerifyResult|None), exec_error (str|None), target_graph (GraphDesc|None),
    perf (PerfProfile|None), speedup (float|None), and an evaluation(iteration)
    method producing a metrics.EvaluationResult. It owns inject/build/verify/
    bench and must restore the workspace before returning.

    Routing: build failure -> Debugger repair plan; verification failure ->
    Debugger correction plan; verified -> Accelerator plan. Every iteration
    appends a HistoryEntry; a plan or candidate that stays unparseable after
    one re-ask consumes its iteration as Failed.
    """
    from .graphs import load_graph

    if ref_graph is None:
        ref_graph = load_graph(task.reference_graph)

    history: list[HistoryEntry] = []
    candidates: list = []
    last_candidate: KernelCandidate | None = None
    last_outcome = None

    def partial() -> EpisodeResult:
        return EpisodeResult(
            task_id=task.id,
            candidates=candidates,
            best=select_best(candidates),
            history=history,
        )

    for iteration in range(max_iters):
        plan: AgentPlan | None = None
        plan_kind = "initial"

        try:
            if last_candidate is None or last_outcome is None:
                prompt = build_initial_prompt(task, banks.header_bank, banks.example_bank)
            else:
                build_failed = last_outcome.build is not None and not last_outcome.build.success
                if build_failed:
                    expected = PlanKind.REPAIR
                elif last_outcome.verify is None or not last_outcome.verify.passed:
                    expected = PlanKind.CORRECTION
                else:
                    expected = PlanKind.ACCELERATION

                if expected == PlanKind.REPAIR:
                    plan_prompt = build_repair_prompt(
                        task, last_candidate, last_outcome.diagnosis or {}
                    )
                elif expected == PlanKind.CORRECTION:
                    target_graph = last_outcome.target_graph or GraphDesc()
                    plan_prompt = build_correction_prompt(
                        task, last_candidate,
                        last_outcome.exec_error or _verify_report(last_outcome),
                        ref_graph, target_graph,
                    )
                else:
                    plan_prompt = build_acceleration_prompt(
                        task, last_candidate, last_outcome.perf, history
                    )

                plan, _ = _complete_with_retry(
                    client, plan_prompt, lambda r: parse_plan(r, expected)
                )
                if plan is None:
                    history.append(HistoryEntry(
                        iteration=iteration, plan_kind="parse_failure", plan=None,
                        outcome={"stage": CandidateStage.FAILED.value,
                                 "reason": f"unparseable {expected} plan"},
                    ))
                    continue
                plan_kind = plan.kind
                if plan.kind == PlanKind.ACCELERATION:
                    previous = _last_acceleration_plan(history)
                    if previous is not None and previous == plan.acceleration:
                        logger.warning(
                            "task %s iteration %d: acceleration plan repeats the previous "
                            "plan verbatim; history is fed back to discourage repetition",
                            task.id, iteration,
                        )
                prompt = build_refinement_prompt(task, last_candidate, plan)

            candidate, _ = _complete_with_retry(
                client, prompt, lambda r: parse_candidate(r, task, iteration)
            )
        except ClientError as exc:
            exc.partial_result = partial()
            raise

        if candidate is None:
            history.append(HistoryEntry(
                iteration=iteration, plan_kind="parse_failure", plan=plan,
                outcome={"stage": CandidateStage.FAILED.value,
                         "reason": "unparseable candidate"},
            ))
            continue

        outcome = evaluator(ws, task, candidate)
        evaluation = outcome.evaluation(iteration)
        candidates.append((candidate, evaluation))
        entry = HistoryEntry(
            iteration=iteration, plan_kind=plan_kind, plan=plan,
            outcome=_outcome_summary(candidate, outcome),
        )
        history.append(entry)
        last_candidate, last_outcome = candidate, outcome
        if on_iteration is not None:
            on_iteration(iteration, candidate, evaluation, entry)

    return partial()


def _verify_report(outcome) -> str:
    verify = outcome.verify
    if verify is None:
        return "verification did not run"
    return (
        f"differential test failed: max_abs_diff={verify.max_abs_diff:g} "
        f"(tolerance {verify.tolerance:g}), {verify.mismatch_count} mismatched "
        f"element(s), first at flat index {verify.first_mismatch_index}"
    )
