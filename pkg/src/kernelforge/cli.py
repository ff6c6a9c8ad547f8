"""Command-line surface: validate, eval, agent, bench, report, reward, and
workspace maintenance, mirroring the RunConfig knobs as flags.

eval exit codes: 0 benchmarked (or verified under --no-bench), 2 compile
failure, 3 verification failure, 4 infrastructure error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import agents
from .build import DEFAULT_BUILD_TIMEOUT_S
from .config import FrameworkConfig, RunConfig
from .exceptions import ClientError, KernelForgeError
from .metrics import (
    append_record,
    best_of,
    compute_metrics,
    emit_report,
    grpo_reward,
    read_results,
    render_table,
    result_to_record,
)
from .pipeline import EXIT_INFRA, Pipeline, load_candidate_dir, parallel_evaluate
from .tasks import category_histogram, load_manifest
from .transport import make_transport
from .workspace import Workspace, clone_workspace, restore

logger = logging.getLogger(__name__)


def _add_run_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--manifest", required=True, help="task manifest path")
    parser.add_argument("--framework-root", required=True, help="framework checkout root")
    parser.add_argument("--framework-config", required=True, help="framework config JSON")
    parser.add_argument("--transport", default="local", help='"local" or "device:<serial>"')
    parser.add_argument("--tolerance", type=float, default=1e-4)
    parser.add_argument("--iters", type=int, default=100)
    parser.add_argument("--warmup", type=int, default=5)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--build-timeout", type=float, default=DEFAULT_BUILD_TIMEOUT_S)
    parser.add_argument("--util-threshold", type=float, default=0.10)
    parser.add_argument("--no-bench", action="store_true",
                        help="skip the benchmark stage (result still Verified)")
    parser.add_argument("--remeasure-baseline", action="store_true")
    parser.add_argument("--results", help="append-only results file (JSONL)")


def _run_config(args) -> RunConfig:
    return RunConfig(
        manifest_path=Path(args.manifest),
        framework_root=Path(args.framework_root),
        framework_config_path=Path(args.framework_config),
        transport_spec=args.transport,
        tolerance=args.tolerance,
        iters=args.iters,
        warmup=args.warmup,
        max_iters=getattr(args, "max_iters", 10),
        jobs=args.jobs,
        results_path=Path(args.results) if args.results else None,
        build_timeout_s=args.build_timeout,
        util_threshold=args.util_threshold,
        no_bench=args.no_bench,
        remeasure_baseline=args.remeasure_baseline,
    )


def _make_pipeline(args) -> tuple[Pipeline, Workspace, object]:
    config = _run_config(args)
    framework = FrameworkConfig.load(args.framework_config)
    transport = make_transport(args.transport)
    ws = Workspace(root=Path(args.framework_root))
    manifest = load_manifest(args.manifest)
    return Pipeline(framework, transport, config), ws, manifest


def _print_outcome(outcome, label: str = ""):
    prefix = f"[{label}] " if label else ""
    print(f"{prefix}[1/4] registration: "
          + ("done" if outcome.build is not None else f"failed ({outcome.infra_error})"))
    if outcome.build is not None:
        status = "success" if outcome.build.success else "failed"
        print(f"{prefix}[2/4] compilation: {status} in {outcome.build.duration_s:.2f}s "
              f"({'incremental' if outcome.build.incremental else 'full'})")
        if not outcome.build.success:
            print(f"{prefix}        {len(outcome.errors)} error record(s) extracted")
    if outcome.verify is not None:
        status = "passed" if outcome.verify.passed else "failed"
        print(f"{prefix}[3/4] verification: {status} "
              f"(max_abs_diff={outcome.verify.max_abs_diff:g}, "
              f"tolerance={outcome.verify.tolerance:g})")
    elif outcome.exec_error:
        print(f"{prefix}[3/4] verification: execution failure")
    if outcome.perf is not None:
        print(f"{prefix}[4/4] benchmark: mean {outcome.perf.mean_ms:.6f} ms over "
              f"{len(outcome.perf.samples_us)} iters, "
              f"baseline {outcome.t_baseline_ms:.6f} ms, "
              f"speedup {outcome.speedup:.2f}")
    elif outcome.infra_error and outcome.build is not None and outcome.build.success:
        print(f"{prefix}[4/4] benchmark: {outcome.infra_error}")


def cmd_validate(args) -> int:
    try:
        manifest = load_manifest(args.manifest)
    except KernelForgeError as exc:
        print(f"invalid manifest: {exc}", file=sys.stderr)
        return 1
    histogram = category_histogram(manifest)
    print(f"manifest OK: {len(manifest)} task(s)")
    for category, count in histogram.items():
        print(f"  {category.value:<14} {count}")
    return 0


def cmd_eval(args) -> int:
    try:
        pipeline, ws, manifest = _make_pipeline(args)
        task = manifest.task(args.task_id)
    except (KernelForgeError, KeyError, OSError) as exc:
        print(f"infra error: {exc}", file=sys.stderr)
        return EXIT_INFRA

    dirs = args.candidate_dir
    try:
        candidates = [load_candidate_dir(task, d, iteration=i) for i, d in enumerate(dirs)]
    except KernelForgeError as exc:
        print(f"infra error: {exc}", file=sys.stderr)
        return EXIT_INFRA

    if len(candidates) == 1:
        outcomes = [pipeline.evaluate_candidate(ws, task, candidates[0])]
    else:
        outcomes = parallel_evaluate(pipeline, ws, task, candidates, jobs=args.jobs)

    exit_code = 0
    for i, outcome in enumerate(outcomes):
        label = str(dirs[i]) if len(outcomes) > 1 else ""
        _print_outcome(outcome, label)
        if args.results:
            append_record(args.results, result_to_record(outcome.evaluation(iteration=i)))
        exit_code = max(exit_code, outcome.exit_code(no_bench=args.no_bench))
    return exit_code


def cmd_agent(args) -> int:
    try:
        pipeline, ws, manifest = _make_pipeline(args)
        task = manifest.task(args.task_id)
        if args.transcript:
            client = agents.ScriptedLlmClient.from_file(args.transcript)
        else:
            client = agents.HttpLlmClient.from_env()
        if args.header_bank and args.example_bank:
            banks = agents.PromptBanks.load(args.header_bank, args.example_bank)
        else:
            banks = agents.PromptBanks.default()
    except (KernelForgeError, KeyError, OSError) as exc:
        print(f"infra error: {exc}", file=sys.stderr)
        return EXIT_INFRA

    def on_iteration(iteration, candidate, evaluation, entry):
        if args.results:
            record = result_to_record(evaluation)
            record["plan_kind"] = entry.plan_kind
            append_record(args.results, record)
        print(f"iteration {iteration}: stage {candidate.stage.value}")

    try:
        episode = agents.run_episode(
            task, ws, client, pipeline.evaluator(), banks,
            max_iters=args.max_iters, on_iteration=on_iteration,
        )
    except ClientError as exc:
        if exc.partial_result is not None and args.results:
            append_record(args.results, {
                "record": "episode_summary",
                "task_id": task.id,
                "partial": True,
                **exc.partial_result.to_dict(),
            })
        print(f"infra error: {exc}", file=sys.stderr)
        return EXIT_INFRA

    if args.results:
        append_record(args.results, {
            "record": "episode_summary",
            "partial": False,
            **episode.to_dict(),
        })
    best_label = "none"
    if episode.best is not None:
        best_cand, best_eval = episode.candidates[episode.best]
        best_label = f"iteration {best_cand.iteration} ({best_cand.stage.value}"
        if best_eval.speedup is not None:
            best_label += f", speedup {best_eval.speedup:.2f}"
        best_label += ")"
    print(f"episode finished: {len(episode.candidates)} candidate(s), best: {best_label}")
    return 0


def cmd_bench(args) -> int:
    try:
        pipeline, ws, manifest = _make_pipeline(args)
        task = manifest.task(args.task_id)
        from .benchmarking import run_benchmark
        base_build = pipeline.ensure_precompiled(ws)
        if not base_build.success:
            print(f"infra error: base build failed\n{base_build.log_text[-2000:]}",
                  file=sys.stderr)
            return EXIT_INFRA
        profile = run_benchmark(
            ws, task, pipeline.transport, pipeline.framework,
            iters=args.iters, warmup=args.warmup,
            util_threshold=args.util_threshold,
        )
    except (KernelForgeError, KeyError, OSError) as exc:
        print(f"infra error: {exc}", file=sys.stderr)
        return EXIT_INFRA
    print(f"backend={profile.backend} threads={profile.threads}")
    print(f"mean_ms={profile.mean_ms:.6f} median_ms={profile.median_ms:.6f} "
          f"iters={len(profile.samples_us)} warmup={profile.warmup_count}")
    return 0


def cmd_report(args) -> int:
    try:
        results = read_results(args.results)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"infra error: cannot read results: {exc}", file=sys.stderr)
        return EXIT_INFRA
    if not results:
        print("infra error: results file carries no evaluation records", file=sys.stderr)
        return EXIT_INFRA
    by_task: dict[str, list] = {}
    for result in results:
        by_task.setdefault(result.task_id, []).append(result)
    best = [best_of(group) for group in by_task.values()]
    report = compute_metrics(best, thresholds=args.thresholds)
    out = Path(args.out) if args.out else Path(args.results).with_suffix(".report.json")
    emit_report(report, out)
    print(render_table(report))
    print(f"report written to {out}")
    return 0


def cmd_reward(args) -> int:
    try:
        value = grpo_reward(
            compiled=args.compiled,
            correct=args.correct,
            t_baseline_ms=args.t_baseline,
            t_generated_ms=args.t_generated,
            shaped=not args.baseline_form,
        )
    except (KernelForgeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"{value:.6f}")
    return 0


def cmd_workspace_clone(args) -> int:
    try:
        clone = clone_workspace(
            Workspace(root=Path(args.root)), label=args.label,
            dest_dir=args.dest_dir,
        )
    except (KernelForgeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(clone.root)
    return 0


def cmd_workspace_restore(args) -> int:
    try:
        restore(Workspace(root=Path(args.root)))
    except (KernelForgeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"restored {args.root}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kernelforge",
        description="Evaluate generated compute kernels against a target framework.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate a task manifest")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("eval", help="run the four-stage pipeline on candidate source")
    _add_run_flags(p)
    p.add_argument("--task-id", required=True)
    p.add_argument("--candidate-dir", action="append", required=True,
                   help="directory with candidate files; repeat for a parallel group")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("agent", help="run the iterative repair/acceleration episode")
    _add_run_flags(p)
    p.add_argument("--task-id", required=True)
    p.add_argument("--max-iters", type=int, default=10)
    p.add_argument("--transcript", help="scripted client transcript (JSON list)")
    p.add_argument("--header-bank", help="category -> header context JSON")
    p.add_argument("--example-bank", help="mechanism -> one-shot example JSON")
    p.set_defaults(func=cmd_agent)

    p = sub.add_parser("bench", help="benchmark the native operator (no injection)")
    _add_run_flags(p)
    p.add_argument("--task-id", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="aggregate results into CSR/FCR/fast_p")
    p.add_argument("--results", required=True)
    p.add_argument("--thresholds", type=float, nargs="+", default=[0.5, 1.0, 1.5])
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("reward", help="compute the shaped scalar reward")
    p.add_argument("--compiled", action="store_true")
    p.add_argument("--correct", action="store_true")
    p.add_argument("--t-baseline", type=float)
    p.add_argument("--t-generated", type=float)
    p.add_argument("--baseline-form", action="store_true",
                   help="use the unshaped form (no compile term)")
    p.set_defaults(func=cmd_reward)

    p = sub.add_parser("workspace", help="workspace maintenance")
    wsub = p.add_subparsers(dest="ws_command", required=True)
    pc = wsub.add_parser("clone")
    pc.add_argument("--root", required=True)
    pc.add_argument("--label", required=True)
    pc.add_argument("--dest-dir")
    pc.set_defaults(func=cmd_workspace_clone)
    pr = wsub.add_parser("restore")
    pr.add_argument("--root", required=True)
    pr.set_defaults(func=cmd_workspace_restore)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
