"""kernelforge: evaluate generated compute kernels against a target inference
framework and drive an iterative repair/acceleration loop over the results."""

from .tasks import (
    Manifest,
    Mechanism,
    OperatorCategory,
    TaskSpec,
    category_histogram,
    load_manifest,
)
from .workspace import (
    CandidateStage,
    KernelCandidate,
    Workspace,
    clone_workspace,
    inject,
    restore,
    tree_hash,
)
from .build import BuildMode, BuildResult, build, precompile_base
from .diagnostics import (
    ErrorClass,
    ErrorRecord,
    RepoTree,
    build_repo_tree,
    extract_context,
    extract_errors,
    group_errors,
)
from .verification import (
    DType,
    Tensor,
    VerifyResult,
    compare_tensors,
    load_tensor,
    run_verification,
    save_tensor,
)
from .benchmarking import (
    PerfProfile,
    parse_perf_log,
    run_benchmark,
    speedup,
    utilization_gate,
)
from .graphs import GraphDesc, GraphMismatch, MismatchSeverity, diff_graphs, parse_graph
from .metrics import (
    EvaluationResult,
    MetricsReport,
    best_of,
    compute_metrics,
    emit_report,
    grpo_reward,
)
from .agents import (
    AgentPlan,
    EpisodeResult,
    HistoryEntry,
    HttpLlmClient,
    PromptBanks,
    ScriptedLlmClient,
    build_acceleration_prompt,
    build_correction_prompt,
    build_initial_prompt,
    build_repair_prompt,
    parse_candidate,
    parse_plan,
    run_episode,
)
from .config import FrameworkConfig, RunConfig
from .pipeline import CandidateOutcome, Pipeline, load_candidate_dir, parallel_evaluate
from .transport import LocalProcessTransport, RemoteDeviceTransport, Transport

__version__ = "0.1.0"
