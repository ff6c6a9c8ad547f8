"""Exception types raised across the harness.

Semantic failures get their own class so callers can route on them; genuine
OS-level I/O failures propagate as the usual OSError.
"""


class KernelForgeError(Exception):
    """Base class for all harness errors."""


class ParseError(KernelForgeError):
    """A structured document (manifest, graph, tensor file) is malformed."""


class ValidationError(KernelForgeError):
    """A loaded document violates an invariant; message names it and the task id."""


class AlreadyInjectedError(KernelForgeError):
    """inject() called on a workspace that already has an active injection."""


class NothingInjectedError(KernelForgeError):
    """restore() called on a workspace with no active injection."""


class TargetNotFoundError(KernelForgeError):
    """Operator source path missing from the location map or the framework tree."""


class CloneOfInjectedError(KernelForgeError):
    """clone_workspace() called while the source workspace has an active injection."""


class BuildSystemMissingError(KernelForgeError):
    """The workspace contains no recognized build configuration."""


class ExecutionFailureError(KernelForgeError):
    """Operator binary exited nonzero or crashed; carries the captured output."""

    def __init__(self, message: str, exit_code: int | None = None, output: str = ""):
        super().__init__(message)
        self.exit_code = exit_code
        self.output = output


class OutputMissingError(KernelForgeError):
    """Expected output tensor file was not produced."""


class DeviceBusyError(KernelForgeError):
    """Utilization gate failed after all retries."""


class MalformedPerfLogError(KernelForgeError):
    """Perf log missing iterations or containing unparseable timing lines."""


class NonPositiveLatencyError(KernelForgeError):
    """Speedup/reward requested with a zero or negative latency."""


class MissingLatencyError(KernelForgeError):
    """Reward for a correct kernel requested without both latencies."""


class MissingBankEntryError(KernelForgeError):
    """Prompt bank has no entry for the task's category or mechanism."""


class NoBlockFoundError(KernelForgeError):
    """Model response contains no fenced block with the expected tag."""


class MalformedPlanError(KernelForgeError):
    """Fenced block found but its content does not parse as the expected plan."""

    def __init__(self, message: str, raw_block: str = ""):
        super().__init__(message)
        self.raw_block = raw_block


class MissingFileError(KernelForgeError):
    """Model response lacks a code block for a required target file."""


class ExtraneousFileError(KernelForgeError):
    """Model response contains a code block for an unrecognized file name."""


class ClientError(KernelForgeError):
    """LLM client failure (transport error, exhausted transcript)."""

    def __init__(self, message: str, partial_result=None):
        super().__init__(message)
        self.partial_result = partial_result


class LineOutOfRangeError(KernelForgeError):
    """Context extraction requested for a line beyond the end of the file."""
