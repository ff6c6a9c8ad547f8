"""Repository-aware diagnostics: hierarchical codebase view, structured error
extraction from compiler logs, local/cross-file classification, and
enclosing-scope context for each error.

The diagnostic grammar targets the `path:line[:col]: severity: message`
shape emitted by gcc/clang. Linker failures (undefined reference/symbol)
become file-less records that group_errors routes into other_error.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

from .cpp_scope import enclosing_scope
from .exceptions import LineOutOfRangeError

MAX_RECORDS = 20          # prompt-budget cap on records passed downstream
CONTEXT_FALLBACK_LINES = 10


class ErrorClass(Enum):
    LOCAL = "Local"
    CROSS_FILE = "CrossFile"


@dataclass(frozen=True)
class ErrorRecord:
    file: str                     # "" for file-less (linker) records
    line: int                     # 0 for file-less records
    column: int | None
    message: str
    context: str = ""
    classification: ErrorClass = ErrorClass.CROSS_FILE

    @property
    def is_fileless(self) -> bool:
        return not self.file


@dataclass(frozen=True)
class TreeNode:
    name: str
    kind: str  # "file" | "dir" | "elided"
    children: tuple["TreeNode", ...] = ()


@dataclass(frozen=True)
class RepoTree:
    root: Path
    node: TreeNode


def build_repo_tree(root: str | Path, max_depth: int = 4,
                    include_exts: set[str] | None = None) -> RepoTree:
    """Hierarchical view of the codebase.

    Children are ordered lexicographically (dirs and files interleaved by
    name); directories deeper than max_depth are elided with a marker node.
    Files are filtered by extension when include_exts is given; dirs always
    appear so the structure stays navigable.
    """
    root = Path(root)
    if not root.exists():
        raise FileNotFoundError(root)

    def walk(directory: Path, depth: int) -> tuple[TreeNode, ...]:
        if depth > max_depth:
            return (TreeNode(name="...", kind="elided"),)
        children = []
        for entry in sorted(directory.iterdir(), key=lambda p: p.name):
            if entry.is_dir():
                children.append(TreeNode(
                    name=entry.name, kind="dir", children=walk(entry, depth + 1),
                ))
            else:
                if include_exts is not None and entry.suffix not in include_exts:
                    continue
                children.append(TreeNode(name=entry.name, kind="file"))
        return tuple(children)

    node = TreeNode(name=root.name, kind="dir", children=walk(root, 1))
    return RepoTree(root=root, node=node)


def render_repo_tree(tree: RepoTree) -> str:
    lines: list[str] = []

    def render(node: TreeNode, indent: int):
        suffix = "/" if node.kind == "dir" else ""
        lines.append("  " * indent + node.name + suffix)
        for child in node.children:
            render(child, indent + 1)

    render(tree.node, 0)
    return "\n".join(lines)


_DIAG_RE = re.compile(
    r"^(?P<file>[^\s:][^:]*?):(?P<line>\d+)(?::(?P<col>\d+))?:\s*"
    r"(?P<kind>fatal error|error|warning|note):\s*(?P<msg>.*)$"
)
_LINKER_RE = re.compile(r"undefined (reference to|symbol)[::\s]*(?P<sym>.+)$")
_LOOKS_DIAGNOSTIC_RE = re.compile(r"\b(error|warning):")


def extract_errors_with_stats(log_text: str, candidate_files: set[str],
                              max_records: int = MAX_RECORDS) -> tuple[list["ErrorRecord"], int]:
    """Parse a compiler log into ErrorRecords plus a dropped-line tally.

    One record per distinct `file:line[:col]: error: message` diagnostic;
    warnings excluded; note lines following a diagnostic are appended to its
    message. Classification is by file name (path-insensitive) membership in
    candidate_files. Lines that look diagnostic but fail to parse are counted
    as dropped, never raised.
    """
    records: list[ErrorRecord] = []
    seen: set[tuple[str, int, str]] = set()
    dropped = 0
    last_error_index: int | None = None
    for raw_line in log_text.splitlines():
        line = raw_line.rstrip()
        if not line.strip():
            continue
        m = _DIAG_RE.match(line)
        if m:
            kind = m.group("kind")
            if kind == "warning":
                last_error_index = None
                continue
            if kind == "note":
                if last_error_index is not None:
                    prev = records[last_error_index]
                    records[last_error_index] = replace(
                        prev, message=prev.message + "; note: " + m.group("msg").strip()
                    )
                continue
            file_name = Path(m.group("file")).name
            classification = (
                ErrorClass.LOCAL if file_name in candidate_files else ErrorClass.CROSS_FILE
            )
            record = ErrorRecord(
                file=m.group("file"),
                line=int(m.group("line")),
                column=int(m.group("col")) if m.group("col") else None,
                message=m.group("msg").strip(),
                classification=classification,
            )
            key = (record.file, record.line, record.message)
            if key in seen:
                last_error_index = None
                continue
            seen.add(key)
            records.append(record)
            last_error_index = len(records) - 1
            continue
        linker = _LINKER_RE.search(line)
        if linker:
            record = ErrorRecord(
                file="",
                line=0,
                column=None,
                message=line.strip(),
                classification=ErrorClass.CROSS_FILE,
            )
            key = ("", 0, record.message)
            if key not in seen:
                seen.add(key)
                records.append(record)
            last_error_index = None
            continue
        if _LOOKS_DIAGNOSTIC_RE.search(line):
            dropped += 1
        # Everything else is build chatter; ignore.
    return records[:max_records], dropped


def extract_errors(log_text: str, candidate_files: set[str],
                   max_records: int = MAX_RECORDS) -> list[ErrorRecord]:
    records, _ = extract_errors_with_stats(log_text, candidate_files, max_records)
    return records


def extract_context(file: str | Path, line: int,
                    fallback_lines: int = CONTEXT_FALLBACK_LINES) -> str:
    """Smallest enclosing function or class definition containing `line`,
    or a +/-fallback_lines window when no enclosing scope parses."""
    path = Path(file)
    source = path.read_text(errors="replace")
    lines = source.splitlines()
    if line < 1 or line > len(lines):
        raise LineOutOfRangeError(f"{path}: line {line} outside 1..{len(lines)}")
    span = enclosing_scope(source, line)
    if span is not None:
        return "\n".join(lines[span.start_line - 1:span.end_line])
    lo = max(0, line - 1 - fallback_lines)
    hi = min(len(lines), line + fallback_lines)
    return "\n".join(lines[lo:hi])


def attach_contexts(records: list[ErrorRecord], search_root: str | Path) -> list[ErrorRecord]:
    """Fill each record's context by locating its file under search_root.

    Paths are resolved as-given first, then by unique basename search; records
    whose file cannot be found or whose line is out of range keep an empty
    context (the build may report lines in generated code).
    """
    root = Path(search_root)
    by_name: dict[str, list[Path]] = {}
    for path in root.rglob("*"):
        if path.is_file():
            by_name.setdefault(path.name, []).append(path)

    enriched = []
    for record in records:
        if record.is_fileless or record.context:
            enriched.append(record)
            continue
        candidates: list[Path] = []
        direct = Path(record.file)
        if direct.is_file():
            candidates = [direct]
        elif (root / record.file).is_file():
            candidates = [root / record.file]
        else:
            candidates = by_name.get(Path(record.file).name, [])
        context = ""
        if len(candidates) >= 1:
            try:
                context = extract_context(candidates[0], record.line)
            except (LineOutOfRangeError, OSError):
                context = ""
        enriched.append(replace(record, context=context))
    return enriched


def group_errors(records: list[ErrorRecord], op_name: str = "") -> dict:
    """Structured diagnosis document with local and cross-file sections.

    Entry fields follow the downstream prompt schema: error_file, error_line,
    error_message, error_context. File-less records land in other_error as
    plain strings.
    """
    local: dict[str, dict] = {}
    crossfile: dict[str, dict] = {}
    other: list[str] = []
    for record in records:
        if record.is_fileless:
            other.append(record.message)
            continue
        entry = {
            "error_file": record.file,
            "error_line": record.line,
            "error_message": record.message,
            "error_context": record.context,
        }
        section = local if record.classification is ErrorClass.LOCAL else crossfile
        section[f"error{len(section) + 1}"] = entry
    return {
        "opname": op_name,
        "local_error": local,
        "crossfile_error": crossfile,
        "other_error": other,
    }
