"""Enclosing-scope extraction for C-family source.

A small syntax-aware scanner: comments, string/char literals, raw strings,
and preprocessor lines are masked out, then brace pairs are matched and each
block's header is classified as function-like, class-like, or neither. The
smallest enclosing function or class definition containing a target line is
the extraction result.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

_CONTROL_KEYWORDS = {"if", "for", "while", "switch", "catch", "do", "else", "return"}
_CLASS_KEYWORDS = {"class", "struct", "union", "enum"}
_ACCESS_RE = re.compile(r"^\s*(public|private|protected)\s*:\s*")
_WORD_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


def mask_source(source: str) -> str:
    """Replace comment bodies, literal contents, and preprocessor lines with
    spaces, preserving offsets and newlines so positions stay comparable."""
    out = list(source)
    i = 0
    n = len(source)
    line_start = True

    def blank(start: int, end: int):
        for j in range(start, min(end, n)):
            if out[j] != "\n":
                out[j] = " "

    while i < n:
        c = source[i]
        if line_start and source[i:].lstrip(" \t").startswith("#"):
            # Preprocessor directive, including backslash continuations.
            start = i
            while i < n:
                eol = source.find("\n", i)
                if eol == -1:
                    i = n
                    break
                if source[eol - 1] == "\\" if eol > 0 else False:
                    i = eol + 1
                    continue
                i = eol
                break
            blank(start, i)
            line_start = False
            continue
        if c == "\n":
            line_start = True
            i += 1
            continue
        line_start = False
        if c == "/" and i + 1 < n and source[i + 1] == "/":
            eol = source.find("\n", i)
            eol = n if eol == -1 else eol
            blank(i, eol)
            i = eol
            continue
        if c == "/" and i + 1 < n and source[i + 1] == "*":
            end = source.find("*/", i + 2)
            end = n if end == -1 else end + 2
            blank(i, end)
            i = end
            continue
        if c == "R" and source[i:i + 2] == 'R"':
            m = re.match(r'R"([^\s()\\"]{0,16})\(', source[i:])
            if m:
                delim = m.group(1)
                close = source.find(f"){delim}\"", i + m.end())
                end = n if close == -1 else close + len(delim) + 2
                blank(i, end)
                i = end
                continue
        if c in ('"', "'"):
            quote = c
            j = i + 1
            while j < n:
                if source[j] == "\\":
                    j += 2
                    continue
                if source[j] == quote or source[j] == "\n":
                    break
                j += 1
            end = min(j + 1, n)
            blank(i, end)
            i = end
            continue
        i += 1
    return "".join(out)


@dataclass(frozen=True)
class ScopeSpan:
    start_line: int  # 1-based, inclusive
    end_line: int
    kind: str  # "function" or "class"


_TRAILING_QUALIFIERS = {"const", "noexcept", "override", "final", "try", "mutable", "volatile"}


def _classify_header(header: str) -> str | None:
    """Classify the text between the previous statement boundary and an
    opening brace. Returns "function", "class", or None for plain blocks,
    namespaces, initializer lists, and control statements.

    Known limitation: brace-form member initializers in constructor init
    lists (`: x_{1}`) defeat boundary detection; the enclosing class is
    reported instead, or the caller's line-window fallback applies.
    """
    text = header.strip()
    if not text or text.endswith(("=", ",", "(", "[")):
        return None  # brace starts an initializer or argument list
    words = _WORD_RE.findall(text)
    if not words:
        return None
    if words[0] == "namespace" or (words[0] == "extern" and "(" not in text):
        return None

    # Trailing return type: `auto f() -> T {` reduces to `auto f()`.
    arrow = text.rfind("->")
    if arrow != -1 and arrow > text.rfind(")"):
        text = text[:arrow].rstrip()
    # Strip function qualifiers so the parameter list's ')' ends the text.
    while True:
        trimmed = text.rstrip("& ")
        tail = _WORD_RE.findall(trimmed[-12:])
        if trimmed != text:
            text = trimmed
            continue
        if tail and tail[-1] in _TRAILING_QUALIFIERS and trimmed.endswith(tail[-1]):
            text = trimmed[: -len(tail[-1])].rstrip()
            continue
        break

    if text.endswith(")"):
        # Walk back across the balanced parameter list.
        depth = 0
        open_pos = -1
        for i in range(len(text) - 1, -1, -1):
            if text[i] == ")":
                depth += 1
            elif text[i] == "(":
                depth -= 1
                if depth == 0:
                    open_pos = i
                    break
        if open_pos <= 0:
            return None  # lambda introducer or parenthesized expression
        before = _WORD_RE.findall(text[:open_pos])
        if not before or any(w in _CONTROL_KEYWORDS for w in before):
            return None
        return "function"

    if any(w in _CLASS_KEYWORDS for w in words):
        return "class"
    return None


def scope_spans(source: str) -> list[ScopeSpan]:
    """All function/class definition spans in the file, line-based."""
    masked = mask_source(source)
    line_of = _line_index(source)
    spans: list[ScopeSpan] = []
    stack: list[tuple[int, str | None, int]] = []  # (open_pos, kind, header_start_pos)
    for pos, ch in enumerate(masked):
        if ch == "{":
            header_start = _header_start(masked, pos)
            kind = _classify_header(masked[header_start:pos])
            stack.append((pos, kind, header_start))
        elif ch == "}":
            if not stack:
                continue  # unbalanced close; ignore
            open_pos, kind, header_start = stack.pop()
            if kind is not None:
                spans.append(ScopeSpan(
                    start_line=line_of(header_start),
                    end_line=line_of(pos),
                    kind=kind,
                ))
    spans.sort(key=lambda s: (s.start_line, -s.end_line))
    return spans


def _line_index(source: str):
    starts = [0]
    for i, ch in enumerate(source):
        if ch == "\n":
            starts.append(i + 1)

    def line_of(pos: int) -> int:
        lo, hi = 0, len(starts) - 1
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if starts[mid] <= pos:
                lo = mid
            else:
                hi = mid - 1
        return lo + 1

    return line_of


def _header_start(masked: str, brace_pos: int) -> int:
    """Position where the statement owning the brace begins."""
    i = brace_pos - 1
    while i >= 0 and masked[i] not in ";{}":
        i -= 1
    start = i + 1
    # Skip whitespace, then access-specifier lines that belong to the class
    # body rather than the member's own definition.
    while True:
        segment = masked[start:brace_pos]
        stripped = segment.lstrip()
        offset = len(segment) - len(stripped)
        start += offset
        m = _ACCESS_RE.match(masked[start:brace_pos])
        if m:
            start += m.end()
            continue
        return start


def enclosing_scope(source: str, line: int) -> ScopeSpan | None:
    """Smallest function or class definition span containing `line` (1-based)."""
    best: ScopeSpan | None = None
    for span in scope_spans(source):
        if span.start_line <= line <= span.end_line:
            if best is None or (span.end_line - span.start_line) < (best.end_line - best.start_line):
                best = span
    return best
