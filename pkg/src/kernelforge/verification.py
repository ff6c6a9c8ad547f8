"""Differential functional testing: the bit-exact tensor file format, strict
tolerance comparison, and execution of the injected operator on reference
inputs through a transport.

Tensor file format: magic "KFTN", u8 dtype code {0:F32,1:I32,2:I64,3:U8,
4:Bool}, u8 rank, little-endian u32 dims[rank], then raw little-endian
element data in row-major order.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .exceptions import ExecutionFailureError, OutputMissingError, ParseError

MAGIC = b"KFTN"
DEFAULT_TOLERANCE = 1e-4


class DType(Enum):
    F32 = 0
    I32 = 1
    I64 = 2
    U8 = 3
    BOOL = 4

    @property
    def np_dtype(self) -> np.dtype:
        return {
            DType.F32: np.dtype("<f4"),
            DType.I32: np.dtype("<i4"),
            DType.I64: np.dtype("<i8"),
            DType.U8: np.dtype("u1"),
            DType.BOOL: np.dtype("u1"),
        }[self]

    @property
    def is_exact(self) -> bool:
        # Integer and bool dtypes are compared exactly; only F32 gets a tolerance.
        return self is not DType.F32


@dataclass(frozen=True)
class Tensor:
    dtype: DType
    shape: tuple[int, ...]
    data: np.ndarray  # flat, row-major

    def __post_init__(self):
        expected = math.prod(self.shape) if self.shape else 1
        if self.data.size != expected:
            raise ValueError(
                f"shape {self.shape} implies {expected} elements, buffer has {self.data.size}"
            )

    @classmethod
    def from_array(cls, array: np.ndarray, dtype: DType | None = None) -> "Tensor":
        array = np.asarray(array)
        if dtype is None:
            kind_map = {"f": DType.F32, "i": DType.I64, "u": DType.U8, "b": DType.BOOL}
            if array.dtype == np.int32:
                dtype = DType.I32
            elif array.dtype.kind in kind_map:
                dtype = kind_map[array.dtype.kind]
            else:
                raise ValueError(f"no tensor dtype for numpy dtype {array.dtype}")
        flat = np.ascontiguousarray(array, dtype=dtype.np_dtype).reshape(-1)
        return cls(dtype=dtype, shape=tuple(int(d) for d in array.shape), data=flat)

    def to_array(self) -> np.ndarray:
        return self.data.reshape(self.shape)


def save_tensor(tensor: Tensor, path: str | Path) -> None:
    path = Path(path)
    header = MAGIC + struct.pack("<BB", tensor.dtype.value, len(tensor.shape))
    dims = struct.pack(f"<{len(tensor.shape)}I", *tensor.shape)
    payload = tensor.data.astype(tensor.dtype.np_dtype, copy=False).tobytes()
    path.write_bytes(header + dims + payload)


def load_tensor(path: str | Path) -> Tensor:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 6 or blob[:4] != MAGIC:
        raise ParseError(f"{path}: not a KFTN tensor file")
    code, rank = struct.unpack_from("<BB", blob, 4)
    try:
        dtype = DType(code)
    except ValueError as exc:
        raise ParseError(f"{path}: unknown dtype code {code}") from exc
    offset = 6
    if len(blob) < offset + 4 * rank:
        raise ParseError(f"{path}: truncated dimension header")
    shape = struct.unpack_from(f"<{rank}I", blob, offset)
    offset += 4 * rank
    count = math.prod(shape) if shape else 1
    expected_bytes = count * dtype.np_dtype.itemsize
    if len(blob) != offset + expected_bytes:
        raise ParseError(
            f"{path}: payload is {len(blob) - offset} bytes, expected {expected_bytes}"
        )
    data = np.frombuffer(blob, dtype=dtype.np_dtype, count=count, offset=offset).copy()
    return Tensor(dtype=dtype, shape=tuple(int(d) for d in shape), data=data)


@dataclass(frozen=True)
class VerifyResult:
    passed: bool
    max_abs_diff: float
    tolerance: float
    mismatch_count: int
    first_mismatch_index: int | None = None


def _elementwise_diff(actual: np.ndarray, expected: np.ndarray) -> np.ndarray:
    """Per-element absolute difference with NaN/inf handling.

    Equal values (including inf==inf) diff 0; both-NaN diffs 0; exactly one
    NaN diffs +inf, so a NaN against a finite expectation always fails.
    """
    a = actual.astype(np.float64)
    e = expected.astype(np.float64)
    diff = np.abs(a - e)
    equal = a == e
    both_nan = np.isnan(a) & np.isnan(e)
    one_nan = np.isnan(a) ^ np.isnan(e)
    diff = np.where(equal | both_nan, 0.0, diff)
    diff = np.where(one_nan, np.inf, diff)
    return diff


def compare_tensors(actual: Tensor, expected: Tensor, tolerance: float = DEFAULT_TOLERANCE,
                    relative: bool = False) -> VerifyResult:
    """Strict elementwise comparison.

    Shape or dtype mismatch fails with max_abs_diff = +inf regardless of
    values. F32 uses inclusive absolute tolerance (<=); set relative=True for
    |a-e| <= tolerance * max(1, |e|). Exact dtypes compare elementwise equal;
    any inequality counts diff 1.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    if actual.shape != expected.shape or actual.dtype != expected.dtype:
        return VerifyResult(
            passed=False,
            max_abs_diff=math.inf,
            tolerance=tolerance,
            mismatch_count=max(actual.data.size, expected.data.size),
            first_mismatch_index=0,
        )

    if actual.dtype.is_exact:
        unequal = actual.data != expected.data
        diff = unequal.astype(np.float64)
    else:
        diff = _elementwise_diff(actual.data, expected.data)
        if relative:
            scale = np.maximum(1.0, np.abs(expected.data.astype(np.float64)))
            diff = diff / scale

    over = diff > tolerance
    mismatch_count = int(np.count_nonzero(over))
    first_index = int(np.argmax(over)) if mismatch_count else None
    max_diff = float(diff.max()) if diff.size else 0.0
    return VerifyResult(
        passed=max_diff <= tolerance,
        max_abs_diff=max_diff,
        tolerance=tolerance,
        mismatch_count=mismatch_count,
        first_mismatch_index=first_index,
    )


def merge_results(results: list[VerifyResult], tolerance: float) -> VerifyResult:
    """Fold per-output results into one: passed iff all passed, diff is the max."""
    if not results:
        raise ValueError("no results to merge")
    passed = all(r.passed for r in results)
    max_diff = max(r.max_abs_diff for r in results)
    mismatches = sum(r.mismatch_count for r in results)
    first = next((r.first_mismatch_index for r in results if r.first_mismatch_index is not None), None)
    return VerifyResult(
        passed=passed,
        max_abs_diff=max_diff,
        tolerance=tolerance,
        mismatch_count=mismatches,
        first_mismatch_index=first,
    )


def run_verification(ws, task, transport, framework, tolerance: float = DEFAULT_TOLERANCE) -> VerifyResult:
    """Execute the injected operator on the task's reference inputs and compare
    every produced output against the reference tensors.

    Raises ExecutionFailureError on nonzero exit and OutputMissingError when an
    expected out_<k>.tensor is absent.
    """
    session = transport.session_dir(task.id)
    out_dir = f"{session}/out"
    remote_inputs = []
    for k, local in enumerate(task.reference_inputs):
        remote = f"{session}/in_{k}.tensor"
        transport.push(local, remote)
        remote_inputs.append(remote)
    runner = framework.stage_runner(ws, transport, session)

    command = framework.runner_command(
        runner=runner,
        op=task.operator_name,
        inputs=remote_inputs,
        attributes=task.attributes.as_dict(),
        out_dir=out_dir,
        iters=1,
        warmup=0,
    )
    result = transport.exec(command)
    if result.exit_code != 0:
        raise ExecutionFailureError(
            f"operator run for task {task.id} exited {result.exit_code}",
            exit_code=result.exit_code,
            output=result.stdout + result.stderr,
        )

    per_output = []
    for k, reference_path in enumerate(task.reference_outputs):
        local_out = Path(transport.local_scratch()) / f"{task.id}_out_{k}.tensor"
        try:
            transport.pull(f"{out_dir}/out_{k}.tensor", local_out)
        except (OSError, FileNotFoundError) as exc:
            raise OutputMissingError(f"task {task.id}: output out_{k}.tensor missing") from exc
        actual = load_tensor(local_out)
        expected = load_tensor(reference_path)
        per_output.append(compare_tensors(actual, expected, tolerance))
    return merge_results(per_output, tolerance)
