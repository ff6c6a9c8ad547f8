"""Unified operator-graph representation and semantic diffing.

Both the reference graph documents and the engine inspector emit the same
JSON schema:

    {"nodes": [{"op_type": str, "name": str, "attributes": {key: value},
                "input_shapes": [[int, ...], ...],
                "output_shapes": [[int, ...], ...],
                "dtypes": [str, ...]}]}

Attribute values keep their JSON types; comparison is type-then-value so an
int 1 and a string "1" surface as a mismatch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .exceptions import ParseError

Shape = tuple[int, ...]


@dataclass(frozen=True)
class GraphNode:
    op_type: str
    name: str
    attributes: dict[str, object] = field(default_factory=dict)
    input_shapes: tuple[Shape, ...] = ()
    output_shapes: tuple[Shape, ...] = ()
    dtypes: tuple[str, ...] = ()


@dataclass(frozen=True)
class GraphDesc:
    nodes: tuple[GraphNode, ...] = ()


class MismatchSeverity(Enum):
    NODE_TYPE = "NodeType"
    ATTRIBUTE = "Attribute"
    SHAPE = "Shape"
    DTYPE = "Dtype"
    TOPOLOGY = "Topology"


@dataclass(frozen=True)
class GraphMismatch:
    path: str
    reference_value: str
    target_value: str
    severity: MismatchSeverity

    def __post_init__(self):
        if self.reference_value == self.target_value:
            raise ValueError("mismatch with equal values")


ABSENT = "<absent>"
_NODE_KEYS = {"op_type", "name", "attributes", "input_shapes", "output_shapes", "dtypes"}


def _shapes(raw, path: str) -> tuple[Shape, ...]:
    if not isinstance(raw, list):
        raise ParseError(f"{path}: expected a list of shapes")
    shapes = []
    for i, shape in enumerate(raw):
        if not isinstance(shape, list):
            raise ParseError(f"{path}[{i}]: shape must be a list")
        dims = []
        for d in shape:
            if not isinstance(d, int) or isinstance(d, bool) or d < 0:
                raise ParseError(f"{path}[{i}]: dims must be nonnegative ints")
            dims.append(d)
        shapes.append(tuple(dims))
    return tuple(shapes)


def parse_graph(doc: str | dict) -> GraphDesc:
    """Parse a graph document (JSON text or already-decoded object)."""
    if isinstance(doc, str):
        try:
            raw = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise ParseError(f"graph document: {exc}") from exc
    else:
        raw = doc
    if not isinstance(raw, dict) or "nodes" not in raw:
        raise ParseError("graph document: missing nodes")
    unknown = set(raw) - {"nodes"}
    if unknown:
        raise ParseError(f"graph document: unknown fields {sorted(unknown)}")

    nodes = []
    seen_names: set[str] = set()
    for i, entry in enumerate(raw["nodes"]):
        path = f"node[{i}]"
        if not isinstance(entry, dict):
            raise ParseError(f"{path}: not an object")
        unknown = set(entry) - _NODE_KEYS
        if unknown:
            raise ParseError(f"{path}: unknown fields {sorted(unknown)}")
        name = entry.get("name")
        if not isinstance(name, str) or not name:
            raise ParseError(f"{path}.name: missing or empty")
        if name in seen_names:
            raise ParseError(f"{path}.name: duplicate node name {name!r}")
        seen_names.add(name)
        op_type = entry.get("op_type")
        if not isinstance(op_type, str) or not op_type:
            raise ParseError(f"{path}.op_type: missing or empty")
        attributes = entry.get("attributes", {})
        if not isinstance(attributes, dict):
            raise ParseError(f"{path}.attributes: must be a map")
        dtypes = entry.get("dtypes", [])
        if not isinstance(dtypes, list) or not all(isinstance(d, str) for d in dtypes):
            raise ParseError(f"{path}.dtypes: must be a list of strings")
        nodes.append(GraphNode(
            op_type=op_type,
            name=name,
            attributes=dict(attributes),
            input_shapes=_shapes(entry.get("input_shapes", []), f"{path}.input_shapes"),
            output_shapes=_shapes(entry.get("output_shapes", []), f"{path}.output_shapes"),
            dtypes=tuple(dtypes),
        ))
    return GraphDesc(nodes=tuple(nodes))


def load_graph(path: str | Path) -> GraphDesc:
    return parse_graph(Path(path).read_text())


def graph_to_doc(graph: GraphDesc) -> str:
    """Serialize back to the document schema (used when embedding in prompts)."""
    return json.dumps({
        "nodes": [
            {
                "op_type": n.op_type,
                "name": n.name,
                "attributes": n.attributes,
                "input_shapes": [list(s) for s in n.input_shapes],
                "output_shapes": [list(s) for s in n.output_shapes],
                "dtypes": list(n.dtypes),
            }
            for n in graph.nodes
        ]
    }, indent=2, sort_keys=True)


def _render(value) -> str:
    # JSON rendering keeps the type visible: int 1 -> `1`, string "1" -> `"1"`.
    return json.dumps(value)


def _typed_equal(a, b) -> bool:
    if type(a) is not type(b):
        return False
    return a == b


def _diff_node(index: int, ref: GraphNode, target: GraphNode) -> list[GraphMismatch]:
    found: list[GraphMismatch] = []
    prefix = f"node[{index}]"

    if ref.op_type != target.op_type:
        found.append(GraphMismatch(
            path=f"{prefix}.op_type",
            reference_value=_render(ref.op_type),
            target_value=_render(target.op_type),
            severity=MismatchSeverity.NODE_TYPE,
        ))

    for key in sorted(set(ref.attributes) | set(target.attributes)):
        in_ref = key in ref.attributes
        in_target = key in target.attributes
        if in_ref and in_target and _typed_equal(ref.attributes[key], target.attributes[key]):
            continue
        found.append(GraphMismatch(
            path=f"{prefix}.attributes.{key}",
            reference_value=_render(ref.attributes[key]) if in_ref else ABSENT,
            target_value=_render(target.attributes[key]) if in_target else ABSENT,
            severity=MismatchSeverity.ATTRIBUTE,
        ))

    for label, ref_shapes, target_shapes in (
        ("input_shapes", ref.input_shapes, target.input_shapes),
        ("output_shapes", ref.output_shapes, target.output_shapes),
    ):
        if ref_shapes != target_shapes:
            found.append(GraphMismatch(
                path=f"{prefix}.{label}",
                reference_value=_render([list(s) for s in ref_shapes]),
                target_value=_render([list(s) for s in target_shapes]),
                severity=MismatchSeverity.SHAPE,
            ))

    if ref.dtypes != target.dtypes:
        found.append(GraphMismatch(
            path=f"{prefix}.dtypes",
            reference_value=_render(list(ref.dtypes)),
            target_value=_render(list(target.dtypes)),
            severity=MismatchSeverity.DTYPE,
        ))

    found.sort(key=lambda m: m.path)
    return found


def diff_graphs(reference: GraphDesc, target: GraphDesc) -> list[GraphMismatch]:
    """Semantic mismatches between two graphs in deterministic order.

    Differing node counts yield a single Topology mismatch followed by
    per-node diffs over the zipped prefix (positional alignment; subgraph
    isomorphism is out of scope).
    """
    mismatches: list[GraphMismatch] = []
    if len(reference.nodes) != len(target.nodes):
        mismatches.append(GraphMismatch(
            path="nodes.count",
            reference_value=str(len(reference.nodes)),
            target_value=str(len(target.nodes)),
            severity=MismatchSeverity.TOPOLOGY,
        ))
    for index, (ref, tgt) in enumerate(zip(reference.nodes, target.nodes)):
        mismatches.extend(_diff_node(index, ref, tgt))
    return mismatches
