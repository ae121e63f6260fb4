"""The semantic trace tree: every proposal (accepted and rejected) recorded
with its root-cause label and accuracy gain, plus trajectory extraction,
oscillation detection, and JSON/DOT export.

Rejected proposals are recorded as leaf nodes even though only accepted
rounds grow the optimization path; auditability favours keeping everything,
and the accepted-edge subgraph retains the one-node-per-successful-round
shape.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import DuplicateNodeError, UnknownNodeError, UnknownParentError

ACCEPTED = "accepted"
REJECTED = "rejected"


@dataclass(frozen=True)
class TraceNode:
    id: int
    val_accuracy: float | None = None
    correct_count: int | None = None
    minibatch_size: int | None = None

    def display_accuracy(self) -> str:
        if self.val_accuracy is not None:
            return f"{round(self.val_accuracy * 100)}%"
        if self.correct_count is not None and self.minibatch_size is not None:
            return f"{self.correct_count}/{self.minibatch_size}"
        return "?"


@dataclass(frozen=True)
class TraceEdge:
    from_id: int | None  # None marks a restart root event
    to_id: int
    label: str
    delta_minibatch: int
    status: str  # accepted | rejected
    iteration: int
    origin: str  # heuristic | free | blank | fallback
    delta_val_pp: float | None = None

    def __post_init__(self):
        if self.status == ACCEPTED and self.delta_val_pp is None:
            raise ValueError("accepted edges must carry delta_val_pp")


@dataclass
class SemanticTraceTree:
    """Forest rooted at the seed plus any restart roots; coordinator-only
    mutation, exports operate on immutable snapshots."""

    root: int
    nodes: dict[int, TraceNode] = field(default_factory=dict)
    edges: list[TraceEdge] = field(default_factory=list)

    @classmethod
    def with_root(cls, node: TraceNode) -> "SemanticTraceTree":
        tree = cls(root=node.id)
        tree.nodes[node.id] = node
        return tree

    def _incoming(self, node_id: int) -> TraceEdge | None:
        for edge in self.edges:
            if edge.to_id == node_id:
                return edge
        return None

    def is_root(self, node_id: int) -> bool:
        if node_id == self.root:
            return True
        incoming = self._incoming(node_id)
        return incoming is not None and incoming.from_id is None

    def record_proposal(self, edge: TraceEdge, node: TraceNode) -> None:
        """Append one proposal; the target node is created by the edge."""
        if node.id != edge.to_id:
            raise ValueError("edge target and node id disagree")
        if edge.to_id in self.nodes:
            raise DuplicateNodeError(f"node {edge.to_id} already recorded")
        if edge.from_id is not None:
            if edge.from_id not in self.nodes:
                raise UnknownParentError(f"parent {edge.from_id} not in tree")
            incoming = self._incoming(edge.from_id)
            if incoming is not None and incoming.status == REJECTED:
                raise UnknownParentError(
                    f"parent {edge.from_id} is a rejected leaf")
        self.nodes[node.id] = node
        self.edges.append(edge)

    def update_node(self, node: TraceNode) -> None:
        if node.id not in self.nodes:
            raise UnknownNodeError(f"node {node.id} not in tree")
        self.nodes[node.id] = node

    def trajectory(self, node_id: int) -> list[TraceEdge]:
        """Edges along the unique path from the node's root; empty for
        roots.  Only the last edge can be rejected, since rejected targets
        stay leaves."""
        if node_id not in self.nodes:
            raise UnknownNodeError(f"node {node_id} not in tree")
        path: list[TraceEdge] = []
        current = node_id
        while True:
            incoming = self._incoming(current)
            if incoming is None or incoming.from_id is None:
                break
            path.append(incoming)
            current = incoming.from_id
        path.reverse()
        return path

    def depth(self, node_id: int) -> int:
        return len(self.trajectory(node_id))

    def accepted_edges(self) -> list[TraceEdge]:
        return [e for e in self.edges if e.status == ACCEPTED]

    # ------------------------------------------------------------- export

    def to_dict(self) -> dict:
        return {
            "root": self.root,
            "nodes": [
                {
                    "id": n.id,
                    "val_accuracy": n.val_accuracy,
                    "correct_count": n.correct_count,
                    "minibatch_size": n.minibatch_size,
                }
                for n in self.nodes.values()
            ],
            "edges": [
                {
                    "from": e.from_id,
                    "to": e.to_id,
                    "label": e.label,
                    "delta_minibatch": e.delta_minibatch,
                    "delta_val_pp": e.delta_val_pp,
                    "status": e.status,
                    "iteration": e.iteration,
                    "origin": e.origin,
                }
                for e in self.edges
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SemanticTraceTree":
        tree = cls(root=data["root"])
        for n in data["nodes"]:
            tree.nodes[n["id"]] = TraceNode(
                id=n["id"],
                val_accuracy=n.get("val_accuracy"),
                correct_count=n.get("correct_count"),
                minibatch_size=n.get("minibatch_size"),
            )
        for e in data["edges"]:
            tree.edges.append(
                TraceEdge(
                    from_id=e["from"],
                    to_id=e["to"],
                    label=e["label"],
                    delta_minibatch=e["delta_minibatch"],
                    delta_val_pp=e.get("delta_val_pp"),
                    status=e["status"],
                    iteration=e["iteration"],
                    origin=e["origin"],
                )
            )
        return tree

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SemanticTraceTree):
            return NotImplemented
        return (self.root == other.root and self.nodes == other.nodes
                and self.edges == other.edges)

    def to_dot(self) -> str:
        lines = ["digraph trace {", "  rankdir=TB;", "  node [shape=circle];"]
        rejected_targets = {e.to_id for e in self.edges if e.status == REJECTED}
        for node in self.nodes.values():
            style = ', style=dashed' if node.id in rejected_targets else ""
            lines.append(f'  "{node.id}" [label="{node.id}\\n{node.display_accuracy()}"{style}];')
        for e in self.edges:
            if e.from_id is None:
                continue
            if e.status == ACCEPTED:
                label = f"{e.label} {e.delta_val_pp:+g}pp"
                style = ""
            else:
                label = e.label
                style = ", style=dashed"
            lines.append(f'  "{e.from_id}" -> "{e.to_id}" [label="{label}"{style}];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def export_tree(tree: SemanticTraceTree, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(tree.to_dict(), indent=2, sort_keys=True) + "\n"
    if fmt == "dot":
        return tree.to_dot()
    raise ValueError(f"unknown export format {fmt!r}")


def import_tree(text: str) -> SemanticTraceTree:
    return SemanticTraceTree.from_dict(json.loads(text))


def _labels(trajectory: Sequence) -> list[str]:
    return [e.label if isinstance(e, TraceEdge) else str(e) for e in trajectory]


def detect_oscillation(trajectory: Sequence, window: int = 4) -> tuple[str, str] | None:
    """Return (A, B) iff the last ``window`` accepted labels alternate
    A,B,A,B,... with A != B and no edge in the window carries the joint
    label A+B.  Pure function of the label sequence."""
    if window < 4 or window % 2 != 0:
        raise ValueError("window must be an even integer >= 4")
    labels = _labels(trajectory)
    if len(labels) < window:
        return None
    tail = labels[-window:]
    a, b = tail[0], tail[1]
    if a == b:
        return None
    expected = [a if i % 2 == 0 else b for i in range(window)]
    if tail != expected:
        return None
    joint = {f"{a}+{b}", f"{b}+{a}"}
    if any(lbl in joint for lbl in tail):
        return None
    return a, b


def trajectory_context_block(trajectory: Iterable[TraceEdge]) -> str:
    """Compact text block handed to the hypothesis agent, one line per
    accepted edge."""
    lines = []
    for e in trajectory:
        if e.status != ACCEPTED:
            continue
        lines.append(f"round {e.iteration}: {e.label} (Δval={e.delta_val_pp:+g}pp)")
    return "\n".join(lines)
