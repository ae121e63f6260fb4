"""Plot-ready report data derived from a completed run directory: the
best-score-to-date curve, the attribution histogram, and oscillation
events."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .domain import Taxonomy
from .errors import MissingArtifactsError, MissingTraceError
from .trace import ACCEPTED, SemanticTraceTree, detect_oscillation, import_tree


@dataclass
class ReportBundle:
    # (cumulative metric calls, best val accuracy) per charged round,
    # starting at the seed point.
    best_curve: list[tuple[int, float]]
    # label -> {"accepted": n, "rejected": n}; every taxonomy label is
    # present even when its counts are zero.
    attribution_histogram: dict[str, dict[str, int]]
    oscillation_events: list[dict] = field(default_factory=list)

    def check_invariants(self) -> None:
        calls = [c for c, _ in self.best_curve]
        accs = [a for _, a in self.best_curve]
        if any(b <= a for a, b in zip(calls, calls[1:])):
            raise AssertionError("metric calls must strictly increase")
        if any(b < a for a, b in zip(accs, accs[1:])):
            raise AssertionError("best accuracy must be non-decreasing")


def _load_json(run_dir: Path, name: str) -> dict:
    path = run_dir / name
    if not path.is_file():
        raise MissingArtifactsError(f"{name} not found in {run_dir}")
    return json.loads(path.read_text(encoding="utf-8"))


def load_trace(run_dir: str | Path) -> SemanticTraceTree:
    path = Path(run_dir) / "trace.json"
    if not path.is_file():
        raise MissingTraceError(f"trace.json not found in {run_dir}")
    return import_tree(path.read_text(encoding="utf-8"))


def build_best_curve(run_dir: Path) -> list[tuple[int, float]]:
    ledger = _load_json(run_dir, "ledger.json")
    trace = load_trace(run_dir)
    rounds_dir = run_dir / "rounds"
    round_files = sorted(rounds_dir.glob("*.json")) if rounds_dir.is_dir() else []

    seed_accuracy = trace.nodes[trace.root].val_accuracy or 0.0
    best = seed_accuracy
    curve = [(0, seed_accuracy)]
    charges = {c["iteration"]: c["amount"] for c in ledger["charges"]}
    calls = 0
    best_by_id = {
        nid: node.val_accuracy for nid, node in trace.nodes.items()
        if node.val_accuracy is not None
    }
    for path in round_files:
        outcome = json.loads(path.read_text(encoding="utf-8"))
        amount = charges.get(outcome["iteration"], 0)
        if amount == 0:
            continue
        calls += amount
        if outcome["best_updated"] and outcome["winner"] is not None:
            best = max(best, best_by_id.get(outcome["winner"], best))
        curve.append((calls, best))
    return curve


def build_attribution_histogram(tree: SemanticTraceTree,
                                taxonomy: Taxonomy) -> dict[str, dict[str, int]]:
    histogram: dict[str, dict[str, int]] = {
        tid: {"accepted": 0, "rejected": 0} for tid in taxonomy.ids
    }
    for edge in tree.edges:
        bucket = histogram.setdefault(edge.label, {"accepted": 0, "rejected": 0})
        bucket["accepted" if edge.status == ACCEPTED else "rejected"] += 1
    return histogram


def find_oscillations(tree: SemanticTraceTree, window: int = 4) -> list[dict]:
    events = []
    seen = set()
    for node_id in tree.nodes:
        trajectory = tree.trajectory(node_id)
        if not trajectory or trajectory[-1].status != ACCEPTED:
            continue
        pair = detect_oscillation(trajectory, window)
        if pair is None:
            continue
        key = (node_id, pair)
        if key in seen:
            continue
        seen.add(key)
        events.append({
            "node": node_id,
            "iteration": trajectory[-1].iteration,
            "labels": list(pair),
        })
    return sorted(events, key=lambda e: (e["iteration"], e["node"]))


def build_report(run_dir: str | Path, taxonomy: Taxonomy) -> ReportBundle:
    run_dir = Path(run_dir)
    tree = load_trace(run_dir)
    bundle = ReportBundle(
        best_curve=build_best_curve(run_dir),
        attribution_histogram=build_attribution_histogram(tree, taxonomy),
        oscillation_events=find_oscillations(tree),
    )
    bundle.check_invariants()
    return bundle


def write_report(run_dir: str | Path, bundle: ReportBundle) -> None:
    run_dir = Path(run_dir)
    lines = ["metric_calls,best_val_accuracy"]
    for calls, acc in bundle.best_curve:
        lines.append(f"{calls},{acc:.6f}")
    (run_dir / "report.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    lines = ["label,accepted,rejected"]
    for label, counts in bundle.attribution_histogram.items():
        lines.append(f"{label},{counts['accepted']},{counts['rejected']}")
    (run_dir / "attribution.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    (run_dir / "oscillations.json").write_text(
        json.dumps(bundle.oscillation_events, indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
