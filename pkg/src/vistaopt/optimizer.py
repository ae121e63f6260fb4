"""The optimization round loop: Pareto parent selection, the two-layer
explore-exploit scheduler (restart + epsilon-greedy hypothesis slotting),
minibatch verification, winner selection, validation gating, and exact
budget accounting.

Budget semantics: the ledger charges per round exactly what the procedure
meters, branch by branch (b+1 restart, b*K hypotheses, b fallback, plus
the validation size when a winner is gated).  Parent-baseline minibatch
evaluations and look-ahead probes beyond the first are unmetered overhead
and are tracked on the evaluator's uncharged counter instead, so the
charged counter and the ledger stay exactly equal.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path

from .agents import (
    load_template,
    parse_hypotheses,
    render_hypothesis_prompt,
    render_reflection_prompt,
    extract_rewritten_prompt,
)
from .backends.base import Backend, GenerationRequest
from .domain import (
    BLANK_LABEL,
    H_BLANK,
    UNLABELED,
    CreatedBy,
    Hypothesis,
    PromptCandidate,
    RunConfig,
    TaskDataset,
    Taxonomy,
)
from .errors import EmptyRewriteError, NoBlocksFoundError, NonPositiveBetaError
from .evaluation import (
    Evaluator,
    FailureCase,
    MinibatchResult,
    collect_failures,
    delta_acc,
    sample_minibatch,
)
from .pareto import ParetoPool
from .trace import ACCEPTED, REJECTED, SemanticTraceTree, TraceEdge, TraceNode, export_tree

logger = logging.getLogger(__name__)

BRANCH_RESTART = "restart"
BRANCH_HYPOTHESES = "hypotheses"
BRANCH_FALLBACK = "fallback_single"
BRANCH_SKIPPED = "skipped"

NO_FAILURES_LOG = "No failed samples found. Falling back to single mutation."
NO_WINNER_LOG = "No multi-hypothesis candidate improved over parent. No proposal returned."
RESTART_NO_IMPROVEMENT_LOG = "Random restart completed with no improvement. No proposal returned."

# Directive handed to the reflection agent when no failure cases exist (or
# in baseline mode, which never attributes a root cause).
FALLBACK_DIRECTIVE = Hypothesis(
    label=UNLABELED,
    description="No specific root cause is attributed; the prompt needs a general quality pass.",
    fix="Revise the prompt so that more of the sampled problems are answered correctly.",
    origin="fallback",
)

# Rounds that cannot charge the budget (degenerate configurations such as
# p=1 with a zero look-ahead cap) would loop forever; stop after this many
# consecutive zero-charge rounds.
MAX_STALLED_ROUNDS = 200


def expected_rounds(beta: float) -> float:
    """Expected rounds until the true root cause is first identified under
    geometric trials with per-round success probability beta."""
    if beta <= 0:
        raise NonPositiveBetaError(f"beta must be positive, got {beta}")
    if beta > 1:
        raise ValueError(f"beta is a probability, got {beta}")
    return 1.0 / beta


@dataclass
class BudgetLedger:
    initial: int
    charges: list[tuple[int, str, int]] = field(default_factory=list)
    _spent: int = 0

    @property
    def remaining(self) -> int:
        return self.initial - self._spent

    def add(self, iteration: int, branch: str, amount: int) -> None:
        self.charges.append((iteration, branch, amount))
        self._spent += amount

    def total_charged(self) -> int:
        return self._spent

    def to_dict(self) -> dict:
        return {
            "initial": self.initial,
            "remaining": self.remaining,
            "charges": [
                {"iteration": it, "branch": br, "amount": amt}
                for it, br, amt in self.charges
            ],
        }


@dataclass(frozen=True)
class ProposalRecord:
    slot: int
    label: str
    origin: str
    candidate_id: int
    delta_minibatch: int
    correct_count: int

    def to_dict(self) -> dict:
        return {
            "slot": self.slot,
            "label": self.label,
            "origin": self.origin,
            "candidate_id": self.candidate_id,
            "delta_minibatch": self.delta_minibatch,
            "correct_count": self.correct_count,
        }


@dataclass
class RoundOutcome:
    iteration: int
    branch: str
    parent_id: int | None
    minibatch: tuple[str, ...]
    charge: int
    proposals: list[ProposalRecord] = field(default_factory=list)
    winner: int | None = None
    winner_label: str | None = None
    pool_accepted: bool = False
    best_updated: bool = False
    lookahead_steps: int = 0
    log: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "branch": self.branch,
            "parent_id": self.parent_id,
            "minibatch": list(self.minibatch),
            "charge": self.charge,
            "proposals": [p.to_dict() for p in self.proposals],
            "winner": self.winner,
            "winner_label": self.winner_label,
            "pool_accepted": self.pool_accepted,
            "best_updated": self.best_updated,
            "lookahead_steps": self.lookahead_steps,
            "log": list(self.log),
        }


@dataclass
class RunResult:
    best: PromptCandidate
    pool: ParetoPool
    trace: SemanticTraceTree
    ledger: BudgetLedger
    outcomes: list[RoundOutcome]
    candidates: dict[int, PromptCandidate]
    evaluator: Evaluator
    resolved_config: dict


def _json_dump(data: dict) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


class OptimizationRun:
    """Single-coordinator run state; the only concurrency is inside the
    evaluator, which merges in fixed order, so every run is a pure function
    of (config, dataset, seed)."""

    def __init__(
        self,
        config: RunConfig,
        dataset: TaskDataset,
        taxonomy: Taxonomy,
        backend: Backend,
        seed_prompt: str,
        out_dir: str | Path | None = None,
        resolved_config: dict | None = None,
        template_paths: dict | None = None,
    ):
        self.config = config
        self.dataset = dataset
        self.taxonomy = taxonomy
        self.backend = backend
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.resolved_config = resolved_config or config.to_dict()

        template_paths = template_paths or {}
        self.evaluator = Evaluator(backend, max_parallel=config.max_parallel)
        self.hypothesis_template = load_template("hypothesis", template_paths.get("hypothesis"))
        self.reflection_template = load_template("reflection", template_paths.get("reflection"))

        # Independent named streams keep the branch sequence replayable
        # without simulating pool dynamics.
        seed = config.rng_seed
        self.rng_parent = random.Random(f"{seed}/parent")
        self.rng_minibatch = random.Random(f"{seed}/minibatch")
        self.rng_branch = random.Random(f"{seed}/branch")
        self.rng_slots = random.Random(f"{seed}/slots")
        self.rng_lookahead = random.Random(f"{seed}/lookahead")

        self._train_ids = [item.id for item in dataset.train]
        self._next_id = 0
        self.candidates: dict[int, PromptCandidate] = {}
        self.outcomes: list[RoundOutcome] = []
        self.ledger = BudgetLedger(initial=config.budget)

        # Seed initialization: the seed is validation-scored (unmetered,
        # pre-loop) and enters the pool unconditionally.
        seed_candidate = self._new_candidate(
            seed_prompt, parent_id=None, label="seed", origin="seed", iteration=0)
        scores, _ = self.evaluator.evaluate_val(seed_prompt, dataset, charged=False)
        seed_candidate = seed_candidate.with_val_scores(scores)
        self.candidates[seed_candidate.id] = seed_candidate
        self.best = seed_candidate
        self.pool = ParetoPool(vector_length=len(dataset.val))
        self.pool.insert_seed(seed_candidate.id, scores)
        self.trace = SemanticTraceTree.with_root(
            TraceNode(id=seed_candidate.id, val_accuracy=seed_candidate.val_accuracy))

    # ------------------------------------------------------------ helpers

    def _new_candidate(self, text: str, parent_id: int | None, label: str,
                       origin: str, iteration: int) -> PromptCandidate:
        candidate = PromptCandidate(
            id=self._next_id,
            text=text,
            iteration=iteration,
            parent_id=parent_id,
            created_by=CreatedBy(label=label, origin=origin),
        )
        self._next_id += 1
        self.candidates[candidate.id] = candidate
        return candidate

    def _reflect(self, parent_text: str, hypothesis: Hypothesis,
                 failures: list[FailureCase]) -> str:
        prompt = render_reflection_prompt(
            self.reflection_template, parent_text, hypothesis, failures)
        response = self.backend.generate(
            GenerationRequest(role="reflection_agent", messages=(("user", prompt),)))
        return extract_rewritten_prompt(response)

    def _val_gate(self, outcome: RoundOutcome, candidate: PromptCandidate) -> PromptCandidate:
        """Score the branch winner on the full validation set, then apply
        the two independent gates: pool insertion and best-so-far."""
        scores, _ = self.evaluator.evaluate_val(candidate.text, self.dataset, charged=True)
        scored = candidate.with_val_scores(scores)
        self.candidates[scored.id] = scored
        outcome.charge += len(self.dataset.val)
        insert = self.pool.try_insert(scored.id, scores)
        outcome.pool_accepted = insert.accepted
        if scored.val_accuracy > self.best.val_accuracy:
            self.best = scored
            outcome.best_updated = True
        return scored

    def _delta_val_pp(self, candidate: PromptCandidate, parent: PromptCandidate) -> float:
        return round((candidate.val_accuracy - parent.val_accuracy) * 100, 6)

    # ------------------------------------------------------------- rounds

    def run(self) -> RunResult:
        self._write_static_artifacts()
        stalled = 0
        iteration = 0
        while self.ledger.remaining > 0:
            iteration += 1
            outcome = self.step_round(iteration)
            self.outcomes.append(outcome)
            self.ledger.add(iteration, outcome.branch, outcome.charge)
            self._write_round_artifacts(outcome)
            if outcome.charge == 0:
                stalled += 1
                if stalled >= MAX_STALLED_ROUNDS:
                    logger.warning("stopping after %d zero-charge rounds", stalled)
                    break
            else:
                stalled = 0
        self._write_final_artifacts()
        return RunResult(
            best=self.best,
            pool=self.pool,
            trace=self.trace,
            ledger=self.ledger,
            outcomes=self.outcomes,
            candidates=self.candidates,
            evaluator=self.evaluator,
            resolved_config=self.resolved_config,
        )

    def step_round(self, iteration: int) -> RoundOutcome:
        parent_id = self.pool.select_parent(self.rng_parent)
        parent = self.candidates[parent_id]
        minibatch = sample_minibatch(self.dataset.train, self.config.b, self.rng_minibatch)
        # Parent baseline on this round's minibatch: needed for failure
        # collection and accuracy gains, unmetered by the budget.
        parent_result = self.evaluator.evaluate_minibatch(
            parent.text, self.dataset, minibatch, charged=False)

        if self.config.mode == "baseline":
            return self._fallback_round(iteration, parent, parent_result, minibatch, log=[])

        if self.rng_branch.random() < self.config.p:
            return self._restart_round(iteration, parent, parent_result, minibatch)

        failures = collect_failures(parent_result, self.dataset)
        if not failures:
            return self._fallback_round(
                iteration, parent, parent_result, minibatch, log=[NO_FAILURES_LOG])
        return self._hypothesis_round(iteration, parent, parent_result, minibatch, failures)

    # --------------------------------------------------- hypothesis branch

    def _hypothesis_round(self, iteration: int, parent: PromptCandidate,
                          parent_result: MinibatchResult, minibatch: list[str],
                          failures: list[FailureCase]) -> RoundOutcome:
        cfg = self.config
        outcome = RoundOutcome(iteration=iteration, branch=BRANCH_HYPOTHESES,
                               parent_id=parent.id, minibatch=tuple(minibatch), charge=0)
        origins = ["free" if self.rng_slots.random() < cfg.epsilon else "heuristic"
                   for _ in range(cfg.K)]
        prompt = render_hypothesis_prompt(
            self.hypothesis_template, parent.text, self.taxonomy, failures,
            cfg.K, self.trace.trajectory(parent.id))
        request = GenerationRequest(
            role="hypothesis_agent",
            messages=(("user", prompt),),
            extras={"slot_origins": tuple(origins)},
        )
        hypotheses = None
        for attempt in range(2):
            response = self.backend.generate(request)
            try:
                hypotheses, malformed = parse_hypotheses(
                    response, cfg.K, self.taxonomy, origins)
                break
            except NoBlocksFoundError:
                if attempt == 0:
                    outcome.log.append("Hypothesis agent response had no blocks; retrying once.")
        if hypotheses is None:
            # Only the generation calls were spent; nothing is metered.
            outcome.branch = BRANCH_SKIPPED
            outcome.log.append("Hypothesis agent returned no parseable blocks. Round skipped.")
            return outcome
        if malformed:
            outcome.log.append(f"{malformed} malformed hypothesis block(s) dropped.")

        slots: list[tuple[int, Hypothesis, str]] = []
        for slot, hyp in enumerate(hypotheses):
            try:
                rewrite = self._reflect(parent.text, hyp, failures)
            except EmptyRewriteError:
                outcome.log.append(f"Slot {slot} produced an empty rewrite; slot dropped.")
                continue
            slots.append((slot, hyp, rewrite))

        # The round charges b*K regardless of dropped slots.
        outcome.charge = cfg.b * cfg.K
        results = self.evaluator.evaluate_batches(
            [text for _, _, text in slots], self.dataset, minibatch, charged=True)

        winner_idx: int | None = None
        best_delta = 0
        proposals: list[tuple[ProposalRecord, PromptCandidate, Hypothesis]] = []
        for (slot, hyp, text), result in zip(slots, results):
            delta = delta_acc(result, parent_result)
            candidate = self._new_candidate(
                text, parent_id=parent.id, label=hyp.label, origin=hyp.origin,
                iteration=iteration)
            record = ProposalRecord(
                slot=slot, label=hyp.label, origin=hyp.origin,
                candidate_id=candidate.id, delta_minibatch=delta,
                correct_count=result.correct_count)
            proposals.append((record, candidate, hyp))
            outcome.proposals.append(record)
            if delta > best_delta:  # strict: ties break toward the lowest slot
                best_delta = delta
                winner_idx = len(proposals) - 1

        if winner_idx is None:
            outcome.log.append(NO_WINNER_LOG)
        else:
            record, candidate, hyp = proposals[winner_idx]
            scored = self._val_gate(outcome, candidate)
            outcome.winner = scored.id
            outcome.winner_label = record.label
            outcome.log.append(f"Selected slot {record.slot} [{record.label}]. Candidate accepted.")

        for i, (record, candidate, _hyp) in enumerate(proposals):
            accepted = i == winner_idx
            candidate = self.candidates[candidate.id]
            self.trace.record_proposal(
                TraceEdge(
                    from_id=parent.id,
                    to_id=candidate.id,
                    label=record.label,
                    delta_minibatch=record.delta_minibatch,
                    status=ACCEPTED if accepted else REJECTED,
                    iteration=iteration,
                    origin=record.origin,
                    delta_val_pp=self._delta_val_pp(candidate, parent) if accepted else None,
                ),
                TraceNode(
                    id=candidate.id,
                    val_accuracy=candidate.val_accuracy,
                    correct_count=record.correct_count,
                    minibatch_size=len(minibatch),
                ),
            )
        return outcome

    # ------------------------------------------------------ restart branch

    def _restart_round(self, iteration: int, parent: PromptCandidate,
                       parent_result: MinibatchResult, minibatch: list[str]) -> RoundOutcome:
        cfg = self.config
        outcome = RoundOutcome(iteration=iteration, branch=BRANCH_RESTART,
                               parent_id=parent.id, minibatch=tuple(minibatch), charge=0)
        if cfg.restart_lookahead_cap == 0:
            outcome.branch = BRANCH_SKIPPED
            outcome.log.append("Restart look-ahead cap is 0; branch skipped.")
            return outcome

        # Blank-prompt look-ahead: run one training item, hand the raw
        # output to the reflection agent conditioned on nothing, and repeat
        # until the output parses cleanly.  Only the first probe is metered;
        # the loop length is logged.
        current = parent.text
        restart_text: str | None = None
        clean = False
        for step in range(cfg.restart_lookahead_cap):
            item = self.dataset.item(self.rng_lookahead.choice(self._train_ids))
            record = self.evaluator.evaluate_items(
                current, [item], charged=(step == 0))[0]
            outcome.lookahead_steps += 1
            probe = FailureCase(question="", gold="", raw_output=record.raw_output,
                                parse_error=record.parse_error)
            try:
                restart_text = self._reflect("", H_BLANK, [probe])
            except EmptyRewriteError:
                restart_text = None
                break
            current = restart_text
            if record.parse_error is None:
                clean = True
                break
        if restart_text is None or not clean:
            outcome.branch = BRANCH_SKIPPED
            outcome.charge = 1 if outcome.lookahead_steps else 0
            outcome.log.append(
                f"Restart look-ahead did not converge within {cfg.restart_lookahead_cap} steps; round skipped.")
            return outcome

        result = self.evaluator.evaluate_minibatch(
            restart_text, self.dataset, minibatch, charged=True)
        outcome.charge = cfg.b + 1
        delta = delta_acc(result, parent_result)
        candidate = self._new_candidate(
            restart_text, parent_id=None, label=BLANK_LABEL, origin="blank",
            iteration=iteration)
        record = ProposalRecord(
            slot=0, label=BLANK_LABEL, origin="blank", candidate_id=candidate.id,
            delta_minibatch=delta, correct_count=result.correct_count)
        outcome.proposals.append(record)

        accepted = delta > 0
        if accepted:
            scored = self._val_gate(outcome, candidate)
            outcome.winner = scored.id
            outcome.winner_label = BLANK_LABEL
            outcome.log.append("Random restart accepted.")
        else:
            outcome.log.append(RESTART_NO_IMPROVEMENT_LOG)
            outcome.log.append(
                f"Validation: old_sum={float(parent_result.correct_count):.4f}, "
                f"new_sum={float(result.correct_count):.4f}, improved=False.")

        candidate = self.candidates[candidate.id]
        self.trace.record_proposal(
            TraceEdge(
                from_id=None,
                to_id=candidate.id,
                label=BLANK_LABEL,
                delta_minibatch=delta,
                status=ACCEPTED if accepted else REJECTED,
                iteration=iteration,
                origin="blank",
                delta_val_pp=self._delta_val_pp(candidate, parent) if accepted else None,
            ),
            TraceNode(
                id=candidate.id,
                val_accuracy=candidate.val_accuracy,
                correct_count=result.correct_count,
                minibatch_size=len(minibatch),
            ),
        )
        return outcome

    # ----------------------------------------------------- fallback branch

    def _fallback_round(self, iteration: int, parent: PromptCandidate,
                        parent_result: MinibatchResult, minibatch: list[str],
                        log: list[str]) -> RoundOutcome:
        cfg = self.config
        outcome = RoundOutcome(iteration=iteration, branch=BRANCH_FALLBACK,
                               parent_id=parent.id, minibatch=tuple(minibatch),
                               charge=0, log=list(log))
        failures = collect_failures(parent_result, self.dataset)
        try:
            text = self._reflect(parent.text, FALLBACK_DIRECTIVE, failures)
        except EmptyRewriteError:
            outcome.branch = BRANCH_SKIPPED
            outcome.log.append("Fallback mutation produced an empty rewrite. Round skipped.")
            return outcome

        result = self.evaluator.evaluate_minibatch(text, self.dataset, minibatch, charged=True)
        outcome.charge = cfg.b
        delta = delta_acc(result, parent_result)
        candidate = self._new_candidate(
            text, parent_id=parent.id, label=UNLABELED, origin="fallback",
            iteration=iteration)
        record = ProposalRecord(
            slot=0, label=UNLABELED, origin="fallback", candidate_id=candidate.id,
            delta_minibatch=delta, correct_count=result.correct_count)
        outcome.proposals.append(record)

        accepted = result.correct_count > parent_result.correct_count
        if accepted:
            scored = self._val_gate(outcome, candidate)
            outcome.winner = scored.id
            outcome.winner_label = UNLABELED
            outcome.log.append("Single-mutation candidate accepted.")
        else:
            outcome.log.append(
                f"Candidate subsample score {float(result.correct_count):.1f} is not better "
                f"than old score {float(parent_result.correct_count):.1f}, skipping.")

        candidate = self.candidates[candidate.id]
        self.trace.record_proposal(
            TraceEdge(
                from_id=parent.id,
                to_id=candidate.id,
                label=UNLABELED,
                delta_minibatch=delta,
                status=ACCEPTED if accepted else REJECTED,
                iteration=iteration,
                origin="fallback",
                delta_val_pp=self._delta_val_pp(candidate, parent) if accepted else None,
            ),
            TraceNode(
                id=candidate.id,
                val_accuracy=candidate.val_accuracy,
                correct_count=result.correct_count,
                minibatch_size=len(minibatch),
            ),
        )
        return outcome

    # ---------------------------------------------------------- artifacts

    def _write_static_artifacts(self) -> None:
        if self.out_dir is None:
            return
        self.out_dir.mkdir(parents=True, exist_ok=True)
        (self.out_dir / "rounds").mkdir(exist_ok=True)
        (self.out_dir / "config.json").write_text(
            _json_dump(self.resolved_config), encoding="utf-8")
        self._write_state()

    def _write_round_artifacts(self, outcome: RoundOutcome) -> None:
        if self.out_dir is None:
            return
        path = self.out_dir / "rounds" / f"{outcome.iteration:03d}.json"
        path.write_text(_json_dump(outcome.to_dict()), encoding="utf-8")
        self._write_state()

    def _write_state(self) -> None:
        (self.out_dir / "trace.json").write_text(
            export_tree(self.trace, "json"), encoding="utf-8")
        (self.out_dir / "trace.dot").write_text(
            export_tree(self.trace, "dot"), encoding="utf-8")
        (self.out_dir / "pool.json").write_text(
            _json_dump(self.pool.snapshot()), encoding="utf-8")
        (self.out_dir / "ledger.json").write_text(
            _json_dump(self.ledger.to_dict()), encoding="utf-8")

    def _write_final_artifacts(self) -> None:
        if self.out_dir is None:
            return
        self._write_state()
        (self.out_dir / "best_prompt.txt").write_text(self.best.text, encoding="utf-8")


def run(
    config: RunConfig,
    dataset: TaskDataset,
    taxonomy: Taxonomy,
    backend: Backend,
    seed_prompt: str,
    out_dir: str | Path | None = None,
    resolved_config: dict | None = None,
    template_paths: dict | None = None,
) -> RunResult:
    """Execute rounds until the budget is exhausted and return the best
    candidate, pool, trace, ledger, and per-round outcomes."""
    engine = OptimizationRun(
        config=config,
        dataset=dataset,
        taxonomy=taxonomy,
        backend=backend,
        seed_prompt=seed_prompt,
        out_dir=out_dir,
        resolved_config=resolved_config,
        template_paths=template_paths,
    )
    return engine.run()
