"""Candidate scoring: answer extraction, the exact-match metric, minibatch
sampling, accuracy gains, and failure-case collection.

The budget meters scored evaluations only.  Parent-baseline re-evaluations
and extra restart look-ahead probes are tracked separately as uncharged
work so the ledger stays an exact mirror of the charged counter.
"""

from __future__ import annotations

import json
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from typing import TYPE_CHECKING, Sequence

from .backends.base import Backend, GenerationRequest
from .errors import MinibatchMismatchError

if TYPE_CHECKING:
    from .domain import TaskDataset, TaskItem

NO_OBJECT_FOUND = "NoObjectFound"
MISSING_FIELD = "MissingField"

_NUMBER_RE = re.compile(r"^[+-]?[\d,]*\.?\d+$")
_DECODER = json.JSONDecoder()


def _canonical_decimal(d: Decimal) -> str:
    if d == d.to_integral_value():
        return str(int(d))
    return str(d.normalize())


def normalize_answer(text: str) -> str:
    """Trim, strip one layer of quotes, and canonicalize numerics so that
    "6", "6.0" and " 6 " all compare equal."""
    s = text.strip()
    if len(s) >= 2 and s[0] == s[-1] and s[0] in "\"'":
        s = s[1:-1].strip()
    compact = s.replace(",", "")
    if _NUMBER_RE.match(s):
        try:
            return _canonical_decimal(Decimal(compact))
        except InvalidOperation:
            pass
    return s


def _parse_decimal(s: str) -> Decimal | None:
    try:
        return Decimal(s)
    except InvalidOperation:
        return None


def exact_match(pred: str, gold: str) -> int:
    """1 iff numeric-equal when both parse as decimals, else string-equal.

    Exact decimal comparison, no epsilon: task answers are integers or
    short decimals, and an epsilon would silently pass answers like 6.0001.
    """
    if pred == gold:
        return 1
    dp, dg = _parse_decimal(pred), _parse_decimal(gold)
    if dp is not None and dg is not None:
        return int(dp == dg)
    return 0


def extract_final_answer(raw: str) -> tuple[str | None, str | None]:
    """Read the ``final_answer`` field of the first well-formed object in
    ``raw``.

    Scans for balanced ``{...}`` blocks rather than requiring the whole
    output to be one object; models occasionally wrap the object in prose
    and strictness would conflate format failures with reasoning failures.

    Returns ``(normalized_answer, None)`` or ``(None, parse_error)``.
    """
    idx = raw.find("{")
    obj = None
    while idx != -1:
        try:
            parsed, _end = _DECODER.raw_decode(raw, idx)
        except ValueError:
            idx = raw.find("{", idx + 1)
            continue
        if isinstance(parsed, dict):
            obj = parsed
            break
        idx = raw.find("{", idx + 1)
    if obj is None:
        return None, NO_OBJECT_FOUND
    if "final_answer" not in obj:
        return None, MISSING_FIELD
    value = obj["final_answer"]
    if not isinstance(value, (str, int, float)):
        return None, MISSING_FIELD
    return normalize_answer(str(value)), None


@dataclass(frozen=True)
class EvaluationRecord:
    item_id: str
    raw_output: str
    parse_error: str | None
    extracted_answer: str | None
    score: int

    def __post_init__(self):
        if self.parse_error is not None and (self.score != 0 or self.extracted_answer is not None):
            raise ValueError("parse_error implies score 0 and no extracted answer")


@dataclass(frozen=True)
class MinibatchResult:
    minibatch: tuple[str, ...]
    records: tuple[EvaluationRecord, ...]

    def __post_init__(self):
        if len(self.records) != len(self.minibatch):
            raise ValueError("one record per minibatch item required")

    @property
    def correct_count(self) -> int:
        return sum(r.score for r in self.records)


@dataclass(frozen=True)
class FailureCase:
    question: str
    gold: str
    raw_output: str
    parse_error: str | None


def sample_minibatch(train: Sequence["TaskItem"], b: int, rng: random.Random) -> list[str]:
    """Draw b distinct item ids uniformly without replacement from the
    run's seeded stream; callers draw afresh every round."""
    return rng.sample([item.id for item in train], b)


def delta_acc(candidate: MinibatchResult, parent: MinibatchResult) -> int:
    """Accuracy gain in count units (divide by b for the fraction form)."""
    if candidate.minibatch != parent.minibatch:
        raise MinibatchMismatchError("results come from different minibatches")
    return candidate.correct_count - parent.correct_count


def collect_failures(result: MinibatchResult, dataset: "TaskDataset") -> list[FailureCase]:
    """Failure cases for every score-0 record, in minibatch order."""
    failures = []
    for record in result.records:
        if record.score == 0:
            item = dataset.item(record.item_id)
            failures.append(
                FailureCase(
                    question=item.question,
                    gold=item.gold_answer,
                    raw_output=record.raw_output,
                    parse_error=record.parse_error,
                )
            )
    return failures


def score_output(item: "TaskItem", raw: str) -> EvaluationRecord:
    extracted, err = extract_final_answer(raw)
    if err is not None:
        return EvaluationRecord(item_id=item.id, raw_output=raw, parse_error=err,
                                extracted_answer=None, score=0)
    return EvaluationRecord(
        item_id=item.id,
        raw_output=raw,
        parse_error=None,
        extracted_answer=extracted,
        score=exact_match(extracted, item.gold_answer),
    )


class Evaluator:
    """Runs prompts over task items through a generation backend and keeps
    the charged/uncharged metric-call counters the ledger is checked
    against.

    Items are dispatched concurrently up to ``max_parallel`` and merged in
    item order, so downstream state is schedule-independent.  All
    randomness is drawn by the coordinator before dispatch.
    """

    def __init__(self, backend: Backend, max_parallel: int = 1):
        self.backend = backend
        self.max_parallel = max(1, int(max_parallel))
        self.metric_calls = 0
        self.uncharged_calls = 0

    def _generate(self, prompt_text: str, item: "TaskItem") -> str:
        request = GenerationRequest(
            role="base",
            messages=(("system", prompt_text), ("user", item.question)),
        )
        return self.backend.generate(request)

    def evaluate_items(self, prompt_text: str, items: Sequence["TaskItem"], *,
                       charged: bool) -> list[EvaluationRecord]:
        if self.max_parallel > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.max_parallel) as pool:
                raws = list(pool.map(lambda it: self._generate(prompt_text, it), items))
        else:
            raws = [self._generate(prompt_text, it) for it in items]
        if charged:
            self.metric_calls += len(items)
        else:
            self.uncharged_calls += len(items)
        return [score_output(item, raw) for item, raw in zip(items, raws)]

    def evaluate_minibatch(self, prompt_text: str, dataset: "TaskDataset",
                           minibatch: Sequence[str], *, charged: bool) -> MinibatchResult:
        items = [dataset.item(i) for i in minibatch]
        records = self.evaluate_items(prompt_text, items, charged=charged)
        return MinibatchResult(minibatch=tuple(minibatch), records=tuple(records))

    def evaluate_batches(self, prompt_texts: Sequence[str], dataset: "TaskDataset",
                         minibatch: Sequence[str], *, charged: bool) -> list[MinibatchResult]:
        """Evaluate several candidates on the same minibatch; the flattened
        (candidate, item) grid shares one worker pool and results merge in
        slot-then-item order."""
        items = [dataset.item(i) for i in minibatch]
        tasks = [(text, item) for text in prompt_texts for item in items]
        if self.max_parallel > 1 and len(tasks) > 1:
            with ThreadPoolExecutor(max_workers=self.max_parallel) as pool:
                raws = list(pool.map(lambda t: self._generate(t[0], t[1]), tasks))
        else:
            raws = [self._generate(text, item) for text, item in tasks]
        if charged:
            self.metric_calls += len(tasks)
        else:
            self.uncharged_calls += len(tasks)
        results = []
        n = len(items)
        for s, text in enumerate(prompt_texts):
            records = tuple(score_output(item, raw)
                            for item, raw in zip(items, raws[s * n:(s + 1) * n]))
            results.append(MinibatchResult(minibatch=tuple(minibatch), records=records))
        return results

    def evaluate_val(self, prompt_text: str, dataset: "TaskDataset", *,
                     charged: bool) -> tuple[list[int], list[EvaluationRecord]]:
        records = self.evaluate_items(prompt_text, dataset.val, charged=charged)
        return [r.score for r in records], records
