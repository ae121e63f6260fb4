"""The candidate pool: per-sample dominance, insertion with eviction, and
win-count-proportional parent sampling."""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .errors import EmptyPoolError, LengthMismatchError


def dominates(a: list[int] | tuple[int, ...], b: list[int] | tuple[int, ...]) -> bool:
    """Strict per-sample dominance: a >= b everywhere and > somewhere."""
    if len(a) != len(b):
        raise LengthMismatchError(f"vectors of length {len(a)} vs {len(b)}")
    strictly_better = False
    for x, y in zip(a, b):
        if x < y:
            return False
        if x > y:
            strictly_better = True
    return strictly_better


@dataclass(frozen=True)
class InsertOutcome:
    accepted: bool
    dominated_by: int | None = None   # member id that rejected the candidate
    evicted: tuple[int, ...] = ()     # member ids removed on accept


@dataclass
class ParetoPool:
    """Non-dominated candidates over the ordered validation set.

    Mutated only by the coordinator between rounds; readers during a round
    see an immutable snapshot via ``snapshot()``.
    """

    vector_length: int
    members: list[int] = field(default_factory=list)
    score_matrix: dict[int, tuple[int, ...]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.members)

    def __contains__(self, candidate_id: int) -> bool:
        return candidate_id in self.score_matrix

    def scores(self, candidate_id: int) -> tuple[int, ...]:
        return self.score_matrix[candidate_id]

    def _check_length(self, vector: tuple[int, ...]) -> None:
        if len(vector) != self.vector_length:
            raise LengthMismatchError(
                f"vector length {len(vector)} != pool length {self.vector_length}")

    def try_insert(self, candidate_id: int, vector: list[int] | tuple[int, ...]) -> InsertOutcome:
        """Reject iff some member dominates the candidate; on accept, insert
        and evict every member the candidate dominates."""
        vector = tuple(int(v) for v in vector)
        self._check_length(vector)
        for member in self.members:
            if dominates(self.score_matrix[member], vector):
                return InsertOutcome(accepted=False, dominated_by=member)
        evicted = tuple(m for m in self.members if dominates(vector, self.score_matrix[m]))
        for member in evicted:
            self.members.remove(member)
            del self.score_matrix[member]
        self.members.append(candidate_id)
        self.score_matrix[candidate_id] = vector
        return InsertOutcome(accepted=True, evicted=evicted)

    def insert_seed(self, candidate_id: int, vector: list[int] | tuple[int, ...]) -> None:
        """The seed enters unconditionally at initialization; the normal
        eviction rule removes it later if dominated."""
        vector = tuple(int(v) for v in vector)
        self._check_length(vector)
        if self.members:
            raise ValueError("seed insertion only valid on an empty pool")
        self.members.append(candidate_id)
        self.score_matrix[candidate_id] = vector

    def win_counts(self) -> dict[int, int]:
        """Member wins = validation samples where the member attains the
        pool-wide per-sample maximum; ties credit every maximizer."""
        counts = {m: 0 for m in self.members}
        for i in range(self.vector_length):
            best = max(self.score_matrix[m][i] for m in self.members)
            for m in self.members:
                if self.score_matrix[m][i] == best:
                    counts[m] += 1
        return counts

    def select_parent(self, rng: random.Random) -> int:
        """Sample a member with weight win_count + 1.

        The +1 smoothing keeps every non-dominated member reachable; a
        member can sit on the frontier with zero coordinate wins under
        graded scores, and the bare proportional rule would starve it.
        """
        if not self.members:
            raise EmptyPoolError("cannot select a parent from an empty pool")
        if len(self.members) == 1:
            return self.members[0]
        counts = self.win_counts()
        weights = [counts[m] + 1 for m in self.members]
        return rng.choices(self.members, weights=weights, k=1)[0]

    def snapshot(self) -> dict:
        counts = self.win_counts() if self.members else {}
        return {
            "members": list(self.members),
            "score_matrix": [list(self.score_matrix[m]) for m in self.members],
            "win_counts": [counts[m] for m in self.members],
        }

    def check_invariants(self) -> None:
        for m in self.members:
            if len(self.score_matrix[m]) != self.vector_length:
                raise AssertionError("score vector length drifted")
            for other in self.members:
                if other != m and dominates(self.score_matrix[other], self.score_matrix[m]):
                    raise AssertionError(f"member {m} is dominated by {other}")


def non_dominated_subset(vectors: dict[int, tuple[int, ...]]) -> set[int]:
    """Brute-force non-dominated set; the O(n^2 * len) oracle used by tests
    to cross-check pool behaviour on small instances."""
    keep = set()
    for cid, vec in vectors.items():
        if not any(dominates(other_vec, vec) for oid, other_vec in vectors.items() if oid != cid):
            keep.add(cid)
    return keep
