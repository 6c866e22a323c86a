"""Token and predicate similarity lookups.

Scores come from a symmetric token table (typically loaded from TSV).
Identical tokens score 1 without needing an entry; pairs absent from the
table score 0. Predicate-level similarity is the min of the subject and
object token scores, so one bad slot sinks the pair.
"""

from __future__ import annotations

import math
from typing import Iterable, Mapping

from .errors import ValidationError
from .model import GroundPredicate

__all__ = ["SimilarityTable"]


def _canon(a: str, b: str) -> tuple[str, str]:
    a, b = a.lower(), b.lower()
    return (a, b) if a <= b else (b, a)


class SimilarityTable:
    def __init__(self, scores: Mapping[tuple[str, str], float] | None = None):
        self._scores: dict[tuple[str, str], float] = {}
        for (a, b), s in (scores or {}).items():
            self.add(a, b, s)

    def add(self, a: str, b: str, score: float) -> None:
        if not a or not b:
            raise ValidationError("similarity tokens must be non-empty")
        if not math.isfinite(score) or not (0.0 <= score <= 1.0):
            raise ValidationError(f"similarity score out of [0, 1]: {score!r}")
        key = _canon(a, b)
        old = self._scores.get(key)
        if old is not None and old != score:
            raise ValidationError(
                f"conflicting scores for {key[0]!r}/{key[1]!r}: {old} vs {score}"
            )
        self._scores[key] = score

    def token_score(self, a: str, b: str) -> float:
        if a.lower() == b.lower():
            return 1.0
        return self._scores.get(_canon(a, b), 0.0)

    def covers(self, a: str, b: str) -> bool:
        """Whether the pair scores without falling back to the 0 default."""
        return a.lower() == b.lower() or _canon(a, b) in self._scores

    def predicate_score(self, p: GroundPredicate, q: GroundPredicate) -> float:
        """min(subject score, object score); missing objects compare as ''."""
        return min(
            self.token_score(p.subject, q.subject),
            self.token_score(p.object, q.object),
        )

    def items(self) -> Iterable[tuple[str, str, float]]:
        for (a, b), s in sorted(self._scores.items()):
            yield a, b, s

    def __len__(self) -> int:
        return len(self._scores)

    @classmethod
    def from_tsv(cls, text: str) -> "SimilarityTable":
        """Parse ``token_a<TAB>token_b<TAB>score`` lines; # starts a comment."""
        table = cls()
        for ln, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValidationError(f"similarity line {ln}: expected 3 columns")
            try:
                score = float(parts[2])
            except ValueError:
                raise ValidationError(f"similarity line {ln}: bad score {parts[2]!r}")
            table.add(parts[0], parts[1], score)
        return table

    def to_tsv(self) -> str:
        lines = ["# token_a\ttoken_b\tscore"]
        for a, b, s in self.items():
            lines.append(f"{a}\t{b}\t{format(s, '.9g')}")
        return "\n".join(lines) + "\n"
