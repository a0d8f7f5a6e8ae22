"""Lexicon-based sentiment scoring for generated stories.

Each sentence scores +1, 0, or -1 by the sign of (positive hits - negative
hits) against a subjectivity lexicon. A story's divergence is the population
standard deviation of its sentence scores; its total is their sum. Totals
can be grouped by externally supplied event labels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .data import DataError


class Lexicon:
    """word -> polarity in {+1, -1}; lookups are case-insensitive."""

    def __init__(self, polarities: dict[str, int]):
        self._polarity = {}
        for word, pol in polarities.items():
            key = word.lower()
            if pol not in (1, -1):
                raise DataError(f"lexicon: polarity for {word!r} must be +1 or -1")
            if self._polarity.get(key, pol) != pol:
                raise DataError(f"lexicon: {key!r} maps to both polarities")
            self._polarity[key] = pol

    def __len__(self) -> int:
        return len(self._polarity)

    def polarity(self, word: str) -> int:
        """+1, -1, or 0 for words not in the lexicon."""
        return self._polarity.get(word.lower(), 0)

    @classmethod
    def from_tsv(cls, path) -> "Lexicon":
        """Parse `word<TAB>polarity` lines, polarity in {positive, negative}."""
        polarities: dict[str, int] = {}
        mapping = {"positive": 1, "negative": -1}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                fields = line.split("\t")
                if len(fields) != 2 or fields[1] not in mapping:
                    raise DataError(f"{path}:{lineno}: malformed lexicon line {line!r}")
                word = fields[0].lower()
                pol = mapping[fields[1]]
                if polarities.get(word, pol) != pol:
                    raise DataError(f"{path}:{lineno}: {word!r} maps to both polarities")
                polarities[word] = pol
        return cls(polarities)


def sentence_score(tokens: list[str], lex: Lexicon) -> int:
    """sign(positive hits - negative hits); ties and no hits give 0."""
    p = sum(1 for t in tokens if lex.polarity(t) == 1)
    q = sum(1 for t in tokens if lex.polarity(t) == -1)
    return (p > q) - (p < q)


def in_story_divergence(scores: list[int]) -> float:
    """Population standard deviation of the per-sentence scores."""
    if not scores:
        raise DataError("in_story_divergence: empty score vector")
    mean = sum(scores) / len(scores)
    return math.sqrt(sum((s - mean) ** 2 for s in scores) / len(scores))


def topic_story_score(scores: list[int]) -> int:
    return sum(scores)


@dataclass
class StorySentiment:
    scores: list[int]
    divergence: float
    total: int


def score_story(sentences: list[list[str]], lex: Lexicon) -> StorySentiment:
    scores = [sentence_score(tokens, lex) for tokens in sentences]
    return StorySentiment(
        scores=scores,
        divergence=in_story_divergence(scores),
        total=topic_story_score(scores),
    )


@dataclass
class SentimentSummary:
    mean_divergence: float
    event_means: dict[str, float]   # event label -> mean story total
    event_counts: dict[str, int]


def aggregate(stories: list[StorySentiment], event_labels: list[str] | None = None,
              known_events: list[str] | None = None) -> SentimentSummary:
    """Corpus mean divergence plus per-event mean totals.

    Labels outside known_events (when given) group under "other"."""
    if not stories:
        raise DataError("aggregate: no stories")
    if event_labels is None:
        event_labels = ["all"] * len(stories)
    if len(event_labels) != len(stories):
        raise DataError(
            f"aggregate: {len(stories)} stories but {len(event_labels)} event labels"
        )
    totals: dict[str, list[int]] = {}
    for story, label in zip(stories, event_labels):
        if known_events is not None and label not in known_events:
            label = "other"
        totals.setdefault(label, []).append(story.total)
    return SentimentSummary(
        mean_divergence=sum(s.divergence for s in stories) / len(stories),
        event_means={k: sum(v) / len(v) for k, v in sorted(totals.items())},
        event_counts={k: len(v) for k, v in sorted(totals.items())},
    )
