"""Mapping between aspect triples and the flat pointer/class index sequence.

Index space for a sentence of ``l_t`` tokens::

    [0, l_t)        pointers to text tokens
    l_t + 0/1/2     positive / neutral / negative
    l_t + 3         <eos>
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, NamedTuple, Sequence


class CodecError(ValueError):
    pass


class Sentiment(str, Enum):
    POSITIVE = "positive"
    NEUTRAL = "neutral"
    NEGATIVE = "negative"

    @property
    def offset(self) -> int:
        return _ORDER.index(self)

    @classmethod
    def parse(cls, value: "str | Sentiment") -> "Sentiment":
        if isinstance(value, Sentiment):
            return value
        v = str(value).strip().lower()
        aliases = {"pos": "positive", "neu": "neutral", "neg": "negative"}
        try:
            return cls(aliases.get(v, v))
        except ValueError:
            raise CodecError(f"unknown sentiment {value!r}") from None


_ORDER = [Sentiment.POSITIVE, Sentiment.NEUTRAL, Sentiment.NEGATIVE]
NUM_SENTIMENTS = 3


class AspectTriple(NamedTuple):
    start: int
    end: int
    sentiment: Sentiment

    @classmethod
    def make(cls, start: int, end: int, sentiment) -> "AspectTriple":
        return cls(int(start), int(end), Sentiment.parse(sentiment))

    def valid_for(self, l_t: int) -> bool:
        return 0 <= self.start <= self.end < l_t

    @property
    def span(self) -> tuple[int, int]:
        return self.start, self.end

    def to_json(self) -> list:
        return [self.start, self.end, self.sentiment.value]


def eos_index(l_t: int) -> int:
    return l_t + NUM_SENTIMENTS


def class_index(sentiment: Sentiment, l_t: int) -> int:
    return l_t + sentiment.offset


def _sort_key(t: AspectTriple):
    return t.start, t.end, t.sentiment.offset


def canonical(triples: Iterable[AspectTriple]) -> list[AspectTriple]:
    """Sorted by (start, end); one triple per span (the first in that order)."""
    out: list[AspectTriple] = []
    seen: set[tuple[int, int]] = set()
    for t in sorted(triples, key=_sort_key):
        if t.span not in seen:
            seen.add(t.span)
            out.append(t)
    return out


@dataclass(frozen=True)
class TargetSequence:
    indices: tuple[int, ...]
    l_t: int

    def __post_init__(self):
        if len(self.indices) % 3 != 1 or self.indices[-1] != eos_index(self.l_t):
            raise CodecError("target sequence must be 3k symbols followed by <eos>")
        if any(not 0 <= i <= eos_index(self.l_t) for i in self.indices):
            raise CodecError("target index outside the candidate space")

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)


def encode_triples(triples: Iterable[AspectTriple], l_t: int) -> TargetSequence:
    if l_t < 1:
        raise CodecError("sentence must have at least one token")
    triples = list(triples)
    for t in triples:
        if not isinstance(t, AspectTriple):
            raise CodecError(f"not an AspectTriple: {t!r}")
        if not t.valid_for(l_t):
            raise CodecError(f"triple {tuple(t)} invalid for sentence length {l_t}")
    seq: list[int] = []
    for t in sorted(triples, key=_sort_key):
        seq.extend((t.start, t.end, class_index(t.sentiment, l_t)))
    seq.append(eos_index(l_t))
    return TargetSequence(tuple(seq), l_t)


def decode_indices(seq: Sequence[int], l_t: int) -> tuple[list[AspectTriple], list[str]]:
    """Parse model output leniently; problems are reported, never raised."""
    eos = eos_index(l_t)
    body: list[int] = []
    terminated = False
    for i in seq:
        i = int(i)
        if i == eos:
            terminated = True
            break
        body.append(i)

    triples: list[AspectTriple] = []
    diagnostics: list[str] = []
    seen: set[tuple[int, int]] = set()
    n_full = len(body) - len(body) % 3
    for g in range(0, n_full, 3):
        s, e, c = body[g : g + 3]
        where = f"group {g // 3}"
        if not (0 <= s < l_t and 0 <= e < l_t):
            diagnostics.append(f"{where}: bad pointer ({s}, {e})")
            continue
        if not l_t <= c < eos:
            diagnostics.append(f"{where}: bad sentiment index {c}")
            continue
        if s > e:
            diagnostics.append(f"{where}: inverted span ({s}, {e})")
            continue
        if (s, e) in seen:
            diagnostics.append(f"{where}: duplicate span ({s}, {e})")
            continue
        seen.add((s, e))
        triples.append(AspectTriple(s, e, _ORDER[c - l_t]))
    if n_full < len(body):
        diagnostics.append(f"trailing incomplete group {body[n_full:]}")
    if not terminated:
        diagnostics.append("missing <eos>")
    return triples, diagnostics
