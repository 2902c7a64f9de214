"""Seeded toy MABSA corpora whose labels follow from a simple cue-word rule.

Every aspect is a run of one or two noun tokens ``n*`` directly followed by a
polarity cue (``cue_pos``, ``cue_neu``, ``cue_neg``). Everything else in the
sentence is filler ``w*``. Image slots point along a per-polarity direction of
the majority sentiment, and the rationales restate the aspects and cues.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .codec import AspectTriple, Sentiment
from .data import MultimodalExample

CUES = {
    Sentiment.POSITIVE: "cue_pos",
    Sentiment.NEUTRAL: "cue_neu",
    Sentiment.NEGATIVE: "cue_neg",
}
_CUE_TO_SENTIMENT = {v: k for k, v in CUES.items()}
_MOOD = {Sentiment.POSITIVE: "happy", Sentiment.NEUTRAL: "calm", Sentiment.NEGATIVE: "gloomy"}


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    num_train: int = 64
    num_dev: int = 16
    num_test: int = 16
    num_fillers: int = 40
    num_nouns: int = 24
    min_text_len: int = 9
    max_text_len: int = 14
    min_aspects: int = 0
    max_aspects: int = 3
    image_slots: int = 2
    d_visual: int = 16
    image_noise: float = 0.3
    seed: int = 0

    def validate(self) -> None:
        if min(self.num_train, self.num_dev, self.num_test) < 0:
            raise SpecError("split sizes must be non-negative")
        if not 0 <= self.min_aspects <= self.max_aspects:
            raise SpecError("aspect range is empty")
        if not 1 <= self.min_text_len <= self.max_text_len:
            raise SpecError("text length range is empty")
        # worst case: every aspect is two nouns plus its cue
        if 3 * self.max_aspects > self.min_text_len:
            raise SpecError(f"{self.max_aspects} aspects do not fit in {self.min_text_len} tokens")
        if self.num_nouns < 2 * self.max_aspects or self.num_fillers < 1:
            raise SpecError("vocabulary too small for the requested aspects")
        if self.image_slots < 1 or self.d_visual < 1:
            raise SpecError("image dimensions must be positive")


def _polarity_directions(spec: SynthSpec) -> dict:
    rng = np.random.default_rng([spec.seed, 1])
    dirs = rng.normal(size=(4, spec.d_visual))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return {Sentiment.POSITIVE: dirs[0], Sentiment.NEUTRAL: dirs[1], Sentiment.NEGATIVE: dirs[2], None: dirs[3]}


def _make_example(ex_id: str, spec: SynthSpec, rng: np.random.Generator, directions) -> MultimodalExample:
    length = int(rng.integers(spec.min_text_len, spec.max_text_len + 1))
    k = int(rng.integers(spec.min_aspects, spec.max_aspects + 1))
    sentiments = [list(CUES)[i] for i in rng.integers(0, 3, size=k)]
    span_lens = [int(n) for n in rng.integers(1, 3, size=k)]
    nouns = [f"n{i}" for i in rng.permutation(spec.num_nouns)[: sum(span_lens)]]

    chunks: list[list[str]] = []
    pos = 0
    for s, n in zip(sentiments, span_lens):
        chunks.append(nouns[pos : pos + n] + [CUES[s]])
        pos += n
    n_fill = length - sum(len(c) for c in chunks)
    chunks += [[f"w{int(i)}"] for i in rng.integers(0, spec.num_fillers, size=n_fill)]
    order = rng.permutation(len(chunks))

    tokens: list[str] = []
    gold: list[AspectTriple] = []
    for j in order:
        chunk = chunks[j]
        if j < k:
            gold.append(AspectTriple(len(tokens), len(tokens) + len(chunk) - 2, sentiments[j]))
        tokens.extend(chunk)
    gold.sort()

    majority = Counter(t.sentiment for t in gold).most_common(1)[0][0] if gold else None
    feats = directions[majority][None, :] + spec.image_noise * rng.normal(size=(spec.image_slots, spec.d_visual))

    if gold:
        img_r = ["picture", "shows"]
        txt_r = ["text", "says"]
        for t in gold:
            words = tokens[t.start : t.end + 1]
            img_r += words + ["looking", _MOOD[t.sentiment]]
            txt_r += words + ["is", CUES[t.sentiment]]
    else:
        img_r = ["picture", "shows", "nothing", "notable"]
        txt_r = ["text", "names", "no", "aspect"]
    return MultimodalExample(ex_id, tokens, feats, img_r, txt_r, gold, image_ref=f"img/{ex_id}.jpg")


def generate_corpus(spec: SynthSpec) -> tuple[list[MultimodalExample], list[MultimodalExample], list[MultimodalExample]]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    directions = _polarity_directions(spec)
    total = spec.num_train + spec.num_dev + spec.num_test
    examples = [_make_example(f"syn-{i:05d}", spec, rng, directions) for i in range(total)]
    perm = rng.permutation(total)
    a, b = spec.num_train, spec.num_train + spec.num_dev
    pick = lambda idx: [examples[i] for i in sorted(idx)]  # noqa: E731
    return pick(perm[:a]), pick(perm[a:b]), pick(perm[b:])


def rule_reader(tokens: list[str]) -> list[AspectTriple]:
    """Recover triples from cue words alone; perfect on generated data."""
    found = []
    for i, tok in enumerate(tokens):
        if tok not in _CUE_TO_SENTIMENT:
            continue
        start = i
        while start > 0 and i - start < 2 and tokens[start - 1].startswith("n"):
            start -= 1
        if start < i:
            found.append(AspectTriple(start, i - 1, _CUE_TO_SENTIMENT[tok]))
    return found
