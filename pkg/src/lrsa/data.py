"""Multimodal examples and the JSONL corpus format.

One JSON object per line::

    {"id": "train-0003", "text": ["n4", "cue_pos", ...],
     "image_features": [[0.1, ...], [...]],
     "image_rationale": [...], "text_rationale": [...],
     "gold": [[0, 0, "positive"]], "image_ref": "img/0003.jpg"}

``image_ref`` is optional. A flat ``image_features`` list is read as one slot.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .codec import AspectTriple

SPLITS = ("train", "dev", "test")


class CorpusError(ValueError):
    pass


@dataclass
class MultimodalExample:
    id: str
    text_tokens: list[str]
    image_features: np.ndarray
    image_rationale_tokens: list[str] = field(default_factory=list)
    text_rationale_tokens: list[str] = field(default_factory=list)
    gold: list[AspectTriple] = field(default_factory=list)
    image_ref: str | None = None

    def __post_init__(self):
        feats = np.asarray(self.image_features, dtype=np.float64)
        if feats.ndim == 1:
            feats = feats[None, :]
        self.image_features = feats
        if not self.text_tokens:
            raise CorpusError(f"{self.id}: empty text")
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise CorpusError(f"{self.id}: image features must be a non-empty matrix")
        for t in self.gold:
            if not t.valid_for(len(self.text_tokens)):
                raise CorpusError(f"{self.id}: gold triple {tuple(t)} out of range")

    @property
    def text(self) -> str:
        return " ".join(self.text_tokens)

    def with_rationales(self, image_rationale: list[str], text_rationale: list[str]) -> "MultimodalExample":
        return replace(self, image_rationale_tokens=list(image_rationale), text_rationale_tokens=list(text_rationale))

    def to_json(self) -> dict:
        out = {
            "id": self.id,
            "text": list(self.text_tokens),
            "image_features": self.image_features.tolist(),
            "image_rationale": list(self.image_rationale_tokens),
            "text_rationale": list(self.text_rationale_tokens),
            "gold": [t.to_json() for t in self.gold],
        }
        if self.image_ref is not None:
            out["image_ref"] = self.image_ref
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "MultimodalExample":
        try:
            return cls(
                id=str(obj["id"]),
                text_tokens=list(obj["text"]),
                image_features=np.asarray(obj["image_features"], dtype=np.float64),
                image_rationale_tokens=list(obj.get("image_rationale", [])),
                text_rationale_tokens=list(obj.get("text_rationale", [])),
                gold=[AspectTriple.make(*g) for g in obj.get("gold", [])],
                image_ref=obj.get("image_ref"),
            )
        except (KeyError, TypeError) as exc:
            raise CorpusError(f"malformed corpus record: {exc}") from exc


def write_jsonl(path: str | Path, examples: Iterable[MultimodalExample]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for ex in examples:
            f.write(json.dumps(ex.to_json(), sort_keys=True) + "\n")


def read_jsonl(path: str | Path) -> list[MultimodalExample]:
    examples = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from exc
            ex = MultimodalExample.from_json(obj)
            if ex.id in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate id {ex.id}")
            seen.add(ex.id)
            examples.append(ex)
    return examples


def write_corpus(directory: str | Path, splits: dict[str, list[MultimodalExample]]) -> None:
    for name, examples in splits.items():
        write_jsonl(Path(directory) / f"{name}.jsonl", examples)


def read_corpus(directory: str | Path) -> dict[str, list[MultimodalExample]]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"corpus directory not found: {directory}")
    out = {}
    for name in SPLITS:
        p = directory / f"{name}.jsonl"
        out[name] = read_jsonl(p) if p.exists() else []
    if not any(out.values()):
        raise FileNotFoundError(f"no split files in {directory}")
    return out
