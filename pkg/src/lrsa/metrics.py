"""Corpus-level micro P/R/F1 for MABSA and MATE, accuracy/F1 for MASC.

Each example's triples are first reduced to one per span (see
``codec.canonical``): duplicates cannot earn double credit, and a span given
two sentiments keeps the first in positive/neutral/negative order.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping

from .codec import AspectTriple, canonical


class AlignmentError(ValueError):
    pass


class Task(str, Enum):
    MABSA = "MABSA"
    MATE = "MATE"
    MASC = "MASC"


@dataclass(frozen=True)
class EvalReport:
    task: Task
    precision: float
    recall: float
    f1: float
    accuracy: float | None
    num_pred: int
    num_gold: int
    num_correct: int

    def to_text(self) -> str:
        lines = [
            f"task={self.task.value}",
            f"precision={self.precision!r}",
            f"recall={self.recall!r}",
            f"f1={self.f1!r}",
        ]
        if self.accuracy is not None:
            lines.append(f"accuracy={self.accuracy!r}")
        lines += [
            f"num_pred={self.num_pred}",
            f"num_gold={self.num_gold}",
            f"num_correct={self.num_correct}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EvalReport":
        kv = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
        return cls(
            task=Task(kv["task"]),
            precision=float(kv["precision"]),
            recall=float(kv["recall"]),
            f1=float(kv["f1"]),
            accuracy=float(kv["accuracy"]) if "accuracy" in kv else None,
            num_pred=int(kv["num_pred"]),
            num_gold=int(kv["num_gold"]),
            num_correct=int(kv["num_correct"]),
        )


Corpus = Mapping[str, Iterable[AspectTriple]]


def _aligned(gold: Corpus, pred: Corpus) -> list[str]:
    if set(gold) != set(pred):
        missing = sorted(set(gold) ^ set(pred))
        raise AlignmentError(f"gold/pred ids differ: {missing[:5]}")
    return sorted(gold)


def _prf(task: Task, n_pred: int, n_gold: int, n_correct: int, accuracy=None) -> EvalReport:
    p = n_correct / n_pred if n_pred else 0.0
    r = n_correct / n_gold if n_gold else 0.0
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return EvalReport(task, p, r, f1, accuracy, n_pred, n_gold, n_correct)


def _set_match(task: Task, gold: Corpus, pred: Corpus, key) -> EvalReport:
    n_pred = n_gold = n_correct = 0
    for ex_id in _aligned(gold, pred):
        g = {key(t) for t in canonical(gold[ex_id])}
        p = {key(t) for t in canonical(pred[ex_id])}
        n_pred += len(p)
        n_gold += len(g)
        n_correct += len(g & p)
    return _prf(task, n_pred, n_gold, n_correct)


def mabsa_score(gold: Corpus, pred: Corpus) -> EvalReport:
    return _set_match(Task.MABSA, gold, pred, lambda t: (t.start, t.end, t.sentiment))


def mate_score(gold: Corpus, pred: Corpus) -> EvalReport:
    return _set_match(Task.MATE, gold, pred, lambda t: (t.start, t.end))


def masc_score(gold: Corpus, pred: Corpus) -> EvalReport:
    """Sentiment quality on gold aspects whose span the prediction also found."""
    n_matched = n_correct = 0
    for ex_id in _aligned(gold, pred):
        predicted = {t.span: t.sentiment for t in canonical(pred[ex_id])}
        for t in canonical(gold[ex_id]):
            if t.span in predicted:
                n_matched += 1
                n_correct += predicted[t.span] == t.sentiment
    acc = n_correct / n_matched if n_matched else 0.0
    return _prf(Task.MASC, n_matched, n_matched, n_correct, accuracy=acc)


def score_all(gold: Corpus, pred: Corpus) -> dict[Task, EvalReport]:
    return {
        Task.MABSA: mabsa_score(gold, pred),
        Task.MATE: mate_score(gold, pred),
        Task.MASC: masc_score(gold, pred),
    }
