"""Training loop, evaluation and ablation runs."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .codec import AspectTriple
from .data import MultimodalExample, read_corpus
from .metrics import EvalReport, Task, score_all
from .model import ABLATIONS, LRSAModel, ModelConfig, Vocabulary, load_checkpoint, save_checkpoint
from .numerics import Adam, NumericsError, add_scalars, backward, scale

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class RunConfig:
    # model
    d_model: int = 64
    enc_layers: int = 2
    dec_layers: int = 2
    heads: int = 4
    ffn_dim: int = 0
    ablation: str = "full"
    # optimisation
    lr: float = 7e-5
    batch_size: int = 16
    epochs: int = 35
    seed: int = 0
    eval_every: int = 1
    select: str = "dev"  # "dev": keep best dev MABSA F1; "last": keep final weights
    target_train_f1: float = 0.0  # >0 stops once train MABSA F1 reaches it
    # rationales
    prompt_kind: str = "task_hinted"
    length_multiplier: float = 2.0
    # paths
    corpus: str = "corpus"
    cache: str = "rationales.jsonl"
    checkpoint: str = "model.ckpt"
    log: str = ""
    reports: str = "reports"

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}")
        if self.select not in ("dev", "last"):
            raise ValueError("select must be 'dev' or 'last'")
        if self.lr <= 0 or self.batch_size <= 0 or self.epochs < 0 or self.eval_every <= 0:
            raise ValueError("lr, batch_size, eval_every must be positive; epochs non-negative")
        if self.length_multiplier <= 0:
            raise ValueError("length_multiplier must be positive")

    def model_config(self, d_visual: int) -> ModelConfig:
        return ModelConfig(
            d_model=self.d_model,
            d_visual=d_visual,
            enc_layers=self.enc_layers,
            dec_layers=self.dec_layers,
            heads=self.heads,
            ffn_dim=self.ffn_dim,
            seed=self.seed,
            ablation=self.ablation,
        )

    @classmethod
    def field_types(cls) -> dict[str, type]:
        return {f.name: type(f.default) for f in fields(cls)}


@dataclass
class TrainResult:
    model: LRSAModel
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0


def _triples(model: LRSAModel, examples: Sequence[MultimodalExample], workers: int = 1):
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            preds = list(pool.map(model.predict, examples))
    else:
        preds = [model.predict(ex) for ex in examples]
    return {ex.id: p for ex, p in zip(examples, preds)}


def evaluate(model: LRSAModel | None, examples: Sequence[MultimodalExample], oracle: bool = False,
             workers: int = 1) -> dict[Task, EvalReport]:
    """Greedy generation, lenient decoding, then MABSA/MATE/MASC scoring.

    ``oracle`` bypasses the model and scores the gold triples against
    themselves, which checks the evaluation wiring.
    """
    gold: dict[str, list[AspectTriple]] = {ex.id: list(ex.gold) for ex in examples}
    pred = dict(gold) if oracle else _triples(model, examples, workers)
    reports = score_all(gold, pred)
    if reports[Task.MATE].f1 + 1e-12 < reports[Task.MABSA].f1:
        raise AssertionError("MATE F1 below MABSA F1; span matching is broken")
    return reports


def reports_text(reports: dict[Task, EvalReport]) -> str:
    return "\n".join(reports[t].to_text() for t in (Task.MABSA, Task.MATE, Task.MASC))


def write_reports(reports: dict[Task, EvalReport], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(reports_text(reports), encoding="utf-8")


def _f1(model: LRSAModel, examples) -> float:
    return evaluate(model, examples)[Task.MABSA].f1 if examples else 0.0


def train(config: RunConfig, corpus: dict[str, list[MultimodalExample]] | None = None,
          save: bool = True) -> TrainResult:
    if corpus is None:
        corpus = read_corpus(config.corpus)
    train_set, dev_set = corpus.get("train", []), corpus.get("dev", [])
    if not train_set:
        raise TrainingError("training split is empty")
    d_visual = train_set[0].image_features.shape[1]
    model = LRSAModel(config.model_config(d_visual), Vocabulary.build(train_set))
    result = TrainResult(model)

    opt = Adam(model.parameters(), lr=config.lr)
    rng = np.random.default_rng(config.seed)
    best_f1, best_state = -1.0, model.state_dict()
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_set))
        total = 0.0
        for i in range(0, len(order), config.batch_size):
            batch = [train_set[j] for j in order[i : i + config.batch_size]]
            try:
                loss = scale(add_scalars([model.loss(ex) for ex in batch]), 1.0 / len(batch))
            except NumericsError as exc:
                raise TrainingError(f"epoch {epoch}: non-finite forward pass ({exc})") from exc
            backward(loss)
            opt.step()
            total += loss.item() * len(batch)

        entry = {"epoch": epoch, "loss": total / len(train_set)}
        due = epoch % config.eval_every == 0 or epoch == config.epochs
        if due and dev_set:
            entry["dev_f1"] = _f1(model, dev_set)
        if due and config.target_train_f1 > 0:
            entry["train_f1"] = _f1(model, train_set)
        result.history.append(entry)
        log.info("epoch %d %s", epoch, entry)

        if "dev_f1" in entry and entry["dev_f1"] > best_f1:
            best_f1, best_state, result.best_epoch = entry["dev_f1"], model.state_dict(), epoch
        if entry.get("train_f1", 0.0) >= config.target_train_f1 > 0:
            break

    if config.select == "dev" and dev_set and config.epochs > 0:
        model.load_state_dict(best_state)
    else:
        result.best_epoch = len(result.history)
    if save:
        save_checkpoint(model, config.checkpoint)
        if config.log:
            Path(config.log).parent.mkdir(parents=True, exist_ok=True)
            with open(config.log, "w", encoding="utf-8") as f:
                for entry in result.history:
                    f.write(json.dumps(entry, sort_keys=True) + "\n")
    return result


def evaluate_checkpoint(path: str | Path, examples: Sequence[MultimodalExample],
                        expected: ModelConfig | None = None, workers: int = 1) -> dict[Task, EvalReport]:
    return evaluate(load_checkpoint(path, expected), examples, workers=workers)


@dataclass(frozen=True)
class AblationRow:
    mode: str
    num_parameters: int
    mabsa: EvalReport
    mate: EvalReport
    masc: EvalReport


def ablate(config: RunConfig, corpus: dict[str, list[MultimodalExample]] | None = None,
           split: str = "test") -> list[AblationRow]:
    """Train and evaluate every ablation mode under identical settings."""
    if corpus is None:
        corpus = read_corpus(config.corpus)
    rows = []
    for mode in ABLATIONS:
        cfg = replace(config, ablation=mode, checkpoint=str(Path(config.reports) / f"{mode}.ckpt"), log="")
        model = train(cfg, corpus, save=False).model
        reports = evaluate(model, corpus.get(split, []))
        rows.append(AblationRow(mode, model.num_parameters(), reports[Task.MABSA],
                                reports[Task.MATE], reports[Task.MASC]))
    return rows


def ablation_table(rows: Sequence[AblationRow]) -> str:
    head = f"{'mode':<10} {'params':>8} {'P':>7} {'R':>7} {'F1':>7} {'MATE-F1':>8} {'MASC-Acc':>9}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(
            f"{r.mode:<10} {r.num_parameters:>8d} {r.mabsa.precision:>7.4f} {r.mabsa.recall:>7.4f} "
            f"{r.mabsa.f1:>7.4f} {r.mate.f1:>8.4f} {r.masc.accuracy:>9.4f}"
        )
    return "\n".join(lines) + "\n"
