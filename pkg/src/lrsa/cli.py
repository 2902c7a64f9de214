"""Command line entry point: ``lrsa <subcommand> [options]``.

``--config FILE`` reads ``key = value`` lines whose keys are option names
(``batch_size`` or ``batch-size``). Flags given on the command line win.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import harness, rationale, synth
from .data import read_corpus, write_corpus
from .model import ABLATIONS, load_checkpoint
from .rationale import PromptKind


class UsageError(Exception):
    pass


def read_config_file(path: str) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _add_run_options(p: argparse.ArgumentParser, with_paths: bool = True) -> None:
    g = p.add_argument_group("model and optimisation")
    g.add_argument("--d-model", type=int)
    g.add_argument("--enc-layers", type=int)
    g.add_argument("--dec-layers", type=int)
    g.add_argument("--heads", type=int)
    g.add_argument("--ffn-dim", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--epochs", type=int)
    g.add_argument("--eval-every", type=int)
    g.add_argument("--select", choices=("dev", "last"))
    g.add_argument("--target-train-f1", type=float)
    if with_paths:
        g.add_argument("--ablation", choices=ABLATIONS)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file; flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="lrsa", description="Rationale-augmented multimodal ABSA")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", parents=[common], help="write a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--num-train", type=int)
    p.add_argument("--num-dev", type=int)
    p.add_argument("--num-test", type=int)
    p.add_argument("--image-slots", type=int)
    p.add_argument("--d-visual", type=int)
    p.add_argument("--max-aspects", type=int)

    p = sub.add_parser("prepare", parents=[common], help="fetch LLM rationales and attach them")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cache")
    p.add_argument("--prompt-kind", choices=[k.value for k in PromptKind])
    p.add_argument("--length-multiplier", type=float)
    p.add_argument("--word-limit", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--mock", action="store_true", help="use the offline mock client")

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--corpus")
    p.add_argument("--checkpoint")
    p.add_argument("--log")
    _add_run_options(p)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=("train", "dev", "test"))
    p.add_argument("--report")
    p.add_argument("--oracle", action="store_true", help="score gold against itself")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("ablate", parents=[common], help="train and compare all ablation modes")
    p.add_argument("--corpus")
    p.add_argument("--reports")
    p.add_argument("--split", choices=("train", "dev", "test"))
    _add_run_options(p, with_paths=False)
    return parser


def _merge(args: argparse.Namespace, parser: argparse.ArgumentParser) -> dict:
    """Command-line values over config-file values; None means 'not given'."""
    values = {k: v for k, v in vars(args).items() if v is not None and v is not False}
    if args.config:
        known = set(vars(args))
        for key, raw in read_config_file(args.config).items():
            if key not in known:
                raise UsageError(f"unknown config key {key!r} for {args.command}")
            if key in values:
                continue
            values[key] = _coerce(parser, args.command, key, raw)
    return values


def _coerce(parser, command, key, raw):
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices[command]
    for action in sub._actions:
        if action.dest == key:
            if isinstance(action, argparse._StoreTrueAction):
                return raw.lower() in ("1", "true", "yes", "on")
            value = action.type(raw) if action.type else raw
            if action.choices and value not in action.choices:
                raise UsageError(f"config {key}={raw!r} not in {list(action.choices)}")
            return value
    return raw


def _run_config(values: dict) -> harness.RunConfig:
    names = {f.name for f in fields(harness.RunConfig)}
    return harness.RunConfig(**{k: v for k, v in values.items() if k in names})


def cmd_synth_gen(v: dict) -> None:
    keys = {"num_train", "num_dev", "num_test", "image_slots", "d_visual", "max_aspects", "seed"}
    spec = synth.SynthSpec(**{k: v[k] for k in keys if k in v})
    train, dev, test = synth.generate_corpus(spec)
    write_corpus(v["out"], {"train": train, "dev": dev, "test": test})
    print(f"wrote {len(train)}/{len(dev)}/{len(test)} examples to {v['out']}")


def cmd_prepare(v: dict) -> None:
    corpus = read_corpus(v["corpus"])
    client = rationale.MockChatClient() if v.get("mock") else rationale.HttpChatClient.from_env()
    template = rationale.PromptTemplate(v.get("prompt_kind", "task_hinted"), v.get("word_limit", 140))
    cache = rationale.RationaleCache(v.get("cache", str(Path(v["out"]) / "rationales.jsonl")))
    policy = rationale.LengthPolicy.from_corpus(corpus["train"], v.get("length_multiplier", 2.0))
    out = {}
    for split, examples in corpus.items():
        records = rationale.generate(examples, client, template, cache, max_in_flight=v.get("workers", 4))
        out[split] = rationale.attach(examples, records, policy)
    write_corpus(v["out"], out)
    kept = sum(map(len, out.values()))
    print(f"attached rationales to {kept}/{sum(map(len, corpus.values()))} examples (cap {policy.cap} tokens)")


def cmd_train(v: dict) -> None:
    cfg = _run_config(v)
    result = harness.train(cfg)
    last = result.history[-1] if result.history else {}
    print(f"saved {cfg.checkpoint} (epochs run {len(result.history)}, kept epoch {result.best_epoch}) {last}")


def cmd_eval(v: dict) -> None:
    split = v.get("split", "test")
    examples = read_corpus(v["corpus"])[split]
    if v.get("oracle"):
        reports = harness.evaluate(None, examples, oracle=True)
    else:
        reports = harness.evaluate(load_checkpoint(v["checkpoint"]), examples, workers=v.get("workers", 1))
    text = harness.reports_text(reports)
    if v.get("report"):
        harness.write_reports(reports, v["report"])
    print(text, end="")


def cmd_ablate(v: dict) -> None:
    cfg = _run_config(v)
    rows = harness.ablate(cfg, split=v.get("split", "test"))
    table = harness.ablation_table(rows)
    out = Path(cfg.reports)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.txt").write_text(table, encoding="utf-8")
    print(table, end="")


COMMANDS = {
    "synth-gen": cmd_synth_gen,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        values = _merge(args, parser)
    except (UsageError, OSError, ValueError) as exc:
        print(f"lrsa: usage error: {exc}", file=sys.stderr)
        return 2
    try:
        COMMANDS[args.command](values)
    except Exception as exc:  # one-line diagnostic, no traceback
        print(f"lrsa {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
