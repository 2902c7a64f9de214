"""Multimodal encoder/decoder with rationale segments and pointer prediction.

Encoder input for one example (markers counted inside their segment)::

    <img> V... </img> | <bos> T... <eos> | <bor> Li... <eor> | <bor> Lt... <eor>
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import dca, fusion
from .codec import AspectTriple, NUM_SENTIMENTS, decode_indices, encode_triples
from .data import MultimodalExample
from .numerics import (
    ContractError,
    Parameter,
    Tensor,
    add,
    concat,
    embedding,
    gelu,
    layer_norm,
    matmul,
    no_grad,
    permute,
    reshape,
    scaled_dot_attention,
)

CHECKPOINT_VERSION = 1
ABLATIONS = ("full", "no_dual", "no_cross", "no_concat")

PAD, UNK = "<pad>", "<unk>"
IMG, IMG_END = "<img>", "</img>"
BOS, EOS = "<bos>", "<eos>"
BOR, EOR = "<bor>", "<eor>"
SPECIALS = (PAD, UNK, IMG, IMG_END, BOS, EOS, BOR, EOR)


class LengthError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class Vocabulary:
    def __init__(self, tokens: Iterable[str] = ()):
        self.tokens: list[str] = list(SPECIALS)
        self.index: dict[str, int] = {t: i for i, t in enumerate(self.tokens)}
        for t in tokens:
            if t not in self.index:
                self.index[t] = len(self.tokens)
                self.tokens.append(t)

    @classmethod
    def build(cls, examples: Iterable[MultimodalExample]) -> "Vocabulary":
        seen: set[str] = set()
        for ex in examples:
            seen.update(ex.text_tokens)
            seen.update(ex.image_rationale_tokens)
            seen.update(ex.text_rationale_tokens)
        return cls(sorted(seen - set(SPECIALS)))

    def __len__(self) -> int:
        return len(self.tokens)

    def __getitem__(self, token: str) -> int:
        return self.index.get(token, self.index[UNK])

    def encode(self, tokens: Sequence[str]) -> list[int]:
        unk = self.index[UNK]
        return [self.index.get(t, unk) for t in tokens]


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    d_visual: int = 16
    enc_layers: int = 2
    dec_layers: int = 2
    heads: int = 4
    ffn_dim: int = 0  # 0 means 4 * d_model
    max_image_slots: int = 16
    max_text_len: int = 64
    max_rationale_len: int = 256
    max_target_len: int = 64
    num_sentiments: int = NUM_SENTIMENTS
    seed: int = 0
    ablation: str = "full"

    def __post_init__(self):
        for name in ("d_model", "d_visual", "heads", "max_image_slots", "max_text_len",
                     "max_rationale_len", "max_target_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.enc_layers < 0 or self.dec_layers < 0 or self.ffn_dim < 0:
            raise ValueError("layer counts and ffn_dim must be non-negative")
        if self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")
        if self.num_sentiments != NUM_SENTIMENTS:
            raise ValueError("exactly three sentiment classes are supported")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}")

    @property
    def ffn(self) -> int:
        return self.ffn_dim or 4 * self.d_model


@dataclass(frozen=True)
class SegmentLayout:
    image: tuple[int, int]
    text: tuple[int, int]
    image_rationale: tuple[int, int]
    text_rationale: tuple[int, int]

    @property
    def total(self) -> int:
        return self.text_rationale[1]

    @property
    def text_content(self) -> tuple[int, int]:
        return self.text[0] + 1, self.text[1] - 1

    def segments(self) -> list[tuple[int, int]]:
        return [self.image, self.text, self.image_rationale, self.text_rationale]

    @classmethod
    def from_lengths(cls, l_i: int, l_t: int, l_li: int, l_lt: int) -> "SegmentLayout":
        spans, pos = [], 0
        for n in (l_i, l_t, l_li, l_lt):
            spans.append((pos, pos + n + 2))
            pos += n + 2
        return cls(*spans)


@dataclass
class EncoderOutput:
    H_M: Tensor
    layout: SegmentLayout
    E_text: Tensor


@dataclass
class Forward:
    """Everything the decoder side needs for one example."""

    memory: fusion.FusedMemory
    C: Tensor
    E_text: Tensor
    l_t: int


@lru_cache(maxsize=32)
def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    pe = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    pe.setflags(write=False)
    return pe


# -------------------------------------------------------------------- layers


class _Builder:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.params: dict[str, Parameter] = {}

    def add(self, name: str, value: np.ndarray) -> Parameter:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name}")
        p = Parameter(value, name)
        self.params[name] = p
        return p

    def weight(self, name: str, fan_in: int, fan_out: int) -> Parameter:
        return self.add(name, self.rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, fan_out)))

    def zeros(self, name: str, n: int) -> Parameter:
        return self.add(name, np.zeros(n))

    def ones(self, name: str, n: int) -> Parameter:
        return self.add(name, np.ones(n))


class LayerNorm:
    def __init__(self, b: _Builder, name: str, d: int):
        self.gain = b.ones(f"{name}.gain", d)
        self.bias = b.zeros(f"{name}.bias", d)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias)


class Linear:
    def __init__(self, b: _Builder, name: str, d_in: int, d_out: int, bias: bool = True):
        self.w = b.weight(f"{name}.weight", d_in, d_out)
        self.b = b.zeros(f"{name}.bias", d_out) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = matmul(x, self.w)
        return add(y, self.b) if self.b is not None else y


class MultiHeadAttention:
    def __init__(self, b: _Builder, name: str, d: int, heads: int):
        self.heads = heads
        self.q = Linear(b, f"{name}.q", d, d)
        # a key bias shifts every score in a row equally, which softmax ignores
        self.k = Linear(b, f"{name}.k", d, d, bias=False)
        self.v = Linear(b, f"{name}.v", d, d)
        self.o = Linear(b, f"{name}.o", d, d)

    def _split(self, x: Tensor) -> Tensor:
        n, d = x.shape
        return permute(reshape(x, (n, self.heads, d // self.heads)), (1, 0, 2))

    def __call__(self, x: Tensor, context: Tensor, mask: np.ndarray | None = None) -> Tensor:
        n, d = x.shape
        att = scaled_dot_attention(self._split(self.q(x)), self._split(self.k(context)),
                                   self._split(self.v(context)), mask)
        return self.o(reshape(permute(att, (1, 0, 2)), (n, d)))


class FeedForward:
    def __init__(self, b: _Builder, name: str, d: int, hidden: int):
        self.up = Linear(b, f"{name}.up", d, hidden)
        self.down = Linear(b, f"{name}.down", hidden, d)

    def __call__(self, x: Tensor) -> Tensor:
        return self.down(gelu(self.up(x)))


class EncoderLayer:
    def __init__(self, b: _Builder, name: str, cfg: ModelConfig):
        self.ln1 = LayerNorm(b, f"{name}.ln1", cfg.d_model)
        self.attn = MultiHeadAttention(b, f"{name}.attn", cfg.d_model, cfg.heads)
        self.ln2 = LayerNorm(b, f"{name}.ln2", cfg.d_model)
        self.ffn = FeedForward(b, f"{name}.ffn", cfg.d_model, cfg.ffn)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.ln1(x)
        x = add(x, self.attn(h, h))
        return add(x, self.ffn(self.ln2(x)))


class DecoderLayer:
    def __init__(self, b: _Builder, name: str, cfg: ModelConfig):
        self.ln1 = LayerNorm(b, f"{name}.ln1", cfg.d_model)
        self.self_attn = MultiHeadAttention(b, f"{name}.self_attn", cfg.d_model, cfg.heads)
        self.ln2 = LayerNorm(b, f"{name}.ln2", cfg.d_model)
        self.cross_attn = MultiHeadAttention(b, f"{name}.cross_attn", cfg.d_model, cfg.heads)
        self.ln3 = LayerNorm(b, f"{name}.ln3", cfg.d_model)
        self.ffn = FeedForward(b, f"{name}.ffn", cfg.d_model, cfg.ffn)

    def __call__(self, y: Tensor, memory: Tensor, causal: np.ndarray) -> Tensor:
        h = self.ln1(y)
        y = add(y, self.self_attn(h, h, causal))
        y = add(y, self.cross_attn(self.ln2(y), memory))
        return add(y, self.ffn(self.ln3(y)))


@lru_cache(maxsize=128)
def _causal_mask(t: int) -> np.ndarray:
    m = np.triu(np.ones((t, t), dtype=bool), k=1)
    m.setflags(write=False)
    return m


# --------------------------------------------------------------------- model


class LRSAModel:
    """Rationale-augmented encoder/decoder for aspect-sentiment generation."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary):
        self.config = config
        self.vocab = vocab
        d = config.d_model
        b = _Builder(np.random.default_rng(config.seed))
        self.token_embedding = b.add("embed.token", b.rng.normal(0.0, 1.0, size=(len(vocab), d)))
        self.visual = Linear(b, "embed.visual", config.d_visual, d)
        self.encoder = [EncoderLayer(b, f"enc.{i}", config) for i in range(config.enc_layers)]
        self.enc_norm = LayerNorm(b, "enc.ln_f", d) if config.enc_layers else None
        self.dca_image = dca.DcaWeights.init(d, b.rng, "dca.image")
        self.dca_text = dca.DcaWeights.init(d, b.rng, "dca.text")
        for p in self.dca_image.parameters() + self.dca_text.parameters():
            b.params[p.name] = p
        self.decoder = [DecoderLayer(b, f"dec.{i}", config) for i in range(config.dec_layers)]
        self.dec_norm = LayerNorm(b, "dec.ln_f", d) if config.dec_layers else None
        # rows: positive, neutral, negative, <eos>
        self.sentiment_embedding = b.add("head.sentiment", b.rng.normal(0.0, 1.0, size=(NUM_SENTIMENTS + 1, d)))
        self._params = b.params

    # ---------------------------------------------------------- parameters

    def parameters(self) -> list[Parameter]:
        if self.config.ablation == "no_cross":
            return [p for n, p in self._params.items() if not n.startswith("dca.")]
        return list(self._params.values())

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = self.named_parameters()
        if set(state) != set(own):
            raise CheckpointError(f"parameter sets differ: {sorted(set(state) ^ set(own))[:5]}")
        for name, value in state.items():
            if own[name].shape != value.shape:
                raise CheckpointError(f"{name}: shape {value.shape} != {own[name].shape}")
        for name, value in state.items():
            own[name].data = np.array(value, dtype=np.float64)

    # ------------------------------------------------------------- encoder

    def assemble_input(self, example: MultimodalExample) -> tuple[Tensor, SegmentLayout, Tensor]:
        cfg = self.config
        feats = example.image_features
        l_i, l_t = feats.shape[0], len(example.text_tokens)
        l_li, l_lt = len(example.image_rationale_tokens), len(example.text_rationale_tokens)
        if l_li == 0 or l_lt == 0:
            raise ValueError(f"{example.id}: rationale segments must be non-empty")
        if feats.shape[1] != cfg.d_visual:
            raise ValueError(f"{example.id}: visual width {feats.shape[1]} != {cfg.d_visual}")
        if l_i > cfg.max_image_slots:
            raise LengthError(f"{example.id}: {l_i} image slots > {cfg.max_image_slots}")
        if l_t > cfg.max_text_len:
            raise LengthError(f"{example.id}: text length {l_t} > {cfg.max_text_len}")
        if max(l_li, l_lt) > cfg.max_rationale_len:
            raise LengthError(f"{example.id}: rationale longer than {cfg.max_rationale_len}")

        v = self.vocab
        ids = (
            [v[IMG_END], v[BOS]] + v.encode(example.text_tokens) + [v[EOS], v[BOR]]
            + v.encode(example.image_rationale_tokens) + [v[EOR], v[BOR]]
            + v.encode(example.text_rationale_tokens) + [v[EOR]]
        )
        tokens = embedding(self.token_embedding, ids)
        E_text = tokens[2 : 2 + l_t]
        X = concat([embedding(self.token_embedding, [v[IMG]]), self.visual(Tensor(feats)), tokens])
        layout = SegmentLayout.from_lengths(l_i, l_t, l_li, l_lt)
        X = add(X, Tensor(sinusoidal_positions(layout.total, cfg.d_model)))
        return X, layout, E_text

    def encode(self, X: Tensor, layout: SegmentLayout, E_text: Tensor | None = None) -> EncoderOutput:
        h = X
        for layer in self.encoder:
            h = layer(h)
        if self.enc_norm is not None:
            h = self.enc_norm(h)
        return EncoderOutput(h, layout, E_text)

    @staticmethod
    def slice_segments(out: EncoderOutput) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        return tuple(out.H_M[s:e] for s, e in out.layout.segments())

    # -------------------------------------------------------------- fusion

    def fuse(self, out: EncoderOutput) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        H_V, H_t, H_Li, H_Lt = self.slice_segments(out)
        mode = self.config.ablation
        if mode == "no_cross":
            return H_V, H_t, H_Li, H_Lt
        if mode == "no_dual":
            A_V, A_t, _, _ = dca.unilateral_fuse(H_V, H_t, H_Li, H_Lt, self.dca_image, self.dca_text)
            return add(A_V, H_V), add(A_t, H_t), H_Li, H_Lt
        A = dca.dual_fuse(H_V, H_t, H_Li, H_Lt, self.dca_image, self.dca_text)
        return fusion.residual_combine(*A, H_V, H_t, H_Li, H_Lt)

    def build_memory(self, fused) -> fusion.FusedMemory:
        if self.config.ablation == "no_concat":
            return fusion.build_memory(fused[0], fused[1])
        return fusion.build_memory(*fused)

    # ------------------------------------------------------------- decoder

    def decode(self, memory: Tensor, y_prev: Tensor) -> Tensor:
        if y_prev is None or y_prev.shape[0] < 1:
            raise ContractError("decoder needs at least the <bos> row")
        causal = _causal_mask(y_prev.shape[0])
        h = y_prev
        for layer in self.decoder:
            h = layer(h, memory, causal)
        if self.dec_norm is not None:
            h = self.dec_norm(h)
        return h

    def target_embedder(self, E_text: Tensor):
        """Embeds [<bos>] + prefix; pointers map to text tokens, classes to S^d rows."""
        table = concat([embedding(self.token_embedding, [self.vocab[BOS]]), E_text, self.sentiment_embedding])
        d, limit = self.config.d_model, self.config.max_target_len

        def embed(prefix: Sequence[int]) -> Tensor:
            n = len(prefix) + 1
            if n > limit:
                raise LengthError(f"target prefix of {n} rows exceeds {limit}")
            rows = embedding(table, [0] + [int(i) + 1 for i in prefix])
            return add(rows, Tensor(sinusoidal_positions(n, d)))

        return embed

    # ------------------------------------------------------------- end to end

    def forward(self, example: MultimodalExample) -> Forward:
        X, layout, E_text = self.assemble_input(example)
        out = self.encode(X, layout, E_text)
        fused = self.fuse(out)
        memory = self.build_memory(fused)
        H_t = fused[1]
        content = H_t[1 : H_t.shape[0] - 1]
        C = fusion.candidate_matrix(content, E_text, self.sentiment_embedding)
        return Forward(memory, C, E_text, len(example.text_tokens))

    def target(self, example: MultimodalExample) -> list[int]:
        return list(encode_triples(example.gold, len(example.text_tokens)).indices)

    def loss(self, example: MultimodalExample) -> Tensor:
        f = self.forward(example)
        return fusion.sequence_loss(self.decode, f.memory.H, self.target(example), f.C,
                                    self.target_embedder(f.E_text))

    def max_decode_len(self, l_t: int) -> int:
        return min(3 * l_t + 1, self.config.max_target_len - 1)

    def generate(self, example: MultimodalExample, max_len: int | None = None) -> list[int]:
        with no_grad():
            f = self.forward(example)
            n = max_len if max_len is not None else self.max_decode_len(f.l_t)
            return fusion.generate(self.decode, f.memory.H, f.C, self.target_embedder(f.E_text), n)

    def predict(self, example: MultimodalExample) -> list[AspectTriple]:
        triples, _ = decode_indices(self.generate(example), len(example.text_tokens))
        return triples


def apply_ablation(mode: str, model: LRSAModel) -> LRSAModel:
    """A view of ``model`` running in ``mode``; parameters are shared, not copied."""
    if mode not in ABLATIONS:
        raise ValueError(f"unknown ablation {mode!r}")
    variant = copy.copy(model)
    variant.config = replace(model.config, ablation=mode)
    return variant


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(model: LRSAModel, path: str | Path) -> None:
    meta = {
        "format": "lrsa-checkpoint",
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "vocab": model.vocab.tokens[len(SPECIALS):],
    }
    arrays = {f"param:{k}": v for k, v in model.state_dict().items()}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        np.savez(f, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(path: str | Path, expected: ModelConfig | None = None) -> LRSAModel:
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["__meta__"]))
            state = {k[len("param:"):]: z[k] for k in z.files if k.startswith("param:")}
    except (OSError, KeyError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if meta.get("format") != "lrsa-checkpoint" or meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format in {path}")
    config = ModelConfig(**meta["config"])
    if expected is not None and expected != config:
        diff = {k for k, v in asdict(expected).items() if asdict(config)[k] != v}
        raise CheckpointError(f"checkpoint config mismatch on {sorted(diff)}")
    model = LRSAModel(config, Vocabulary(meta["vocab"]))
    model.load_state_dict(state)
    return model
