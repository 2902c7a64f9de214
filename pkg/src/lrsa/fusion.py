"""Residual fusion, decoder memory, pointer/class prediction, loss and decoding."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .codec import CodecError, eos_index
from .numerics import (
    DimensionError,
    Tensor,
    add,
    concat,
    cross_entropy_rows,
    matmul,
    scale,
    softmax,
    transpose,
)

SEGMENTS = ("image", "text", "image_rationale", "text_rationale")

# decode(memory, y_prev_embeddings) -> hidden states, one row per target step
Decoder = Callable[[Tensor, Tensor], Tensor]
# embed_target(prefix indices) -> decoder input rows; row 0 is <bos>
TargetEmbedder = Callable[[Sequence[int]], Tensor]


@dataclass(frozen=True)
class FusedMemory:
    H: Tensor
    offsets: dict[str, tuple[int, int]]

    @property
    def rows(self) -> int:
        return self.H.shape[0]

    def segment(self, name: str) -> Tensor:
        s, e = self.offsets[name]
        return self.H[s:e]


def residual_combine(A_V, A_t, A_Li, A_Lt, H_V, H_t, H_Li, H_Lt):
    pairs = ((A_V, H_V), (A_t, H_t), (A_Li, H_Li), (A_Lt, H_Lt))
    for a, h in pairs:
        if a.shape != h.shape:
            raise DimensionError(f"residual shape mismatch {a.shape} vs {h.shape}")
    return tuple(add(a, h) for a, h in pairs)


def build_memory(H_V, H_t, H_Li=None, H_Lt=None) -> FusedMemory:
    """Row-concatenate segments in image/text/rationale order.

    Omitting both rationale blocks gives the memory used without concatenation.
    """
    parts = [("image", H_V), ("text", H_t)]
    if (H_Li is None) != (H_Lt is None):
        raise ValueError("pass both rationale blocks or neither")
    if H_Li is not None:
        parts += [("image_rationale", H_Li), ("text_rationale", H_Lt)]
    offsets, pos = {}, 0
    for name, block in parts:
        offsets[name] = (pos, pos + block.shape[0])
        pos += block.shape[0]
    return FusedMemory(concat([b for _, b in parts]), offsets)


def candidate_matrix(H_t_content: Tensor, E_text: Tensor, S_d: Tensor) -> Tensor:
    """[(H̄_t + E)/2 ; S^d]: text pointers first, then sentiment and <eos> rows."""
    if H_t_content.shape != E_text.shape:
        raise DimensionError(f"text states {H_t_content.shape} vs embeddings {E_text.shape}")
    if S_d.ndim != 2 or S_d.shape[1] != E_text.shape[1]:
        raise DimensionError("sentiment embedding width mismatch")
    return concat([scale(add(H_t_content, E_text), 0.5), S_d])


def step_logits(C: Tensor, H_D: Tensor) -> Tensor:
    """Candidate scores per decoder step: rows are steps, columns candidates."""
    return matmul(H_D, transpose(C))


def step_distribution(C: Tensor, h_t: Tensor) -> np.ndarray:
    if h_t.ndim == 1:
        h_t = Tensor(h_t.data[None, :])
    return softmax(step_logits(C, h_t)).data[0]


def sequence_loss(
    decode: Decoder,
    memory: Tensor,
    gold: Sequence[int],
    C: Tensor,
    embed_target: TargetEmbedder,
) -> Tensor:
    """Teacher-forced mean cross-entropy over the gold index sequence."""
    gold = [int(g) for g in gold]
    n_cand = C.shape[0]
    if not gold or gold[-1] != n_cand - 1:
        raise CodecError("gold sequence must end with <eos>")
    if any(not 0 <= g < n_cand for g in gold):
        raise CodecError("gold index outside the candidate space")
    H_D = decode(memory, embed_target(gold[:-1]))
    return cross_entropy_rows(step_logits(C, H_D), gold)


def generate(
    decode: Decoder,
    memory: Tensor,
    C: Tensor,
    embed_target: TargetEmbedder,
    max_len: int,
) -> list[int]:
    """Greedy decoding; stops after emitting <eos> or ``max_len`` symbols."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    eos = eos_index(C.shape[0] - 4)
    out: list[int] = []
    while len(out) < max_len:
        H_D = decode(memory, embed_target(out))
        scores = step_logits(C, H_D[H_D.shape[0] - 1 :]).data[0]
        nxt = int(np.argmax(scores))
        out.append(nxt)
        if nxt == eos:
            break
    return out
