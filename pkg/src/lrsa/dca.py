"""Dual cross-attention over stacked feature/rationale blocks.

A feature block ``H`` and its rationale block ``H_L`` are stacked into
``Z = [H; H_L]`` and pushed through one single-head attention with shared
projections. Softmax runs over all stacked key positions, so each output row
mixes both blocks. The output is split back at the block boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import DimensionError, Parameter, Tensor, concat, matmul, scaled_dot_attention


@dataclass(frozen=True)
class StackedFeatures:
    Z: Tensor
    l_H: int
    l_HL: int

    def split(self, A: Tensor) -> tuple[Tensor, Tensor]:
        return A[: self.l_H], A[self.l_H :]


@dataclass
class DcaWeights:
    wq: Parameter
    wk: Parameter
    wv: Parameter

    @classmethod
    def init(cls, d: int, rng: np.random.Generator, prefix: str) -> "DcaWeights":
        bound = 1.0 / math.sqrt(d)

        def make(name):
            return Parameter(rng.uniform(-bound, bound, size=(d, d)), f"{prefix}.{name}")

        return cls(make("wq"), make("wk"), make("wv"))

    @classmethod
    def identity(cls, d: int, prefix: str = "dca") -> "DcaWeights":
        return cls(*(Parameter(np.eye(d), f"{prefix}.{n}") for n in ("wq", "wk", "wv")))

    def parameters(self) -> list[Parameter]:
        return [self.wq, self.wk, self.wv]


def stack(H: Tensor | None, H_L: Tensor) -> StackedFeatures:
    if H is None or H.ndim != 2 or H.shape[0] < 1:
        raise DimensionError("feature block must have at least one row")
    if H_L.ndim != 2 or H.shape[1] != H_L.shape[1]:
        raise DimensionError(f"cannot stack {H.shape} over {H_L.shape}")
    return StackedFeatures(concat([H, H_L]), H.shape[0], H_L.shape[0])


def joint_attention(Z: StackedFeatures, w: DcaWeights) -> tuple[Tensor, Tensor]:
    q = matmul(Z.Z, w.wq)
    k = matmul(Z.Z, w.wk)
    v = matmul(Z.Z, w.wv)
    return Z.split(scaled_dot_attention(q, k, v))


def dual_fuse(H_V, H_t, H_Li, H_Lt, weights_image: DcaWeights, weights_text: DcaWeights):
    """Image branch on [H_V; H_Li], text branch on [H_t; H_Lt]; no shared weights."""
    A_V, A_Li = joint_attention(stack(H_V, H_Li), weights_image)
    A_t, A_Lt = joint_attention(stack(H_t, H_Lt), weights_text)
    return A_V, A_t, A_Li, A_Lt


def _top_block(H: Tensor, H_L: Tensor, w: DcaWeights) -> Tensor:
    Z = stack(H, H_L)
    q = matmul(H, w.wq)
    k = matmul(Z.Z, w.wk)
    v = matmul(Z.Z, w.wv)
    return scaled_dot_attention(q, k, v)


def unilateral_fuse(H_V, H_t, H_Li, H_Lt, weights_image: DcaWeights, weights_text: DcaWeights):
    """Ablation: only the feature blocks attend; rationale blocks are returned as-is."""
    return _top_block(H_V, H_Li, weights_image), _top_block(H_t, H_Lt, weights_text), H_Li, H_Lt
