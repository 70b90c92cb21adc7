"""Point-wise spatial attention block.

``S = softmax_rows((X A + a)(X B)^T)`` is an N x N map; the block returns
``gamma * S (X D + d) + X``. ``gamma`` starts at zero so a fresh block is the
identity. The key transform ``B`` carries no bias: it would add a per-row
constant to the logits, which the softmax cancels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

DEFAULT_MAX_POINTS = 4096


class AttentionSizeError(ValueError):
    """Input exceeds the configured point cap of the N x N map."""


@dataclass
class PSAParams:
    A_w: Tensor
    A_b: Tensor
    B_w: Tensor
    D_w: Tensor
    D_b: Tensor
    gamma: Tensor  # shape (1,)
    max_points: int = DEFAULT_MAX_POINTS

    @classmethod
    def create(cls, store, prefix, channels, key_width=None, rng=None, max_points=DEFAULT_MAX_POINTS):
        f1 = key_width or max(1, channels // 2)
        t = {}
        for name, width in (("A", f1), ("B", f1), ("D", channels)):
            t[f"{name}_w"] = store.add(f"{prefix}.{name}_w", ad.glorot(rng, channels, width))
            if name != "B":
                t[f"{name}_b"] = store.add(f"{prefix}.{name}_b", np.zeros(width))
        t["gamma"] = store.add(f"{prefix}.gamma", np.zeros(1))
        return cls(**t, max_points=max_points)

    @classmethod
    def from_store(cls, store, prefix, max_points=DEFAULT_MAX_POINTS):
        names = ("A_w", "A_b", "B_w", "D_w", "D_b", "gamma")
        return cls(*(store[f"{prefix}.{k}"] for k in names), max_points=max_points)

    @property
    def channels(self):
        return self.A_w.shape[0]


def _check(x: Tensor, params: PSAParams):
    n, c = x.shape
    if n < 1:
        raise ValueError("attention needs at least one point")
    if c != params.channels:
        raise ValueError(f"input width {c} does not match block width {params.channels}")
    if params.D_w.shape[1] != c:
        raise ValueError("value transform must preserve width for the residual sum")
    if n > params.max_points:
        raise AttentionSizeError(f"{n} points exceeds attention cap of {params.max_points}")


def attention_map(features, params: PSAParams) -> Tensor:
    x = ad.as_tensor(features)
    _check(x, params)
    a = ad.mlp_layer(x, params.A_w, params.A_b, "none")
    b = ad.matmul(x, params.B_w)
    return ad.row_softmax(ad.matmul_nt(a, b))


def psa_forward(features, params: PSAParams, return_map=False):
    x = ad.as_tensor(features)
    s = attention_map(x, params)
    d = ad.mlp_layer(x, params.D_w, params.D_b, "none")
    out = ad.add(ad.mul(params.gamma, ad.matmul(s, d)), x)
    return (out, s) if return_map else out
