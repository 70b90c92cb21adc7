"""Local attention-edge convolution.

For a center ``i`` with neighbor slots ``j_1..j_K``::

    e_ik   = a . leaky_relu(W (h_jk - h_i))        # edge coefficients
    alpha  = softmax_k(e_ik)                        # per-row normalization
    p_i'   = sum_k alpha_ik W h_jk                  # attention-weighted sum
    out_i  = relu(p_i' T + b)                       # transform MLP

``W`` is shared between the attention input and the aggregation. Padded
slots (the center's own index) are ordinary edges.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LEAKY_SLOPE = 0.2


@dataclass
class LAEConvParams:
    W: Tensor  # c_in x c_out lift
    a: Tensor  # c_out attention vector
    T: Tensor  # c_out x c_out transform
    b: Tensor  # c_out

    @classmethod
    def create(cls, store: ad.ParameterStore, prefix: str, c_in: int, c_out: int, rng):
        return cls(
            store.add(f"{prefix}.W", ad.glorot(rng, c_in, c_out)),
            store.add(f"{prefix}.a", ad.glorot(rng, c_out, 1, (c_out,))),
            store.add(f"{prefix}.T", ad.glorot(rng, c_out, c_out)),
            store.add(f"{prefix}.b", np.zeros(c_out)),
        )

    @classmethod
    def from_store(cls, store, prefix):
        return cls(*(store[f"{prefix}.{k}"] for k in ("W", "a", "T", "b")))

    @property
    def c_in(self):
        return self.W.shape[0]

    @property
    def c_out(self):
        return self.T.shape[1]


def _graph_arrays(graph, centers, n_src):
    nbr = np.asarray(getattr(graph, "indices", graph), dtype=np.int64)
    if centers is None:
        if nbr.shape[0] != n_src:
            raise ValueError("centers must be given when the graph does not cover every source point")
        centers = np.arange(n_src)
    centers = np.asarray(centers, dtype=np.int64)
    if centers.shape != (nbr.shape[0],):
        raise ValueError(f"{len(centers)} centers for a graph with {nbr.shape[0]} rows")
    if nbr.size and (nbr.min() < 0 or nbr.max() >= n_src):
        raise ValueError("graph index out of range for features")
    return nbr, centers


def edge_offsets(features, graph, centers=None) -> Tensor:
    """``h_j - h_i`` for every slot: (centers, K, c_in)."""
    h = ad.as_tensor(features)
    nbr, centers = _graph_arrays(graph, centers, h.shape[0])
    return ad.sub(ad.gather_rows(h, nbr), ad.gather_rows(h, centers[:, None]))


def edge_coefficients(features, graph, W, a, centers=None) -> Tensor:
    """Raw attention logits ``e`` of shape (centers, K)."""
    W, a = ad.as_tensor(W), ad.as_tensor(a)
    h = ad.as_tensor(features)
    if h.shape[1] != W.shape[0] or W.shape[1] != a.shape[0]:
        raise ValueError(f"shape mismatch: features {h.shape}, W {W.shape}, a {a.shape}")
    lifted = ad.matmul(edge_offsets(h, graph, centers), W)
    return ad.dot_last(ad.leaky_relu(lifted, LEAKY_SLOPE), a)


def normalize_coefficients(e) -> Tensor:
    return ad.row_softmax(e)


def aggregate(alpha, features, graph, W, centers=None, offsets=False) -> Tensor:
    """``sum_k alpha_ik W h_jk``; with ``offsets`` the neighbor term is ``W (h_jk - h_i)``."""
    h, W = ad.as_tensor(features), ad.as_tensor(W)
    if h.shape[1] != W.shape[0]:
        raise ValueError(f"features {h.shape} do not match W {W.shape}")
    nbr, centers = _graph_arrays(graph, centers, h.shape[0])
    alpha = ad.as_tensor(alpha)
    if alpha.shape != nbr.shape:
        raise ValueError(f"alpha {alpha.shape} does not match graph {nbr.shape}")
    if offsets:
        lifted = ad.matmul(edge_offsets(h, nbr, centers), W)
    else:
        lifted = ad.gather_rows(ad.matmul(h, W), nbr)
    return ad.sum_axis(ad.mul(ad.expand_last(alpha), lifted), axis=1)


def lae_conv_forward(
    features,
    graph,
    params: LAEConvParams,
    centers=None,
    alpha_override: Optional[np.ndarray] = None,
    offsets: bool = False,
    return_alpha: bool = False,
):
    """One LAE-Conv layer: (centers, c_in) features in, (centers, c_out) out.

    ``alpha_override`` replaces the learned coefficients (used to check the
    single-neighbor and uniform-weight special cases).
    """
    if alpha_override is None:
        alpha = normalize_coefficients(edge_coefficients(features, graph, params.W, params.a, centers))
    else:
        alpha = ad.as_tensor(alpha_override)
    agg = aggregate(alpha, features, graph, params.W, centers, offsets=offsets)
    out = ad.mlp_layer(agg, params.T, params.b, "relu")
    return (out, alpha) if return_alpha else out
