"""U-shaped encoder/decoder built from LAE-Conv layers and attention blocks.

Layer schedule (1-based, seven LAE-Conv layers)::

    1  LAE over all N1 input points                      -> C1
    2  FPS N1 -> N2, LAE from the N1 set                  -> C2
    3  FPS N2 -> N3                                       -> C3
    4  FPS N3 -> N4                                       -> C4   (bottleneck)
    5  propagate N4 -> N3, concat layer-3 skip, LAE       -> C5
    6  propagate N3 -> N2, concat layer-2 skip, LAE       -> C6
    7  propagate N2 -> N1, concat layer-1 skip, LAE       -> C7
    head  linear C7 -> num_classes

An attention block follows every layer listed in ``psa_layers`` (default
3, 4, 5). All neighbor graphs, sampling indices and interpolation weights
depend only on coordinates and are computed once per block by
:func:`prepare_geometry`. With ``coord_features`` (default) layers 2..7 see
their source coordinates concatenated in front of the incoming features, as
in PointNet++ grouping, so edge offsets keep carrying geometry past layer 1.

Layers in ``offset_layers`` aggregate ``W (h_j - h_i)`` instead of ``W h_j``;
``input_scale`` multiplies the coordinate channels before they enter the
network (neighbor search always runs on the raw coordinates). The ``desk``
preset uses both: offsets at layer 1 make its output a translation-invariant
local shape code, and a scale of 10 lifts neighbor offsets of a few
centimeters to order one, where the attention logits are not all near zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np

from . import autodiff as ad
from .attention import DEFAULT_MAX_POINTS, PSAParams, psa_forward
from .cloud import LabelPrediction, PointCloud, seeded_rng
from .lae import LAEConvParams, lae_conv_forward
from .spatial import NUM_BINS, farthest_point_sampling, search

SEARCH_METHODS = ("multidir", "knn", "ball")
# point-set level whose rows feed each layer's neighbor graph
SOURCE_LEVEL = {1: 1, 2: 1, 3: 2, 4: 3, 5: 3, 6: 2, 7: 1}
IDW_EPS = 1e-8


@dataclass(frozen=True)
class NetworkConfig:
    n_points: tuple = (512, 128, 64, 32)
    widths: tuple = (32, 64, 128, 256, 128, 128, 64)
    radii: tuple = (0.2, 0.4, 0.8, 1.6)
    m: int = 1
    search: str = "multidir"
    psa_layers: tuple = (3, 4, 5)
    num_classes: int = 3
    in_channels: int = 3
    psa_max_points: int = DEFAULT_MAX_POINTS
    aggregate_offsets: bool = False
    coord_features: bool = True
    input_scale: float = 1.0
    offset_layers: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "n_points", tuple(int(v) for v in self.n_points))
        object.__setattr__(self, "widths", tuple(int(v) for v in self.widths))
        object.__setattr__(self, "radii", tuple(float(v) for v in self.radii))
        object.__setattr__(self, "psa_layers", tuple(sorted({int(v) for v in self.psa_layers})))
        object.__setattr__(self, "offset_layers", tuple(sorted({int(v) for v in self.offset_layers})))
        if len(self.n_points) != 4 or any(v < 1 for v in self.n_points):
            raise ValueError("n_points needs four positive counts N1..N4")
        if any(b >= a for a, b in zip(self.n_points, self.n_points[1:])):
            raise ValueError(f"encoder point counts must strictly decrease: {self.n_points}")
        if len(self.widths) != 7 or any(v < 1 for v in self.widths):
            raise ValueError("widths needs seven positive channel counts C1..C7")
        if len(self.radii) != 4 or any(not r > 0 for r in self.radii):
            raise ValueError("radii needs four positive values")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.search not in SEARCH_METHODS:
            raise ValueError(f"search must be one of {SEARCH_METHODS}")
        if not set(self.psa_layers) <= set(range(1, 8)):
            raise ValueError(f"psa_layers must be a subset of 1..7, got {self.psa_layers}")
        if not set(self.offset_layers) <= set(range(1, 8)):
            raise ValueError(f"offset_layers must be a subset of 1..7, got {self.offset_layers}")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if not self.input_scale > 0:
            raise ValueError("input_scale must be > 0")
        if self.in_channels not in (3, 6):
            raise ValueError("in_channels must be 3 or 6")

    @property
    def layer_points(self) -> tuple:
        n1, n2, n3, n4 = self.n_points
        return (n1, n2, n3, n4, n3, n2, n1)

    @property
    def layer_radii(self) -> tuple:
        r1, r2, r3, r4 = self.radii
        return (r1, r2, r3, r4, r3, r2, r1)

    @property
    def k(self) -> int:
        return NUM_BINS * self.m


PRESETS = {
    # gradient-check scale
    "micro": NetworkConfig(
        n_points=(32, 16, 8, 4), widths=(4, 6, 8, 8, 6, 6, 4), radii=(0.5, 1.0, 1.5, 2.5)
    ),
    # paper widths / 8 at 512 input points: the synthetic-training config
    "desk": NetworkConfig(
        n_points=(512, 128, 64, 32), widths=(8, 16, 32, 64, 32, 32, 16), radii=(0.2, 0.4, 0.8, 1.6),
        input_scale=10.0, offset_layers=(1,),
    ),
    # paper ratios at 1/16 point scale, widths / 2
    "wide": NetworkConfig(),
}


# ---------------------------------------------------------------- geometry


@dataclass
class BlockGeometry:
    """Coordinate-only precomputation for one network input.

    ``sample[l]`` indexes layer ``l``'s centers into layer ``l - 1``'s point
    set (l = 2..4); ``graphs[l]`` are neighbor rows into the source set of
    layer ``l``; ``interp[l]`` holds (indices, weights) of the 3-NN
    interpolation feeding decoder layer ``l`` (5..7).
    """

    positions: dict = field(default_factory=dict)  # level 1..4 -> (N_l, 3)
    sample: dict = field(default_factory=dict)
    graphs: dict = field(default_factory=dict)
    interp: dict = field(default_factory=dict)


def interpolation_weights(fine: np.ndarray, coarse: np.ndarray, k: int = 3, eps: float = IDW_EPS):
    """Indices and normalized ``1 / (d^2 + eps)`` weights of the ``k`` nearest coarse points."""
    kk = min(k, coarse.shape[0])
    d = ((fine[:, None, :] - coarse[None, :, :]) ** 2).sum(axis=2)
    col = np.broadcast_to(np.arange(coarse.shape[0]), d.shape)
    order = np.lexsort((col, d), axis=1)[:, :kk]
    dk = np.take_along_axis(d, order, axis=1)
    recip = 1.0 / (dk + eps)
    return order.astype(np.int64), recip / recip.sum(axis=1, keepdims=True)


def prepare_geometry(positions: np.ndarray, config: NetworkConfig, fps_seed: int = 0) -> BlockGeometry:
    pos = np.ascontiguousarray(positions, dtype=np.float64)
    if pos.shape[0] != config.n_points[0]:
        raise ValueError(f"block has {pos.shape[0]} points, config expects N1={config.n_points[0]}")
    geo = BlockGeometry()
    geo.positions[1] = pos
    for level in (2, 3, 4):
        prev = geo.positions[level - 1]
        idx = farthest_point_sampling(prev, config.n_points[level - 1], fps_seed)
        geo.sample[level] = idx
        geo.positions[level] = prev[idx]
    r = config.layer_radii

    def graph(src_level, centers, radius):
        return search(config.search, geo.positions[src_level], centers, radius, config.m).indices

    geo.graphs[1] = graph(1, np.arange(config.n_points[0]), r[0])
    for level in (2, 3, 4):
        geo.graphs[level] = graph(level - 1, geo.sample[level], r[level - 1])
    # decoder layer 5/6/7 sits on the level 3/2/1 point set
    for layer, level in ((5, 3), (6, 2), (7, 1)):
        if layer == 7:
            geo.graphs[7] = geo.graphs[1]
        else:
            geo.graphs[layer] = graph(level, np.arange(len(geo.positions[level])), r[layer - 1])
        geo.interp[layer] = interpolation_weights(geo.positions[level], geo.positions[level + 1])
    return geo


# ---------------------------------------------------------------- parameters


def _psa_key_width(c):
    return max(1, c // 2)


def init_parameters(config: NetworkConfig, seed: int = 0) -> ad.ParameterStore:
    rng = seeded_rng(seed)
    store = ad.ParameterStore()
    w = config.widths
    lae_in = {1: config.in_channels, 2: w[0], 3: w[1], 4: w[2], 5: w[4], 6: w[5], 7: w[6]}
    if config.coord_features:
        lae_in = {k: v + (3 if k > 1 else 0) for k, v in lae_in.items()}
    fp_in = {5: w[3] + w[2], 6: w[4] + w[1], 7: w[5] + w[0]}
    for layer in range(1, 8):
        if layer in fp_in:
            store.add(f"fp{layer}.W", ad.glorot(rng, fp_in[layer], w[layer - 1]))
            store.add(f"fp{layer}.b", np.zeros(w[layer - 1]))
        LAEConvParams.create(store, f"lae{layer}", lae_in[layer], w[layer - 1], rng)
        if layer in config.psa_layers:
            c = w[layer - 1]
            PSAParams.create(store, f"psa{layer}", c, _psa_key_width(c), rng, config.psa_max_points)
    store.add("head.W", ad.glorot(rng, w[6], config.num_classes))
    store.add("head.b", np.zeros(config.num_classes))
    return store


def check_parameters(config: NetworkConfig, store: ad.ParameterStore) -> None:
    """Raise ValueError when ``store`` was not built for ``config``."""
    ref = init_parameters(config, 0)
    if set(ref) != set(store):
        missing = sorted(set(ref) - set(store))
        extra = sorted(set(store) - set(ref))
        raise ValueError(f"parameters do not match config (missing {missing}, unexpected {extra})")
    for k in ref:
        if ref[k].shape != store[k].shape:
            if k == "head.W" or k == "head.b":
                raise ValueError(
                    f"num_classes mismatch: config has {config.num_classes}, "
                    f"checkpoint has {store[k].shape[-1]}"
                )
            raise ValueError(f"shape mismatch for {k}: config {ref[k].shape}, store {store[k].shape}")


# ---------------------------------------------------------------- layers


def set_abstraction(positions, features, target, radius, m, params: LAEConvParams,
                    method="multidir", fps_seed=0, offsets=False):
    """Downsample by FPS, group from the full set, and convolve.

    Returns ``(center indices, center features)``.
    """
    pos = np.ascontiguousarray(positions, dtype=np.float64)
    n = pos.shape[0]
    if target > n:
        raise ValueError(f"target count {target} exceeds input count {n}")
    centers = np.arange(n) if target == n else farthest_point_sampling(pos, target, fps_seed)
    graph = search(method, pos, centers, radius, m)
    return centers, lae_conv_forward(features, graph, params, centers=centers, offsets=offsets)


def interpolate(coarse_features, idx, weights) -> ad.Tensor:
    g = ad.gather_rows(coarse_features, idx)
    return ad.sum_axis(ad.mul(g, weights[..., None]), axis=1)


def feature_propagation(coarse_positions, coarse_features, fine_positions, skip_features,
                        weight, bias, interp=None) -> ad.Tensor:
    """Inverse-distance interpolation to the fine set, skip concat, unit MLP."""
    coarse_features = ad.as_tensor(coarse_features)
    skip = ad.as_tensor(skip_features)
    fine = np.asarray(fine_positions, dtype=np.float64)
    if coarse_features.shape[0] < 1:
        raise ValueError("feature propagation needs at least one coarse point")
    if skip.shape[0] != fine.shape[0]:
        raise ValueError(f"skip features have {skip.shape[0]} rows for {fine.shape[0]} fine points")
    w = ad.as_tensor(weight)
    if w.shape[0] != coarse_features.shape[1] + skip.shape[1]:
        raise ValueError(
            f"fusion weight expects {w.shape[0]} channels, got "
            f"{coarse_features.shape[1]} + {skip.shape[1]}"
        )
    if interp is None:
        interp = interpolation_weights(fine, np.asarray(coarse_positions, dtype=np.float64))
    up = interpolate(coarse_features, *interp)
    return ad.mlp_layer(ad.concat([up, skip], axis=1), w, bias, "relu")


def forward_features(geo: BlockGeometry, inputs: np.ndarray, config: NetworkConfig,
                     store: ad.ParameterStore, activations: Optional[dict] = None) -> ad.Tensor:
    """Logits tensor (N1 x num_classes) for one prepared block."""
    x = inputs if isinstance(inputs, ad.Tensor) else ad.Tensor(inputs)
    if x.shape != (config.n_points[0], config.in_channels):
        raise ValueError(f"input features {x.shape} do not match config")
    s = config.input_scale
    if s != 1.0:
        x = ad.mul(x, np.where(np.arange(config.in_channels) < 3, s, 1.0))
    feats = {}

    def lae(layer, h, centers=None):
        if config.coord_features and layer > 1:
            h = ad.concat([ad.Tensor(s * geo.positions[SOURCE_LEVEL[layer]]), h], axis=1)
        out = lae_conv_forward(h, geo.graphs[layer], LAEConvParams.from_store(store, f"lae{layer}"),
                               centers=centers, offsets=config.aggregate_offsets or layer in config.offset_layers)
        if layer in config.psa_layers:
            out = psa_forward(out, PSAParams.from_store(store, f"psa{layer}", config.psa_max_points))
        feats[layer] = out
        if activations is not None:
            activations[layer] = out
        return out

    h = lae(1, x)
    for layer in (2, 3, 4):
        h = lae(layer, h, geo.sample[layer])
    for layer, skip_layer in ((5, 3), (6, 2), (7, 1)):
        idx, w = geo.interp[layer]
        up = interpolate(h, idx, w)
        fused = ad.mlp_layer(ad.concat([up, feats[skip_layer]], axis=1),
                             store[f"fp{layer}.W"], store[f"fp{layer}.b"], "relu")
        h = lae(layer, fused)
    return ad.mlp_layer(h, store["head.W"], store["head.b"], "none")


def block_inputs(cloud: PointCloud, config: NetworkConfig) -> np.ndarray:
    return cloud.features(config.in_channels)


def network_forward(cloud: PointCloud, config: NetworkConfig, store: ad.ParameterStore,
                    geo: Optional[BlockGeometry] = None) -> LabelPrediction:
    if cloud.num_points != config.n_points[0]:
        raise ValueError(f"cloud has {cloud.num_points} points, config expects {config.n_points[0]}")
    geo = geo or prepare_geometry(cloud.positions, config)
    with ad.no_grad():
        logits = forward_features(geo, block_inputs(cloud, config), config, store)
    return LabelPrediction(logits.value)


def train_step(batch, config: NetworkConfig, store: ad.ParameterStore, lr: float,
               betas=(0.9, 0.999), eps=1e-8, optimizer="adam", class_weights=None) -> float:
    """One optimizer step on a batch of ``(geometry, inputs, labels)`` blocks.

    Loss is averaged over blocks; returns the pre-step loss.
    """
    if not batch:
        raise ValueError("empty batch")
    total = 0.0
    for geo, inputs, labels in batch:
        logits = forward_features(geo, inputs, config, store)
        loss = ad.cross_entropy(logits, labels, class_weights)
        ad.backward(loss, seed=np.array(1.0 / len(batch)))
        total += float(loss.value)
    if not np.isfinite(total):
        raise FloatingPointError("non-finite loss")
    ad.optimizer_step(store, lr, betas, eps, optimizer)
    return total / len(batch)


# ---------------------------------------------------------------- config text files


def config_to_dict(config: NetworkConfig) -> dict:
    out = {}
    for f in fields(config):
        v = getattr(config, f.name)
        out[f.name] = ",".join(str(x) for x in v) if isinstance(v, tuple) else str(v).lower() if isinstance(v, bool) else str(v)
    return out


def config_from_dict(d: dict, base: NetworkConfig = NetworkConfig()) -> NetworkConfig:
    kw = {}
    types = {f.name: type(getattr(base, f.name)) for f in fields(base)}
    for k, v in d.items():
        if k not in types:
            raise KeyError(k)
        t = types[k]
        if t is tuple:
            v = v.strip()
            parsed = tuple(float(x) if k == "radii" else int(x) for x in v.split(",") if x.strip()) if v else ()
            kw[k] = parsed
        elif t is bool:
            kw[k] = str(v).strip().lower() in ("1", "true", "yes", "on")
        else:
            kw[k] = t(v)
    return replace(base, **kw)


def save_config(config: NetworkConfig, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for k, v in config_to_dict(config).items():
            fh.write(f"{k} = {v}\n")


def read_kv(path) -> dict:
    """Parse a flat ``key = value`` file (``#`` comments, blank lines ignored)."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.split("#", 1)[0].strip()
            if not s:
                continue
            if "=" not in s:
                raise ValueError(f"{path}: line {lineno}: expected key = value")
            k, v = s.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def load_config(path) -> NetworkConfig:
    return config_from_dict(read_kv(path))
