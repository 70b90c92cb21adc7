"""Scene blocks, training loop, sliding-window inference, metrics, ablations."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .cloud import LabelPrediction, PointCloud, seeded_rng
from .network import (
    NetworkConfig,
    forward_features,
    init_parameters,
    prepare_geometry,
    train_step,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BlockSpec:
    footprint: tuple = (1.0, 1.0)
    padding: float = 0.25
    points: int = 512
    stride: float = 0.5

    def __post_init__(self):
        if min(self.footprint) <= 0 or self.padding < 0 or self.points < 1 or self.stride <= 0:
            raise ValueError("invalid block spec")
        if self.stride > min(self.footprint):
            raise ValueError(f"stride {self.stride} > footprint {self.footprint} leaves coverage gaps")


@dataclass
class Block:
    """Points within one padded footprint.

    ``members`` are the original indices of every point inside footprint +
    padding; each entry of ``chunks`` is a sample of exactly ``spec.points``
    members that is fed to the network.
    """

    origin: tuple
    members: np.ndarray
    chunks: List[np.ndarray] = field(default_factory=list)


def _origins(lo, hi, size, step):
    n = max(1, int(math.ceil((hi - lo - size) / step - 1e-9)) + 1) if hi - lo > size else 1
    return [lo + i * step for i in range(n)]


def block_members(positions, x0, y0, spec: BlockSpec) -> np.ndarray:
    p = spec.padding
    x, y = positions[:, 0], positions[:, 1]
    inside = (
        (x >= x0 - p) & (x <= x0 + spec.footprint[0] + p)
        & (y >= y0 - p) & (y <= y0 + spec.footprint[1] + p)
    )
    return np.flatnonzero(inside)


def sample_chunk(members, n, rng) -> np.ndarray:
    """Exactly ``n`` members: a random subset, or all plus random repeats."""
    if len(members) >= n:
        return np.sort(rng.choice(members, size=n, replace=False))
    extra = rng.choice(members, size=n - len(members), replace=True)
    return np.concatenate([members, extra])


def partition_chunks(members, n, rng) -> List[np.ndarray]:
    """Shuffle and cut into chunks of ``n``; the last is topped up with repeats."""
    perm = rng.permutation(members)
    chunks = []
    for s in range(0, len(perm), n):
        c = perm[s:s + n]
        if len(c) < n:
            c = np.concatenate([c, rng.choice(members, size=n - len(c), replace=True)])
        chunks.append(c)
    return chunks


def split_blocks(cloud: PointCloud, spec: BlockSpec, mode: str = "train", seed: int = 0,
                 shift=(0.0, 0.0)) -> List[Block]:
    """Tile the xy plane (train: step = footprint, test: step = stride).

    Train blocks get one random sample each; test blocks are partitioned into
    as many samples as needed so that every member point is predicted.
    ``shift`` moves the tiling start back from the cloud's xy minimum.
    Empty blocks are dropped.
    """
    if cloud.num_points == 0:
        raise ValueError("cannot split an empty cloud")
    if mode not in ("train", "test"):
        raise ValueError(f"mode must be train or test, got {mode!r}")
    rng = seeded_rng(seed)
    pos = cloud.positions
    lo, hi = pos.min(axis=0), pos.max(axis=0)
    lo[:2] -= np.asarray(shift, dtype=np.float64)
    sx = spec.footprint[0] if mode == "train" else spec.stride
    sy = spec.footprint[1] if mode == "train" else spec.stride
    blocks = []
    for x0 in _origins(lo[0], hi[0], spec.footprint[0], sx):
        for y0 in _origins(lo[1], hi[1], spec.footprint[1], sy):
            mem = block_members(pos, x0, y0, spec)
            if not len(mem):
                continue
            b = Block((x0, y0), mem)
            if mode == "train":
                b.chunks = [sample_chunk(mem, spec.points, rng)]
            else:
                b.chunks = partition_chunks(mem, spec.points, rng)
            blocks.append(b)
    return blocks


def chunk_cloud(cloud: PointCloud, chunk, angle: float = 0.0) -> PointCloud:
    """Chunk points with xy re-centered on their centroid, optionally turned about z."""
    sub = cloud.subset(chunk)
    pos = np.array(sub.positions)
    pos[:, :2] -= pos[:, :2].mean(axis=0)
    if angle:
        c, s = math.cos(angle), math.sin(angle)
        pos[:, :2] = pos[:, :2] @ np.array([[c, s], [-s, c]])
    return PointCloud(pos, sub.colors, sub.labels)


# ---------------------------------------------------------------- metrics


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows = truth, columns = prediction

    @classmethod
    def build(cls, pred, true, num_classes) -> "ConfusionMatrix":
        pred = np.asarray(pred, dtype=np.int64)
        true = np.asarray(true, dtype=np.int64)
        if pred.shape != true.shape:
            raise ValueError(f"length mismatch: {pred.shape} vs {true.shape}")
        for name, a in (("prediction", pred), ("truth", true)):
            if a.size and (a.min() < 0 or a.max() >= num_classes):
                raise ValueError(f"{name} label outside [0, {num_classes})")
        flat = np.bincount(true * num_classes + pred, minlength=num_classes * num_classes)
        return cls(flat.reshape(num_classes, num_classes))

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def overall_accuracy(self) -> float:
        return 100.0 * np.trace(self.counts) / self.total

    def iou(self) -> np.ndarray:
        tp = np.diag(self.counts).astype(np.float64)
        denom = self.counts.sum(axis=0) + self.counts.sum(axis=1) - tp
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(denom > 0, tp / np.where(denom > 0, denom, 1), np.nan)


def compute_metrics(pred, true, num_classes):
    """(OA %, mIoU %, per-class IoU in [0, 1] with NaN for absent classes)."""
    cm = ConfusionMatrix.build(pred, true, num_classes)
    if cm.total == 0:
        raise ValueError("no points to evaluate")
    iou = cm.iou()
    return cm.overall_accuracy(), 100.0 * float(np.nanmean(iou)), iou


# ---------------------------------------------------------------- inference


def predict_chunks(cloud: PointCloud, chunks, config: NetworkConfig, store) -> List[np.ndarray]:
    out = []
    with ad.no_grad():
        for c in chunks:
            sub = chunk_cloud(cloud, c)
            geo = prepare_geometry(sub.positions, config)
            out.append(forward_features(geo, sub.features(config.in_channels), config, store).value)
    return out


def resolve_overlaps(num_points, chunks, chunk_logits, num_classes) -> LabelPrediction:
    """Keep, per point, the logits row with the highest max-softmax confidence.

    Earlier chunks win exact ties.
    """
    best = np.full(num_points, -np.inf)
    logits = np.zeros((num_points, num_classes))
    for idx, z in zip(chunks, chunk_logits):
        conf = ad.softmax_values(z).max(axis=1)
        for row, p in enumerate(idx):
            if conf[row] > best[p]:
                best[p] = conf[row]
                logits[p] = z[row]
    if np.any(best == -np.inf):
        missing = int(np.flatnonzero(best == -np.inf)[0])
        raise AssertionError(f"point {missing} is not covered by any block")
    return LabelPrediction(logits)


def sliding_window_predict(scene: PointCloud, spec: BlockSpec, config: NetworkConfig, store,
                           seed: int = 0) -> LabelPrediction:
    blocks = split_blocks(scene, spec, "test", seed)
    chunks = [c for b in blocks for c in b.chunks]
    logits = predict_chunks(scene, chunks, config, store)
    return resolve_overlaps(scene.num_points, chunks, logits, config.num_classes)


# ---------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainOptions:
    epochs: int = 50
    lr: float = 3e-3
    batch_size: int = 4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    optimizer: str = "adam"
    decay_rate: float = 0.7
    decay_step: int = 40
    seed: int = 0
    class_weights: bool = False
    resample: bool = True  # fresh random block samples every epoch
    augment: bool = True  # with resample: random tiling shift and z rotation per epoch


@dataclass
class TrainResult:
    store: ad.ParameterStore
    losses: List[float]
    seconds: float


def _class_weights(scenes, num_classes):
    counts = np.zeros(num_classes)
    for s in scenes:
        counts += np.bincount(s.labels, minlength=num_classes)[:num_classes]
    freq = counts / counts.sum()
    w = np.where(freq > 0, 1.0 / np.maximum(freq, 1e-12), 0.0)
    return w / w[w > 0].mean()


def train_model(scenes: Sequence[PointCloud], config: NetworkConfig, spec: BlockSpec,
                opts: TrainOptions = TrainOptions(), store=None, callback=None) -> TrainResult:
    """Block-wise training over labeled scenes; returns the trained store and epoch losses."""
    if spec.points != config.n_points[0]:
        raise ValueError(f"block size {spec.points} != network N1 {config.n_points[0]}")
    for s in scenes:
        if s.labels is None:
            raise ValueError("training scenes must carry labels")
    t0 = time.perf_counter()
    store = store or init_parameters(config, opts.seed)
    rng = seeded_rng(opts.seed + 1)
    blocks = [(si, b) for si, s in enumerate(scenes) for b in split_blocks(s, spec, "train", opts.seed + si)]
    if not blocks:
        raise ValueError("no training blocks")
    weights = _class_weights(scenes, config.num_classes) if opts.class_weights else None

    def prepared(si, chunk, angle=0.0):
        sub = chunk_cloud(scenes[si], chunk, angle)
        return prepare_geometry(sub.positions, config), sub.features(config.in_channels), sub.labels

    augment = opts.resample and opts.augment
    cache = None if opts.resample else [prepared(si, b.chunks[0]) for si, b in blocks]
    losses = []
    for epoch in range(opts.epochs):
        lr = ad.lr_decay(epoch, opts.lr, opts.decay_rate, opts.decay_step)
        if augment and epoch > 0:
            blocks = [(si, b) for si, s in enumerate(scenes)
                      for b in split_blocks(s, spec, "train", opts.seed + si,
                                            shift=rng.uniform(0.0, 1.0, 2) * np.asarray(spec.footprint))]
        order = rng.permutation(len(blocks))
        epoch_loss, nb = 0.0, 0
        for s in range(0, len(order), opts.batch_size):
            batch = []
            for i in order[s:s + opts.batch_size]:
                if cache is not None:
                    batch.append(cache[i])
                else:
                    si, b = blocks[i]
                    angle = rng.uniform(0.0, 2.0 * math.pi) if augment else 0.0
                    batch.append(prepared(si, sample_chunk(b.members, spec.points, rng), angle))
            epoch_loss += train_step(batch, config, store, lr, (opts.beta1, opts.beta2), opts.eps,
                                     opts.optimizer, weights)
            nb += 1
        losses.append(epoch_loss / nb)
        log.info("epoch %d loss %.4f lr %.2e", epoch + 1, losses[-1], lr)
        if callback is not None:
            callback(epoch, losses[-1])
    return TrainResult(store, losses, time.perf_counter() - t0)


def evaluate(scenes: Sequence[PointCloud], config: NetworkConfig, spec: BlockSpec, store, seed=0):
    """Sliding-window prediction over every scene; metrics over all points."""
    cm = None
    for i, s in enumerate(scenes):
        pred = sliding_window_predict(s, spec, config, store, seed + i)
        part = ConfusionMatrix.build(pred.labels, s.labels, config.num_classes)
        cm = part if cm is None else cm.merge(part)
    iou = cm.iou()
    return cm.overall_accuracy(), 100.0 * float(np.nanmean(iou)), iou


# ---------------------------------------------------------------- ablation


@dataclass(frozen=True)
class Variant:
    search: str = "multidir"
    m: int = 1
    psa_layers: tuple = (3, 4, 5)

    @property
    def name(self) -> str:
        s = {"multidir": f"multidir(m={self.m})", "knn": f"knn(K={16 * self.m})",
             "ball": f"ball(K={16 * self.m})"}[self.search]
        psa = ",".join(map(str, self.psa_layers)) or "none"
        return f"{s} psa[{psa}]"


SEARCH_VARIANTS = [Variant("knn"), Variant("ball"), Variant("multidir", 1),
                   Variant("multidir", 2), Variant("multidir", 3)]
PSA_VARIANTS = [Variant(psa_layers=p) for p in
                [(), (3, 4, 5), (2, 4, 6), (1, 4, 7), (2, 3, 4, 5, 6), (1, 2, 3, 4, 5, 6, 7)]]


def run_ablation(variants: Sequence[Variant], train_scenes, test_scenes, config: NetworkConfig,
                 spec: BlockSpec, opts: TrainOptions):
    """Train and evaluate every variant with identical seeds; returns result rows."""
    rows = []
    for v in variants:
        cfg = replace(config, search=v.search, m=v.m, psa_layers=v.psa_layers)
        res = train_model(train_scenes, cfg, spec, opts)
        oa, miou, _ = evaluate(test_scenes, cfg, spec, res.store, opts.seed)
        rows.append({"variant": v.name, "search": v.search, "m": v.m,
                     "psa": ",".join(map(str, v.psa_layers)) or "none",
                     "final_loss": res.losses[-1], "oa": oa, "miou": miou,
                     "seconds": res.seconds})
        log.info("%s: OA %.2f mIoU %.2f", v.name, oa, miou)
    return rows


TABLE_COLUMNS = ("variant", "final_loss", "oa", "miou")


def format_table(rows) -> str:
    cells = [["variant", "final loss", "OA %", "mIoU %"]]
    for r in rows:
        cells.append([r["variant"], f"{r['final_loss']:.4f}", f"{r['oa']:.2f}", f"{r['miou']:.2f}"])
    widths = [max(len(c[i]) for c in cells) for i in range(4)]
    lines = []
    for n, c in enumerate(cells):
        lines.append("  ".join(c[0].ljust(widths[0]) if i == 0 else c[i].rjust(widths[i])
                               for i in range(4)).rstrip())
        if n == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "search", "m", "psa", "final_loss", "oa", "miou"])
        for r in rows:
            w.writerow([r["variant"], r["search"], r["m"], r["psa"], f"{r['final_loss']:.6f}",
                        f"{r['oa']:.4f}", f"{r['miou']:.4f}"])
