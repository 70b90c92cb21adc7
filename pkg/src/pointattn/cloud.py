"""Point-cloud containers, text I/O and seeded random streams."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

FORMATS = {"xyz": 3, "xyzrgb": 6, "xyzrgbl": 7}

# 21 class colors (RGB in [0, 1]); index = class id.
PALETTE = np.array(
    [
        [0.682, 0.780, 0.910],  # 0
        [0.596, 0.875, 0.541],  # 1
        [0.839, 0.153, 0.157],  # 2
        [0.122, 0.467, 0.706],  # 3
        [0.737, 0.741, 0.133],  # 4
        [0.549, 0.337, 0.294],  # 5
        [1.000, 0.498, 0.055],  # 6
        [0.773, 0.690, 0.835],  # 7
        [0.580, 0.404, 0.741],  # 8
        [0.090, 0.745, 0.812],  # 9
        [0.969, 0.714, 0.824],  # 10
        [0.859, 0.859, 0.553],  # 11
        [0.173, 0.627, 0.173],  # 12
        [0.439, 0.502, 0.565],  # 13
        [0.890, 0.467, 0.761],  # 14
        [0.620, 0.855, 0.898],  # 15
        [1.000, 0.733, 0.471],  # 16
        [0.322, 0.329, 0.639],  # 17
        [0.400, 0.400, 0.400],  # 18
        [0.957, 0.427, 0.263],  # 19
        [0.000, 0.000, 0.000],  # 20
    ]
)


class CloudFormatError(ValueError):
    """Raised for malformed point-cloud text files."""


@dataclass(frozen=True)
class PointCloud:
    positions: np.ndarray
    colors: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    num_classes: Optional[int] = field(default=None, compare=False)

    def __post_init__(self):
        pos = np.ascontiguousarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError(f"positions must be N x 3, got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions contain non-finite values")
        n = pos.shape[0]
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        if self.colors is not None:
            col = np.ascontiguousarray(self.colors, dtype=np.float64)
            if col.shape != (n, 3):
                raise ValueError(f"colors must be {n} x 3, got {col.shape}")
            col.setflags(write=False)
            object.__setattr__(self, "colors", col)
        if self.labels is not None:
            lab = np.ascontiguousarray(self.labels, dtype=np.int64)
            if lab.shape != (n,):
                raise ValueError(f"labels must have {n} entries, got {lab.shape}")
            if n and lab.min() < 0:
                raise ValueError("labels must be non-negative")
            if self.num_classes is not None and n and lab.max() >= self.num_classes:
                raise ValueError(f"label {lab.max()} outside [0, {self.num_classes})")
            lab.setflags(write=False)
            object.__setattr__(self, "labels", lab)

    @property
    def num_points(self) -> int:
        return self.positions.shape[0]

    def subset(self, idx) -> "PointCloud":
        idx = np.asarray(idx, dtype=np.int64)
        return PointCloud(
            self.positions[idx],
            None if self.colors is None else self.colors[idx],
            None if self.labels is None else self.labels[idx],
            self.num_classes,
        )

    def features(self, in_channels: int = 3) -> np.ndarray:
        """Network input features: xyz, or xyz+rgb when ``in_channels`` is 6."""
        if in_channels == 3:
            return np.array(self.positions)
        if in_channels == 6:
            if self.colors is None:
                raise ValueError("6-channel input requested but cloud has no colors")
            return np.hstack([self.positions, self.colors])
        raise ValueError(f"in_channels must be 3 or 6, got {in_channels}")


@dataclass(frozen=True)
class FeatureMatrix:
    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 2:
            raise ValueError(f"feature matrix must be 2-D, got shape {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValueError("feature matrix contains non-finite entries")
        object.__setattr__(self, "data", d)

    @property
    def num_points(self) -> int:
        return self.data.shape[0]

    @property
    def num_channels(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class LabelPrediction:
    logits: np.ndarray

    @property
    def probabilities(self) -> np.ndarray:
        z = self.logits - self.logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.logits, axis=1)

    @property
    def confidence(self) -> np.ndarray:
        return self.probabilities.max(axis=1)


def _infer_format(path: Path) -> str:
    ext = path.suffix.lstrip(".").lower()
    if ext in FORMATS:
        return ext
    raise CloudFormatError(f"cannot infer cloud format from extension of {path}")


def load_cloud(path, format: Optional[str] = None) -> PointCloud:
    """Parse a whitespace-separated ``xyz``/``xyzrgb``/``xyzrgbl`` text file.

    Blank lines and lines starting with ``#`` are skipped. Errors name the
    1-based line number of the first bad line.
    """
    path = Path(path)
    fmt = format or _infer_format(path)
    if fmt not in FORMATS:
        raise CloudFormatError(f"unknown format {fmt!r}; expected one of {sorted(FORMATS)}")
    ncol = FORMATS[fmt]
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split()
            if len(parts) != ncol:
                raise CloudFormatError(
                    f"{path}: line {lineno}: expected {ncol} columns for {fmt}, got {len(parts)}"
                )
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                raise CloudFormatError(f"{path}: line {lineno}: unparsable number") from None
            if not all(math.isfinite(v) for v in vals):
                raise CloudFormatError(f"{path}: line {lineno}: non-finite value")
            rows.append(vals)
    if not rows:
        raise CloudFormatError(f"{path}: empty point cloud file")
    arr = np.array(rows, dtype=np.float64)
    colors = arr[:, 3:6] if ncol >= 6 else None
    labels = None
    if ncol == 7:
        lab = arr[:, 6]
        if np.any(lab != np.round(lab)) or np.any(lab < 0):
            bad = int(np.flatnonzero((lab != np.round(lab)) | (lab < 0))[0])
            raise CloudFormatError(f"{path}: invalid label on data row {bad + 1}")
        labels = lab.astype(np.int64)
    return PointCloud(arr[:, :3], colors, labels)


def save_labeled_cloud(cloud: PointCloud, labels, path) -> None:
    """Write ``x y z r g b label`` lines with the palette color of each label."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (cloud.num_points,):
        raise ValueError(
            f"label count {labels.shape[0] if labels.ndim else 0} != point count {cloud.num_points}"
        )
    if labels.size and (labels.min() < 0 or labels.max() >= len(PALETTE)):
        raise ValueError(f"labels must lie in [0, {len(PALETTE)})")
    colors = PALETTE[labels]
    lines = [
        f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {c[0]:.6f} {c[1]:.6f} {c[2]:.6f} {l:d}\n"
        for p, c, l in zip(cloud.positions, colors, labels)
    ]
    with open(path, "w", encoding="ascii") as fh:
        fh.writelines(lines)


def save_cloud(cloud: PointCloud, path) -> None:
    """Write a cloud in the richest format its fields allow."""
    cols = [cloud.positions]
    if cloud.colors is not None:
        cols.append(cloud.colors)
    arr = np.hstack(cols)
    with open(path, "w", encoding="ascii") as fh:
        for i, row in enumerate(arr):
            txt = " ".join(f"{v:.6f}" for v in row)
            if cloud.labels is not None:
                if cloud.colors is None:
                    c = PALETTE[cloud.labels[i] % len(PALETTE)]
                    txt += " " + " ".join(f"{v:.6f}" for v in c)
                txt += f" {cloud.labels[i]:d}"
            fh.write(txt + "\n")


def seeded_rng(seed: int) -> np.random.Generator:
    """PCG64 stream; identical seeds give identical draws on every platform."""
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))
