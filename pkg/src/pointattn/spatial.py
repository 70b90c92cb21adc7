"""Uniform-grid spatial index and the neighbor-search strategies.

Three strategies are provided, each returning a fixed-width
:class:`NeighborGraph`:

* :func:`multi_directional_search` -- the ball of radius ``r`` around a
  center is split into 16 direction bins (8 azimuth sectors of 45 degrees in
  each z-hemisphere) and the ``m`` nearest points of every bin are kept.
  Bins with too few points are padded with the center's own index.
* :func:`knn_search` -- the ``k`` nearest points (the center included).
* :func:`ball_query` -- up to ``k`` points within ``r`` taken in ascending
  index order, padded with the first one found.

Ties are always broken towards the lower point index. The inner loops run in
a compiled extension when it is available (see :data:`BACKEND`).
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud

log = logging.getLogger(__name__)

NUM_BINS = 16


def _load_backend():
    if os.environ.get("POINTATTN_PURE", "") not in ("", "0"):
        from . import _search_py
        return _search_py, "python"
    try:
        from . import _search_ext
        return _search_ext, "compiled"
    except ImportError:  # extension not built
        from . import _search_py
        log.debug("compiled search kernels unavailable, using numpy fallback")
        return _search_py, "python"


_kernels, BACKEND = _load_backend()


def use_backend(name: str) -> None:
    """Switch kernels at runtime (``"compiled"`` or ``"python"``)."""
    global _kernels, BACKEND
    if name == "python":
        from . import _search_py as k
    elif name == "compiled":
        from . import _search_ext as k
    else:
        raise ValueError(f"unknown backend {name!r}")
    _kernels, BACKEND = k, name


def kernels():
    return _kernels


@dataclass(frozen=True)
class SearchConfig:
    radius: float
    points_per_bin: int = 1

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"radius must be > 0, got {self.radius}")
        if int(self.points_per_bin) != self.points_per_bin or self.points_per_bin < 1:
            raise ValueError(f"points_per_bin must be a positive integer, got {self.points_per_bin}")

    @property
    def num_bins(self) -> int:
        return NUM_BINS

    @property
    def k(self) -> int:
        return NUM_BINS * self.points_per_bin


@dataclass(frozen=True)
class NeighborGraph:
    indices: np.ndarray  # (num_centers, K) int64
    source_size: int

    def __post_init__(self):
        idx = np.ascontiguousarray(self.indices, dtype=np.int64)
        if idx.ndim != 2:
            raise ValueError("neighbor indices must be 2-D")
        if idx.size and (idx.min() < 0 or idx.max() >= self.source_size):
            raise ValueError("neighbor index out of range")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @property
    def width(self) -> int:
        return self.indices.shape[1]

    @property
    def num_centers(self) -> int:
        return self.indices.shape[0]


class SpatialIndex:
    """Points bucketed into cubic cells of edge ``cell_size``.

    Only occupied cells are stored: ``keys`` holds their sorted linear ids,
    ``starts``/``order`` give each cell's point indices (ascending) in CSR form.
    """

    def __init__(self, positions: np.ndarray, cell_size: float):
        pos = np.ascontiguousarray(positions, dtype=np.float64)
        if pos.shape[0] == 0:
            raise ValueError("cannot index an empty cloud")
        if not cell_size > 0:
            raise ValueError(f"cell_size must be > 0, got {cell_size}")
        self.positions = pos
        self.cell_size = float(cell_size)
        self.origin = pos.min(axis=0)
        cell = np.floor((pos - self.origin) / self.cell_size).astype(np.int64)
        self.dims = cell.max(axis=0) + 1
        if float(np.prod(self.dims.astype(np.float64))) > 2.0**62:
            raise ValueError("grid too fine for the cloud extent")
        self.cell_of = np.ascontiguousarray(cell)
        lin = (cell[:, 0] * self.dims[1] + cell[:, 1]) * self.dims[2] + cell[:, 2]
        self.order = np.argsort(lin, kind="stable").astype(np.int64)
        self.keys, counts = np.unique(lin[self.order], return_counts=True)
        self.keys = self.keys.astype(np.int64)
        self.starts = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self._lin = lin

    @property
    def num_points(self) -> int:
        return self.positions.shape[0]

    @property
    def num_cells(self) -> int:
        return len(self.keys)

    def cell_points(self, point: int) -> np.ndarray:
        """Indices of all points sharing ``point``'s cell."""
        c = int(np.searchsorted(self.keys, self._lin[point]))
        return self.order[self.starts[c]:self.starts[c + 1]]

    def range_query(self, center: np.ndarray, radius: float) -> np.ndarray:
        """Sorted indices within ``radius`` of an arbitrary location."""
        if radius > self.cell_size:
            raise ValueError("query radius exceeds cell size")
        c = np.floor((np.asarray(center, dtype=np.float64) - self.origin) / self.cell_size)
        c = c.astype(np.int64)
        found = []
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    g = c + (dx, dy, dz)
                    if np.any(g < 0) or np.any(g >= self.dims):
                        continue
                    key = (g[0] * self.dims[1] + g[1]) * self.dims[2] + g[2]
                    loc = int(np.searchsorted(self.keys, key))
                    if loc < len(self.keys) and self.keys[loc] == key:
                        found.append(self.order[self.starts[loc]:self.starts[loc + 1]])
        if not found:
            return np.empty(0, dtype=np.int64)
        cand = np.concatenate(found)
        o = self.positions[cand] - center
        d = o[:, 0] * o[:, 0] + o[:, 1] * o[:, 1] + o[:, 2] * o[:, 2]
        return np.sort(cand[d <= radius * radius])

    def _args(self):
        return (self.positions, self.cell_of, self.keys, self.starts, self.order, self.dims)


def build_index(cloud, cell_size: float) -> SpatialIndex:
    pos = cloud.positions if isinstance(cloud, PointCloud) else cloud
    return SpatialIndex(pos, cell_size)


def bin_of(offset) -> int:
    """Direction bin in ``[0, 16)`` of a 3-D offset.

    ``8 * hemisphere + sector``: hemisphere is 1 for ``z < 0``; sector ``k``
    covers azimuths ``[45k, 45k + 45)`` degrees. A zero xy offset has azimuth 0.
    """
    off = np.asarray(offset, dtype=np.float64).reshape(1, 3)
    if not np.all(np.isfinite(off)):
        raise ValueError("offset must be finite")
    return int(_kernels.bin_of_many(np.ascontiguousarray(off))[0])


def bins_of(offsets) -> np.ndarray:
    return _kernels.bin_of_many(np.ascontiguousarray(offsets, dtype=np.float64).reshape(-1, 3))


def _centers(centers, n) -> np.ndarray:
    c = np.ascontiguousarray(centers, dtype=np.int64).reshape(-1)
    if c.size and (c.min() < 0 or c.max() >= n):
        raise ValueError("center index out of range")
    return c


def multi_directional_search(index: SpatialIndex, cloud, centers, cfg: SearchConfig) -> NeighborGraph:
    if index.cell_size < cfg.radius:
        raise ValueError(f"index cell size {index.cell_size} smaller than radius {cfg.radius}")
    c = _centers(centers, index.num_points)
    r = float(cfg.radius)
    out = _kernels.multi_directional(*index._args(), c, r * r, int(cfg.points_per_bin))
    return NeighborGraph(out, index.num_points)


def knn_search(index: SpatialIndex, cloud, centers, k: int) -> NeighborGraph:
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > index.num_points:
        raise ValueError(f"k={k} exceeds cloud size {index.num_points}")
    c = _centers(centers, index.num_points)
    out = _kernels.knn(*index._args(), c, index.cell_size, int(k))
    return NeighborGraph(out, index.num_points)


def ball_query(index: SpatialIndex, cloud, centers, radius: float, k: int) -> NeighborGraph:
    if not radius > 0 or k < 1:
        raise ValueError("ball query needs radius > 0 and k >= 1")
    if index.cell_size < radius:
        raise ValueError(f"index cell size {index.cell_size} smaller than radius {radius}")
    c = _centers(centers, index.num_points)
    out = _kernels.ball(*index._args(), c, float(radius) * float(radius), int(k))
    return NeighborGraph(out, index.num_points)


def farthest_point_sampling(cloud, n_out: int, seed_index: int = 0) -> np.ndarray:
    pos = np.ascontiguousarray(
        cloud.positions if isinstance(cloud, PointCloud) else cloud, dtype=np.float64
    )
    n = pos.shape[0]
    if not 1 <= n_out <= n:
        raise ValueError(f"n_out must be in [1, {n}], got {n_out}")
    if not 0 <= seed_index < n:
        raise ValueError(f"seed_index {seed_index} out of range")
    return _kernels.fps(pos, int(n_out), int(seed_index))


def search(method: str, positions: np.ndarray, centers, radius: float, m: int = 1) -> NeighborGraph:
    """Build an index and run one strategy; ``method`` in {multidir, knn, ball}.

    KNN and ball query use ``K = 16 * m`` so every strategy yields the same width.
    """
    index = SpatialIndex(positions, radius)
    k = NUM_BINS * m
    if method == "multidir":
        return multi_directional_search(index, None, centers, SearchConfig(radius, m))
    if method == "knn":
        return knn_search(index, None, centers, min(k, index.num_points))
    if method == "ball":
        return ball_query(index, None, centers, radius, k)
    raise ValueError(f"unknown search method {method!r}")
