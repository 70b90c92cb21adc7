"""Synthetic labeled scenes: a floor plane with spheres and boxes on it."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .cloud import PointCloud, seeded_rng

FLOOR, SPHERE, BOX = 0, 1, 2


@dataclass(frozen=True)
class Floor:
    label: int = FLOOR


@dataclass(frozen=True)
class Sphere:
    center: Tuple[float, float, float]
    radius: float
    label: int = SPHERE

    @property
    def area(self):
        return 4.0 * math.pi * self.radius**2


@dataclass(frozen=True)
class Box:
    """Axis-aligned box standing on ``base_z``; its bottom face is not sampled."""

    center_xy: Tuple[float, float]
    size: Tuple[float, float, float]
    base_z: float = 0.0
    label: int = BOX

    @property
    def faces(self):
        sx, sy, sz = self.size
        return (sx * sy, sx * sz, sx * sz, sy * sz, sy * sz)

    @property
    def area(self):
        return sum(self.faces)


@dataclass(frozen=True)
class SceneRecipe:
    extent: Tuple[float, float] = (4.0, 4.0)
    primitives: tuple = field(default_factory=tuple)
    density: float = 60.0  # points per square meter of surface
    noise: float = 0.005  # coordinate noise std, meters

    def __post_init__(self):
        if self.density <= 0 or self.noise < 0:
            raise ValueError("density must be > 0 and noise >= 0")


def _sample_floor(rng, extent, density):
    n = rng.poisson(extent[0] * extent[1] * density)
    xy = rng.uniform((0.0, 0.0), extent, size=(n, 2))
    return np.column_stack([xy, np.zeros(n)])


def _sample_sphere(rng, s: Sphere, density):
    n = rng.poisson(s.area * density)
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return np.asarray(s.center) + s.radius * v


def _sample_box(rng, b: Box, density):
    n = rng.poisson(b.area * density)
    sx, sy, sz = b.size
    cx, cy = b.center_xy
    x0, y0, z0 = cx - sx / 2, cy - sy / 2, b.base_z
    faces = np.asarray(b.faces)
    which = rng.choice(len(faces), size=n, p=faces / faces.sum())
    u, v = rng.uniform(size=(2, n))
    pts = np.empty((n, 3))
    top, front, back, left, right = (which == k for k in range(5))
    pts[top] = np.column_stack([x0 + u[top] * sx, y0 + v[top] * sy, np.full(top.sum(), z0 + sz)])
    pts[front] = np.column_stack([x0 + u[front] * sx, np.full(front.sum(), y0), z0 + v[front] * sz])
    pts[back] = np.column_stack([x0 + u[back] * sx, np.full(back.sum(), y0 + sy), z0 + v[back] * sz])
    pts[left] = np.column_stack([np.full(left.sum(), x0), y0 + u[left] * sy, z0 + v[left] * sz])
    pts[right] = np.column_stack([np.full(right.sum(), x0 + sx), y0 + u[right] * sy, z0 + v[right] * sz])
    return pts


def generate_scene(recipe: SceneRecipe, seed: int) -> PointCloud:
    """Sample every primitive's surface at ``recipe.density`` and add Gaussian noise."""
    if not recipe.primitives:
        raise ValueError("scene recipe has no primitives")
    rng = seeded_rng(seed)
    parts, labels = [], []
    for p in recipe.primitives:
        if isinstance(p, Floor):
            pts = _sample_floor(rng, recipe.extent, recipe.density)
        elif isinstance(p, Sphere):
            pts = _sample_sphere(rng, p, recipe.density)
        elif isinstance(p, Box):
            pts = _sample_box(rng, p, recipe.density)
        else:
            raise TypeError(f"unknown primitive {p!r}")
        parts.append(pts)
        labels.append(np.full(len(pts), p.label, dtype=np.int64))
    pos = np.vstack(parts)
    if recipe.noise > 0:
        pos = pos + rng.normal(0.0, recipe.noise, size=pos.shape)
    return PointCloud(pos, labels=np.concatenate(labels))


def random_recipe(rng, extent=(4.0, 4.0), density=60.0, noise=0.005,
                  spheres=(1, 3), boxes=(1, 3), gap=0.1, attempts=50) -> SceneRecipe:
    """Floor plus a random number of resting spheres and boxes.

    Objects do not interpenetrate: footprints (circles bounding each object's
    xy extent) keep at least ``gap`` apart; an object that finds no free spot
    in ``attempts`` tries is dropped.
    """
    prims: List = [Floor()]
    placed = []  # (cx, cy, footprint radius)
    margin = 0.6
    hi = np.asarray(extent) - margin

    def place(radius):
        for _ in range(attempts):
            cx, cy = rng.uniform(margin, hi)
            if all(math.hypot(cx - x, cy - y) >= radius + r + gap for x, y, r in placed):
                placed.append((cx, cy, radius))
                return float(cx), float(cy)
        return None

    for _ in range(int(rng.integers(spheres[0], spheres[1] + 1))):
        r = float(rng.uniform(0.2, 0.5))
        spot = place(r)
        if spot:
            prims.append(Sphere((spot[0], spot[1], r), r))
    for _ in range(int(rng.integers(boxes[0], boxes[1] + 1))):
        sx, sy = rng.uniform(0.3, 0.8, size=2)
        sz = float(rng.uniform(0.3, 1.0))
        spot = place(0.5 * math.hypot(sx, sy))
        if spot:
            prims.append(Box(spot, (float(sx), float(sy), sz)))
    return SceneRecipe(tuple(extent), tuple(prims), density, noise)


def make_corpus(n_scenes: int, seed: int, **kw) -> List[PointCloud]:
    rng = seeded_rng(seed)
    seeds = rng.integers(0, 2**63 - 1, size=n_scenes)
    return [generate_scene(random_recipe(rng, **kw), int(s)) for s in seeds]


# ---------------------------------------------------------------- recipe files

_FLOAT_KEYS = {"density", "noise"}


def parse_recipe(path) -> dict:
    """Read a recipe file.

    Keys: ``extent = x y``, ``density``, ``noise``, ``floor = label``,
    ``sphere = cx cy cz radius [label]``, ``box = cx cy sx sy sz [base_z [label]]``
    (repeatable), and ``scenes = n`` / ``seed = s`` for a random corpus when no
    primitives are listed. Returns ``{"recipe": SceneRecipe | None, "scenes": n, "seed": s}``.
    """
    extent, density, noise = (4.0, 4.0), 60.0, 0.005
    prims, scenes, seed = [], 1, 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.split("#", 1)[0].strip()
            if not s:
                continue
            if "=" not in s:
                raise ValueError(f"{path}: line {lineno}: expected key = value")
            k, v = (t.strip() for t in s.split("=", 1))
            vals = v.split()
            try:
                if k == "extent":
                    extent = (float(vals[0]), float(vals[1]))
                elif k in _FLOAT_KEYS:
                    if k == "density":
                        density = float(v)
                    else:
                        noise = float(v)
                elif k == "floor":
                    prims.append(Floor(int(v) if v else FLOOR))
                elif k == "sphere":
                    f = [float(x) for x in vals[:4]]
                    lab = int(vals[4]) if len(vals) > 4 else SPHERE
                    prims.append(Sphere((f[0], f[1], f[2]), f[3], lab))
                elif k == "box":
                    f = [float(x) for x in vals[:5]]
                    base = float(vals[5]) if len(vals) > 5 else 0.0
                    lab = int(vals[6]) if len(vals) > 6 else BOX
                    prims.append(Box((f[0], f[1]), (f[2], f[3], f[4]), base, lab))
                elif k == "scenes":
                    scenes = int(v)
                elif k == "seed":
                    seed = int(v)
                else:
                    raise ValueError(f"{path}: line {lineno}: unknown recipe key {k!r}")
            except (IndexError, ValueError) as exc:
                if "unknown recipe key" in str(exc):
                    raise
                raise ValueError(f"{path}: line {lineno}: bad value for {k!r}") from None
    recipe = SceneRecipe(extent, tuple(prims), density, noise) if prims else None
    return {"recipe": recipe, "scenes": scenes, "seed": seed, "extent": extent,
            "density": density, "noise": noise}


def scenes_from_recipe_file(path) -> List[PointCloud]:
    info = parse_recipe(path)
    if info["recipe"] is not None:
        return [generate_scene(info["recipe"], info["seed"] + i) for i in range(info["scenes"])]
    return make_corpus(info["scenes"], info["seed"], extent=info["extent"],
                       density=info["density"], noise=info["noise"])
