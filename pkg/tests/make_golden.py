"""Regenerate tests/data/set_abstraction_golden.npz (run only after verifying a change)."""

import os

import numpy as np

from pointattn import autodiff as ad
from pointattn.cloud import seeded_rng
from pointattn.lae import LAEConvParams
from pointattn.network import set_abstraction

HERE = os.path.dirname(__file__)


def fixture():
    rng = seeded_rng(2024)
    pos = rng.uniform(0, 1, size=(128, 3))
    feats = rng.normal(size=(128, 5))
    store = ad.ParameterStore()
    p = LAEConvParams.create(store, "g", 5, 8, rng)
    p.b.value[...] = rng.normal(0, 0.1, 8)
    return pos, feats, p


def run():
    pos, feats, p = fixture()
    with ad.no_grad():
        centers, out = set_abstraction(pos, feats, 32, 0.3, 1, p)
    return centers, out.value


if __name__ == "__main__":
    c, f = run()
    np.savez(os.path.join(HERE, "data", "set_abstraction_golden.npz"), centers=c, features=f)
    print("wrote golden", c.shape, f.shape)
