"""Property checks shared by ``pointattn selfcheck`` and the acceptance tests.

Every check takes a trial count and returns a :class:`CheckResult`; the
reference side of each comparison comes from :mod:`pointattn.oracles`.
"""

from __future__ import annotations

import os
import tempfile
import time
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from . import oracles, spatial
from .attention import PSAParams, attention_map, psa_forward
from .cloud import PointCloud, load_cloud, save_labeled_cloud, seeded_rng
from .lae import LAEConvParams, aggregate, edge_coefficients, lae_conv_forward, normalize_coefficients
from .network import PRESETS, forward_features, init_parameters, prepare_geometry
from .pipeline import compute_metrics, resolve_overlaps

GRAD_TOL = 1e-4
FD_STEP = 1e-6
# central differences straddle a relu kink closer than the step; such draws are re-drawn
KINK_MARGIN = 10 * FD_STEP


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str = ""
    seconds: float = 0.0


def grad_check(build, leaves, rng, h=FD_STEP):
    """Relative L2 error between backprop and central differences.

    ``build()`` maps the leaf tensors to an output tensor; the scalar checked
    is ``sum(out * R)`` for a fixed random ``R``.
    """
    for t in leaves:
        t.grad = np.zeros_like(t.value)
    out = build()
    R = rng.normal(size=out.shape)
    ad.backward(out, seed=R)
    analytic = np.concatenate([t.grad.ravel() for t in leaves])

    def f():
        with ad.no_grad():
            return float((build().value * R).sum())

    numeric = np.concatenate([oracles.finite_difference_grad(f, t.value, h).ravel() for t in leaves])
    scale = max(np.linalg.norm(numeric), np.linalg.norm(analytic))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(numeric - analytic) / scale)


def _leaf(rng, *shape, scale=1.0):
    return ad.Tensor(rng.normal(0, scale, size=shape), requires_grad=True)


def _timed(name, fn):
    t0 = time.perf_counter()
    ok, detail = fn()
    return CheckResult(name, bool(ok), detail, time.perf_counter() - t0)


# ---------------------------------------------------------------- gradients


def _random_graph(rng, n, k, n_src=None):
    return rng.integers(0, n_src or n, size=(n, k))


def gradient_cases():
    """name -> builder(rng) returning (build fn, leaves)."""

    def matmul(rng):
        a, b = _leaf(rng, 7, 5), _leaf(rng, 5, 3)
        return (lambda: ad.matmul(a, b)), [a, b]

    def softmax(rng):
        x = _leaf(rng, 5, 8)
        return (lambda: ad.row_softmax(x)), [x]

    def mlp(rng):
        x, w, b = _leaf(rng, 6, 4), _leaf(rng, 4, 5), _leaf(rng, 5, scale=0.5)
        return (lambda: ad.mlp_layer(x, w, b, "relu")), [x, w, b]

    def xent(rng):
        z = _leaf(rng, 10, 5)
        t = rng.integers(0, 5, 10)
        cw = rng.uniform(0.5, 2.0, 5)
        return (lambda: ad.cross_entropy(z, t, cw)), [z]

    def edges(rng):
        n, k, c, cl = 12, 16, 3, 6
        h, W, a = _leaf(rng, n, c), _leaf(rng, c, cl), _leaf(rng, cl)
        g = _random_graph(rng, n, k)
        return (lambda: edge_coefficients(h, g, W, a)), [h, W, a]

    def aggr(rng):
        n, k, c, cl = 12, 16, 3, 6
        h, W = _leaf(rng, n, c), _leaf(rng, c, cl)
        e = _leaf(rng, n, k)
        g = _random_graph(rng, n, k)
        return (lambda: aggregate(ad.row_softmax(e), h, g, W)), [e, h, W]

    def lae(rng):
        n, k, c, co = 32, 16, 3, 5
        store = ad.ParameterStore()
        p = LAEConvParams.create(store, "l", c, co, rng)
        p.b.value[...] = rng.normal(0, 0.3, co)
        h = _leaf(rng, n, c)
        g = _random_graph(rng, n, k)
        return (lambda: lae_conv_forward(h, g, p)), [h] + list(store.params.values())

    def psa(rng):
        n, c = 16, 6
        store = ad.ParameterStore()
        p = PSAParams.create(store, "p", c, 3, rng)
        p.gamma.value[...] = 0.7
        p.A_b.value[...] = rng.normal(0, 0.3, p.A_b.shape)
        p.D_b.value[...] = rng.normal(0, 0.3, p.D_b.shape)
        x = _leaf(rng, n, c)
        return (lambda: psa_forward(x, p)), [x] + list(store.params.values())

    def network(rng):
        cfg = PRESETS["micro"]
        store = init_parameters(cfg, int(rng.integers(0, 2**31)))
        for name in store:
            v = store[name].value
            if name.endswith("gamma"):
                v[...] = rng.uniform(0.5, 1.0)
            elif v.ndim == 1 and not name.endswith(".a"):
                v[...] = rng.normal(0, 0.1, v.shape)
        pos = rng.uniform(0, 2, size=(cfg.n_points[0], 3))
        geo = prepare_geometry(pos, cfg)
        x = ad.Tensor(pos.copy(), requires_grad=True)
        return (lambda: forward_features(geo, x, cfg, store)), [x] + list(store.params.values())

    return {
        "matmul": matmul,
        "row_softmax": softmax,
        "mlp_layer": mlp,
        "cross_entropy": xent,
        "edge_coefficients": edges,
        "aggregate": aggr,
        "lae_conv_forward": lae,
        "psa_forward": psa,
        "micro_network": network,
    }


def kink_margin(build) -> float:
    """Distance of the nearest relu / leaky_relu input from its kink."""
    with ad.no_grad(), ad.kink_probe() as probe:
        build()
    return probe.margin


def check_gradient(name, seeds=20, base_seed=0):
    """``seeds`` accepted draws; a draw with a kink inside ``KINK_MARGIN`` is skipped."""
    builder = gradient_cases()[name]

    def run():
        worst, done, skipped, s = 0.0, 0, 0, 0
        while done < seeds and s < 3 * seeds:
            rng = seeded_rng(base_seed + 1000 * s + 7)
            s += 1
            build, leaves = builder(rng)
            if kink_margin(build) < KINK_MARGIN:
                skipped += 1
                continue
            worst = max(worst, grad_check(build, leaves, rng))
            done += 1
        ok = worst <= GRAD_TOL and done == seeds
        return ok, f"worst rel err {worst:.2e} over {done} seeds ({skipped} skipped at a kink)"

    return _timed(f"gradient:{name}", run)


# ---------------------------------------------------------------- search


def _random_cloud(rng, n_max=256):
    n = int(rng.integers(1, n_max + 1))
    scale = rng.uniform(0.5, 2.0)
    return rng.uniform(0, scale, size=(n, 3))


def check_bins(trials=10000, seed=0):
    def run():
        rng = seeded_rng(seed)
        v = rng.normal(size=(trials, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        got = spatial.bins_of(v)
        want = np.array([oracles.bin_from_angles(o) for o in v])
        bad = int((got != want).sum())
        return bad == 0, f"{bad} mismatches in {trials} offsets"

    return _timed("search:bin_of", run)


def check_search(method, clouds=1000, seed=0):
    def run():
        rng = seeded_rng(seed + hash(method) % 997)
        bad, geom_bad = 0, 0
        for _ in range(clouds):
            pos = _random_cloud(rng)
            n = len(pos)
            r = float(rng.uniform(0.1, 0.6))
            centers = rng.choice(n, size=min(n, 32), replace=False)
            if method == "multidir":
                m = int(rng.integers(1, 4))
                idx = spatial.build_index(pos, r)
                got = spatial.multi_directional_search(idx, None, centers, spatial.SearchConfig(r, m)).indices
                want = oracles.multi_directional(pos, centers, r, m)
                for row, c in zip(got, centers):
                    for slot, j in enumerate(row):
                        if j == c:
                            continue
                        off = pos[j] - pos[c]
                        if float(off @ off) > r * r or spatial.bin_of(off) != slot // m:
                            geom_bad += 1
            elif method == "knn":
                k = int(min(n, rng.integers(1, 17)))
                idx = spatial.build_index(pos, r)
                got = spatial.knn_search(idx, None, centers, k).indices
                want = oracles.knn(pos, centers, k)
            elif method == "ball":
                k = int(rng.integers(1, 17))
                idx = spatial.build_index(pos, r)
                got = spatial.ball_query(idx, None, centers, r, k).indices
                want = oracles.ball(pos, centers, r, k)
            elif method == "fps":
                n_out = max(1, n // 4)
                s0 = int(rng.integers(0, n))
                got = spatial.farthest_point_sampling(pos, n_out, s0)
                want = oracles.fps(pos, n_out, s0)
            else:
                raise ValueError(method)
            if got.shape != want.shape or not np.array_equal(got, want):
                bad += 1
        detail = f"{bad} mismatching clouds of {clouds}"
        if method == "multidir":
            detail += f"; {geom_bad} neighbors violate radius/bin"
        return bad == 0 and geom_bad == 0, detail

    return _timed(f"search:{method}", run)


# ---------------------------------------------------------------- layer invariants


def _lae_instance(rng, n=24, k=16, c=3, co=6):
    store = ad.ParameterStore()
    p = LAEConvParams.create(store, "l", c, co, rng)
    p.b.value[...] = rng.normal(0, 0.3, co)
    h = rng.normal(size=(n, c))
    g = _random_graph(rng, n, k)
    return p, h, g


def check_alpha_rows(trials=200, seed=0):
    def run():
        rng = seeded_rng(seed)
        worst = 0.0
        for _ in range(trials):
            p, h, g = _lae_instance(rng)
            with ad.no_grad():
                a = normalize_coefficients(edge_coefficients(h, g, p.W, p.a)).value
            worst = max(worst, float(np.abs(a.sum(axis=1) - 1).max()))
            if a.min() <= 0 or a.max() >= 1:
                return False, "alpha entry outside (0, 1)"
        return worst <= 1e-9, f"max |row sum - 1| = {worst:.1e}"

    return _timed("normalization:alpha_rows", run)


def check_attention_rows(trials=200, seed=0):
    def run():
        rng = seeded_rng(seed)
        worst = 0.0
        for _ in range(trials):
            n, c = int(rng.integers(1, 40)), 6
            store = ad.ParameterStore()
            p = PSAParams.create(store, "p", c, 3, rng)
            with ad.no_grad():
                s = attention_map(rng.normal(size=(n, c)), p).value
            worst = max(worst, float(np.abs(s.sum(axis=1) - 1).max()))
            if s.min() <= 0 or s.max() > 1 or (n > 1 and s.max() >= 1):
                return False, "attention entry outside (0, 1)"
        return worst <= 1e-9, f"max |row sum - 1| = {worst:.1e}"

    return _timed("normalization:attention_rows", run)


def check_onehot_reduction(trials=50, seed=0):
    def run():
        rng = seeded_rng(seed)
        for _ in range(trials):
            p, h, g = _lae_instance(rng)
            pick = rng.integers(0, g.shape[1], size=g.shape[0])
            alpha = np.zeros(g.shape)
            alpha[np.arange(g.shape[0]), pick] = 1.0
            with ad.no_grad():
                out = lae_conv_forward(h, g, p, alpha_override=alpha).value
                chosen = h[g[np.arange(g.shape[0]), pick]]
                want = ad.mlp_layer(ad.matmul(chosen, p.W), p.T, p.b, "relu").value
            if not np.array_equal(out, want):
                return False, f"max diff {np.abs(out - want).max():.1e}"
        return True, f"{trials} instances exact"

    return _timed("reduction:one_hot_alpha", run)


def check_uniform_reduction(trials=50, seed=0):
    def run():
        rng = seeded_rng(seed)
        worst = 0.0
        for _ in range(trials):
            p, h, g = _lae_instance(rng)
            k = g.shape[1]
            with ad.no_grad():
                agg = aggregate(np.full(g.shape, 1.0 / k), h, g, p.W).value
            want = np.array([np.mean([h[j] @ p.W.value for j in row], axis=0) for row in g])
            worst = max(worst, float(np.abs(agg - want).max()))
        return worst <= 1e-12, f"max diff {worst:.1e}"

    return _timed("reduction:uniform_alpha", run)


def check_gamma_zero(trials=50, seed=0):
    def run():
        rng = seeded_rng(seed)
        for _ in range(trials):
            n, c = int(rng.integers(1, 40)), 6
            store = ad.ParameterStore()
            p = PSAParams.create(store, "p", c, 3, rng)
            x = rng.normal(size=(n, c))
            with ad.no_grad():
                out = psa_forward(x, p).value
            if not np.array_equal(out, x):
                return False, "gamma=0 output differs from input"
        return True, f"{trials} instances bit-exact"

    return _timed("reduction:gamma_zero_identity", run)


def check_lae_equivariance(trials=100, seed=0):
    def run():
        rng = seeded_rng(seed)
        worst_pt, worst_slot = 0.0, 0.0
        p, h, g = _lae_instance(rng, n=32)
        with ad.no_grad():
            base = lae_conv_forward(h, g, p).value
        n = len(h)
        for _ in range(trials):
            perm = rng.permutation(n)
            inv = np.argsort(perm)
            # new row r is old row perm[r]; old index j becomes inv[j]
            with ad.no_grad():
                out = lae_conv_forward(h[perm], inv[g[perm]], p).value
            worst_pt = max(worst_pt, float(np.abs(out - base[perm]).max()))
            slots = np.argsort(rng.random(g.shape), axis=1)
            with ad.no_grad():
                out2 = lae_conv_forward(h, np.take_along_axis(g, slots, axis=1), p).value
            worst_slot = max(worst_slot, float(np.abs(out2 - base).max()))
        ok = worst_pt <= 1e-12 and worst_slot <= 1e-12
        return ok, f"point-perm diff {worst_pt:.1e}, slot-perm diff {worst_slot:.1e}"

    return _timed("equivariance:lae_conv", run)


def check_psa_equivariance(trials=100, seed=0):
    def run():
        rng = seeded_rng(seed)
        n, c = 32, 6
        store = ad.ParameterStore()
        p = PSAParams.create(store, "p", c, 3, rng)
        p.gamma.value[...] = 0.8
        x = rng.normal(size=(n, c))
        with ad.no_grad():
            base = psa_forward(x, p).value
        worst = 0.0
        for _ in range(trials):
            perm = rng.permutation(n)
            with ad.no_grad():
                out = psa_forward(x[perm], p).value
            worst = max(worst, float(np.abs(out - base[perm]).max()))
        return worst <= 1e-12, f"max diff {worst:.1e}"

    return _timed("equivariance:psa", run)


def check_edge_oracle(trials=20, seed=0):
    def run():
        rng = seeded_rng(seed)
        worst = 0.0
        for _ in range(trials):
            p, h, g = _lae_instance(rng, n=10, k=8)
            with ad.no_grad():
                e = edge_coefficients(h, g, p.W, p.a).value
                a = normalize_coefficients(e).value
                agg = aggregate(a, h, g, p.W).value
            we = oracles.edge_coefficients(h, h, g, p.W.value, p.a.value)
            wa = oracles.softmax_rows(we)
            wg = oracles.aggregate(wa, h, g, p.W.value)
            worst = max(worst, float(np.abs(e - we).max()), float(np.abs(agg - wg).max()))
        return worst <= 1e-12, f"max diff vs scalar loops {worst:.1e}"

    return _timed("oracle:lae_components", run)


# ---------------------------------------------------------------- persistence / pipeline


def check_checkpoint_roundtrip(seed=0):
    def run():
        from .network import network_forward
        from .autodiff import load_checkpoint, save_checkpoint

        cfg = PRESETS["micro"]
        store = init_parameters(cfg, seed)
        rng = seeded_rng(seed)
        for name in store:
            store[name].value[...] += rng.normal(0, 0.1, store[name].shape)
        cloud = PointCloud(rng.uniform(0, 2, size=(cfg.n_points[0], 3)))
        before = network_forward(cloud, cfg, store).logits
        with tempfile.TemporaryDirectory() as d:
            path = os.path.join(d, "m.ckpt")
            save_checkpoint(store, path)
            fresh = init_parameters(cfg, seed + 1)
            fresh.load_state(load_checkpoint(path))
        after = network_forward(cloud, cfg, fresh).logits
        return np.array_equal(before, after), "logits bit-identical" if np.array_equal(before, after) else "logits differ"

    return _timed("persistence:checkpoint", run)


def check_cloud_roundtrip(trials=5, seed=0):
    def run():
        rng = seeded_rng(seed)
        with tempfile.TemporaryDirectory() as d:
            for t in range(trials):
                n = int(rng.integers(1, 2000))
                cloud = PointCloud(rng.uniform(-50, 50, size=(n, 3)))
                labels = rng.integers(0, 21, n)
                path = os.path.join(d, f"c{t}.xyzrgbl")
                save_labeled_cloud(cloud, labels, path)
                back = load_cloud(path)
                if not np.array_equal(back.labels, labels):
                    return False, "labels changed"
                if np.abs(back.positions - cloud.positions).max() > 5e-7:
                    return False, "coordinates changed beyond 6 decimals"
        return True, f"{trials} files"

    return _timed("persistence:labeled_cloud", run)


def check_metrics(trials=50, seed=0):
    def run():
        rng = seeded_rng(seed)
        for _ in range(trials):
            n = int(rng.integers(1, 2000))
            c = int(rng.integers(1, 8))
            p, t = rng.integers(0, c, n), rng.integers(0, c, n)
            oa, miou, iou = compute_metrics(p, t, c)
            woa, wmiou, wiou = oracles.metrics(p, t, c)
            if abs(oa - woa) > 1e-9 or abs(miou - wmiou) > 1e-9:
                return False, "metric mismatch"
        return True, f"{trials} random label vectors"

    return _timed("metrics:confusion_recount", run)


def overlap_fixture():
    """Two overlapping 4-point chunks over a 6-point scene with hand-set logits."""
    chunks = [np.array([0, 1, 2, 3]), np.array([2, 3, 4, 5])]
    logits = [
        np.array([[3.0, 0.0, 0.0], [0.0, 2.0, 0.0], [2.2, 0.0, 0.0], [0.0, 0.0, 0.4]]),
        np.array([[0.0, 0.5, 0.0], [0.0, 0.0, 3.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
    ]
    return 6, chunks, logits


def check_overlap_rule():
    def run():
        n, chunks, logits = overlap_fixture()
        pred = resolve_overlaps(n, chunks, logits, 3)
        want_l, want_c = oracles.resolve_overlaps(n, chunks, logits)
        got = [int(v) for v in pred.labels]
        ok = got == list(want_l) and np.array_equal(pred.confidence, np.array(want_c))
        return ok, f"labels {got} vs oracle {list(want_l)}"

    return _timed("pipeline:overlap_rule", run)


def all_checks(quick=True):
    """Callables producing every property result once."""
    n_clouds = 60 if quick else 1000
    seeds = 2 if quick else 20
    grads = [(lambda nm=nm: check_gradient(nm, seeds)) for nm in gradient_cases()]
    return grads + [
        lambda: check_bins(2000 if quick else 10000),
        lambda: check_search("multidir", n_clouds),
        lambda: check_search("knn", n_clouds),
        lambda: check_search("ball", n_clouds),
        lambda: check_search("fps", n_clouds // 2),
        lambda: check_edge_oracle(5),
        check_alpha_rows,
        check_attention_rows,
        check_onehot_reduction,
        check_uniform_reduction,
        check_gamma_zero,
        check_lae_equivariance,
        check_psa_equivariance,
        check_checkpoint_roundtrip,
        check_cloud_roundtrip,
        check_metrics,
        check_overlap_rule,
    ]
