import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pointattn import oracles, spatial
from pointattn.cloud import PointCloud, seeded_rng
from pointattn.spatial import (
    NeighborGraph,
    SearchConfig,
    ball_query,
    bin_of,
    build_index,
    farthest_point_sampling,
    knn_search,
    multi_directional_search,
)

try:
    from pointattn import _search_ext  # noqa: F401
    BACKENDS = ["python", "compiled"]
except ImportError:
    BACKENDS = ["python"]


@pytest.fixture(params=BACKENDS, autouse=True)
def backend(request):
    before = spatial.BACKEND
    spatial.use_backend(request.param)
    yield request.param
    spatial.use_backend(before)


def md(pos, centers, r, m):
    return multi_directional_search(build_index(pos, r), None, centers, SearchConfig(r, m)).indices


# ---------------------------------------------------------------- index


def test_single_point_index():
    assert build_index(PointCloud(np.zeros((1, 3))), 0.5).num_cells == 1


def test_cube_corners_share_a_cell():
    corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], float)
    idx = build_index(corners, 2.0)
    assert idx.num_cells == 1
    assert sorted(idx.cell_points(0)) == list(range(8))


def test_range_query_matches_scan(rng):
    pos = rng.uniform(0, 3, size=(1000, 3))
    idx = build_index(pos, 0.4)
    for c in rng.uniform(0, 3, size=(50, 3)):
        np.testing.assert_array_equal(idx.range_query(c, 0.4), oracles.range_scan(pos, c, 0.4))


# ---------------------------------------------------------------- bins


def test_bin_conventions():
    assert bin_of([1, 0, 0]) == 0
    assert bin_of([0, 1, -0.1]) == 10
    assert bin_of([0, 0, 0]) == 0
    assert bin_of([0, 0, -1]) == 8
    assert bin_of([1, 1, 0]) == 1  # 45 degrees opens sector 1
    assert bin_of([1, -1e-12, 0]) == 7


def test_bins_match_spherical_rederivation(rng):
    v = rng.normal(size=(10000, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    want = [oracles.bin_from_angles(o) for o in v]
    np.testing.assert_array_equal(spatial.bins_of(v), want)


# ---------------------------------------------------------------- multi-directional


def test_isolated_center_pads_with_itself():
    pos = np.array([[0.0, 0, 0], [5.0, 5, 5]])
    np.testing.assert_array_equal(md(pos, [0], 1.0, 1), np.zeros((1, 16), int))


def test_one_point_per_bin():
    r = 1.0
    pts = [[0.0, 0.0, 0.0]]
    for hemi, z in ((0, 0.2), (1, -0.2)):
        for k in range(8):
            a = np.deg2rad(45 * k + 22.5)
            pts.append([0.45 * np.cos(a), 0.45 * np.sin(a), z])
    pos = np.array(pts)
    np.testing.assert_array_equal(md(pos, [0], r, 1)[0], np.arange(1, 17))


def test_random_cloud_matches_oracle(rng):
    pos = rng.uniform(0, 2, size=(200, 3))
    np.testing.assert_array_equal(md(pos, np.arange(200), 0.5, 1),
                                  oracles.multi_directional(pos, np.arange(200), 0.5, 1))


def test_neighbors_respect_radius_and_bin(rng):
    pos = rng.uniform(0, 1, size=(150, 3))
    r, m = 0.3, 2
    out = md(pos, np.arange(150), r, m)
    assert out.shape == (150, 32)
    for c, row in enumerate(out):
        for slot, j in enumerate(row):
            if j == c:
                continue
            off = pos[j] - pos[c]
            assert off @ off <= r * r
            assert bin_of(off) == slot // m


def test_ties_break_to_lower_index():
    # two points at identical offset distance within the same bin
    pos = np.array([[0.0, 0, 0], [0.3, 0.1, 0.1], [0.3, 0.1, 0.1]])
    assert md(pos, [0], 1.0, 1)[0, 0] == 1


# ---------------------------------------------------------------- knn / ball / fps


def test_knn_self_and_colinear():
    pos = np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]])
    idx = build_index(pos, 1.0)
    np.testing.assert_array_equal(knn_search(idx, None, np.arange(4), 1).indices[:, 0], np.arange(4))
    np.testing.assert_array_equal(knn_search(idx, None, [0], 2).indices[0], [0, 1])
    with pytest.raises(ValueError):
        knn_search(idx, None, [0], 5)


def test_knn_matches_sort_oracle(rng):
    pos = rng.uniform(0, 2, size=(500, 3))
    got = knn_search(build_index(pos, 0.2), None, np.arange(500), 16).indices
    np.testing.assert_array_equal(got, oracles.knn(pos, np.arange(500), 16))


def test_ball_padding_rules():
    pos = np.array([[0.0, 0, 0], [0.1, 0, 0], [0, 0.1, 0], [0, 0, 0.1], [5, 5, 5]])
    idx = build_index(pos, 0.5)
    row = ball_query(idx, None, [0], 0.5, 16).indices[0]
    np.testing.assert_array_equal(row, [1, 2, 3] + [1] * 13)
    np.testing.assert_array_equal(ball_query(idx, None, [4], 0.5, 8).indices[0], [4] * 8)


def test_ball_membership_matches_scan(rng):
    pos = rng.uniform(0, 1, size=(300, 3))
    got = ball_query(build_index(pos, 0.2), None, np.arange(300), 0.2, 16).indices
    for c, row in enumerate(got):
        inside = [j for j in oracles.range_scan(pos, pos[c], 0.2) if j != c][:16]
        assert set(row) == set(inside or [c])


def test_fps_cases(rng):
    line = np.column_stack([np.arange(10.0), np.zeros(10), np.zeros(10)])
    np.testing.assert_array_equal(farthest_point_sampling(line, 3, 0), [0, 9, 4])
    pos = rng.normal(size=(40, 3))
    assert sorted(farthest_point_sampling(pos, 40, 3)) == list(range(40))
    np.testing.assert_array_equal(farthest_point_sampling(pos, 10, 3), oracles.fps(pos, 10, 3))
    with pytest.raises(ValueError):
        farthest_point_sampling(pos, 41)


def test_graph_validation():
    with pytest.raises(ValueError):
        NeighborGraph(np.array([[0, 3]]), 3)
    with pytest.raises(ValueError):
        SearchConfig(0.0, 1)


def test_search_width_is_16m(rng):
    pos = rng.uniform(0, 1, size=(64, 3))
    for method in ("multidir", "knn", "ball"):
        assert spatial.search(method, pos, np.arange(10), 0.3, 2).width == 32


# ---------------------------------------------------------------- properties


clouds = arrays(np.float64, st.tuples(st.integers(1, 60), st.just(3)),
                elements=st.floats(-2, 2, allow_nan=False, width=32))


@settings(max_examples=60, deadline=None)
@given(clouds, st.floats(0.05, 1.5), st.integers(1, 3))
def test_property_multidir_oracle(pos, r, m):
    c = np.arange(len(pos))
    np.testing.assert_array_equal(md(pos, c, r, m), oracles.multi_directional(pos, c, r, m, bin_fn=bin_of))


@settings(max_examples=60, deadline=None)
@given(clouds, st.floats(0.05, 1.5), st.integers(1, 20))
def test_property_ball_and_knn(pos, r, k):
    c = np.arange(len(pos))
    idx = build_index(pos, r)
    np.testing.assert_array_equal(ball_query(idx, None, c, r, k).indices, oracles.ball(pos, c, r, k))
    kk = min(k, len(pos))
    np.testing.assert_array_equal(knn_search(idx, None, c, kk).indices, oracles.knn(pos, c, kk))


@settings(max_examples=40, deadline=None)
@given(clouds, st.data())
def test_property_fps(pos, data):
    n = len(pos)
    n_out = data.draw(st.integers(1, n))
    seed = data.draw(st.integers(0, n - 1))
    np.testing.assert_array_equal(farthest_point_sampling(pos, n_out, seed), oracles.fps(pos, n_out, seed))


def test_backends_agree():
    if len(BACKENDS) < 2:
        pytest.skip("compiled kernels not built")
    rng = seeded_rng(5)
    pos = rng.uniform(0, 2, size=(400, 3))
    outs = {}
    for b in BACKENDS:
        spatial.use_backend(b)
        idx = build_index(pos, 0.3)
        c = np.arange(400)
        outs[b] = (md(pos, c, 0.3, 2), knn_search(idx, None, c, 16).indices,
                   ball_query(idx, None, c, 0.3, 16).indices, farthest_point_sampling(pos, 100, 7))
    for a, b in zip(*outs.values()):
        np.testing.assert_array_equal(a, b)
