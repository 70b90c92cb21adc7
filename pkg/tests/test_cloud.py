import numpy as np
import pytest

from pointattn.cloud import (
    PALETTE,
    CloudFormatError,
    LabelPrediction,
    PointCloud,
    load_cloud,
    save_cloud,
    save_labeled_cloud,
    seeded_rng,
)


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_three_line_xyz(tmp_path):
    c = load_cloud(write(tmp_path, "a.xyz", "0 0 0\n1 0 0\n0 1 0\n"))
    assert c.num_points == 3
    assert c.colors is None and c.labels is None
    np.testing.assert_array_equal(c.positions[1], [1, 0, 0])


def test_xyzrgbl_line(tmp_path):
    c = load_cloud(write(tmp_path, "a.xyzrgbl", "1.5 2.0 0.3 0.5 0.5 0.5 4\n"))
    np.testing.assert_array_equal(c.positions[0], [1.5, 2.0, 0.3])
    np.testing.assert_array_equal(c.colors[0], [0.5, 0.5, 0.5])
    assert c.labels[0] == 4


def test_short_line_names_line_number(tmp_path):
    with pytest.raises(CloudFormatError, match="line 1"):
        load_cloud(write(tmp_path, "a.xyz", "1 2\n"))


def test_error_line_counts_comments(tmp_path):
    with pytest.raises(CloudFormatError, match="line 3"):
        load_cloud(write(tmp_path, "a.xyz", "# header\n0 0 0\n0 0 x\n"))


def test_explicit_format_overrides_extension(tmp_path):
    c = load_cloud(write(tmp_path, "a.txt", "0 0 0 1 1 1\n"), format="xyzrgb")
    assert c.colors.shape == (1, 3)


def test_bad_inputs(tmp_path):
    with pytest.raises(CloudFormatError):
        load_cloud(write(tmp_path, "a.dat", "0 0 0\n"))
    with pytest.raises(CloudFormatError, match="empty"):
        load_cloud(write(tmp_path, "e.xyz", "\n# nothing\n"))
    with pytest.raises(CloudFormatError, match="non-finite"):
        load_cloud(write(tmp_path, "n.xyz", "0 nan 0\n"))
    with pytest.raises(CloudFormatError, match="label"):
        load_cloud(write(tmp_path, "l.xyzrgbl", "0 0 0 0 0 0 1.5\n"))


def test_single_point_palette_line(tmp_path):
    p = tmp_path / "o.xyzrgbl"
    save_labeled_cloud(PointCloud(np.zeros((1, 3))), [0], p)
    lines = p.read_text().splitlines()
    assert len(lines) == 1
    vals = lines[0].split()
    np.testing.assert_allclose([float(v) for v in vals[3:6]], PALETTE[0], atol=1e-6)
    assert vals[6] == "0"


def test_labeled_round_trip(tmp_path, rng):
    cloud = PointCloud(rng.uniform(-10, 10, size=(300, 3)))
    labels = rng.integers(0, len(PALETTE), 300)
    p = tmp_path / "r.xyzrgbl"
    save_labeled_cloud(cloud, labels, p)
    back = load_cloud(p)
    np.testing.assert_array_equal(back.labels, labels)
    assert np.abs(back.positions - cloud.positions).max() <= 5e-7


def test_label_length_mismatch(tmp_path):
    with pytest.raises(ValueError, match="label count"):
        save_labeled_cloud(PointCloud(np.zeros((3, 3))), [0, 1], tmp_path / "x.xyzrgbl")


def test_save_cloud_formats(tmp_path, rng):
    c = PointCloud(rng.normal(size=(5, 3)), rng.uniform(size=(5, 3)))
    save_cloud(c, tmp_path / "c.xyzrgb")
    np.testing.assert_allclose(load_cloud(tmp_path / "c.xyzrgb").colors, c.colors, atol=1e-6)


def test_cloud_validation():
    with pytest.raises(ValueError):
        PointCloud(np.zeros((3, 2)))
    with pytest.raises(ValueError):
        PointCloud(np.array([[0.0, np.inf, 0.0]]))
    with pytest.raises(ValueError):
        PointCloud(np.zeros((3, 3)), labels=np.array([0, 1]))


def test_subset_and_features(rng):
    c = PointCloud(rng.normal(size=(10, 3)), rng.uniform(size=(10, 3)), np.arange(10))
    s = c.subset([4, 2])
    np.testing.assert_array_equal(s.labels, [4, 2])
    assert c.features(3).shape == (10, 3)
    assert c.features(6).shape == (10, 6)
    assert not c.positions.flags.writeable


def test_label_prediction():
    p = LabelPrediction(np.array([[0.0, np.log(3.0)], [2.0, 0.0]]))
    np.testing.assert_array_equal(p.labels, [1, 0])
    np.testing.assert_allclose(p.confidence[0], 0.75)
    np.testing.assert_allclose(p.probabilities.sum(axis=1), 1.0)


def test_seeded_rng():
    a = seeded_rng(42).random(100)
    np.testing.assert_array_equal(a, seeded_rng(42).random(100))
    assert not np.array_equal(seeded_rng(1).random(100), seeded_rng(2).random(100))
    z = seeded_rng(0).random(100)
    assert np.ptp(z) > 0
