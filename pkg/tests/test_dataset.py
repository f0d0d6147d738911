import struct

import numpy as np
import pytest

from segfusion import synthetic
from segfusion.core import CameraIntrinsics, Pose
from segfusion.dataset import (
    SFPG_MAGIC,
    FrameEntry,
    ManifestError,
    PredictionGridError,
    load_prediction_grid,
    load_sequence,
    read_depth,
    read_trajectory,
    write_depth,
    write_manifest,
    write_prediction_grid,
    write_synthetic_sequence,
    write_trajectory,
)


def sfpg(h, w, n, values):
    return SFPG_MAGIC + struct.pack("<3I", h, w, n) + np.asarray(values, "<f4").tobytes()


@pytest.fixture
def tiny():
    return CameraIntrinsics.default(32, 24)


def make_sequence(tmp_path, intr, n=3, with_pred=True, poses=True):
    entries = []
    for i in range(n):
        d = tmp_path / f"d{i}.png"
        write_depth(d, np.full(intr.shape, 1.0 + 0.1 * i))
        p = None
        if with_pred:
            p = tmp_path / f"p{i}.sfpg"
            write_prediction_grid(p, np.full(intr.grid_shape + (3,), 1 / 3))
        pose = Pose.from_rotvec((0, 0.01 * i, 0), (0.1 * i, 0, 0)) if poses else None
        entries.append(FrameEntry(0.5 * i, d, None, p, pose))
    path = tmp_path / "manifest.txt"
    write_manifest(path, intr, entries)
    return path


class TestManifest:
    def test_three_frames_in_order(self, tmp_path, tiny):
        seq = load_sequence(make_sequence(tmp_path, tiny))
        frames = list(seq.frames())
        assert len(seq) == 3 and [f.index for f in frames] == [0, 1, 2]
        assert [f.timestamp for f in frames] == [0.0, 0.5, 1.0]
        np.testing.assert_allclose(frames[2].depth, 1.2)
        assert frames[1].pose.distance_to(Pose.from_rotvec((0, 0.01, 0), (0.1, 0, 0))) < 1e-12
        assert seq.intrinsics == tiny

    def test_missing_prediction_is_geometric_only(self, tmp_path, tiny):
        frames = list(load_sequence(make_sequence(tmp_path, tiny, with_pred=False, poses=False)).frames())
        assert all(f.geometric_only and f.pose is None for f in frames)

    def test_depth_scale(self, tmp_path):
        from PIL import Image

        p = tmp_path / "d.png"
        Image.fromarray(np.full((8, 8), 5000, np.uint16)).save(p)
        np.testing.assert_allclose(read_depth(p, 1 / 5000), 1.0)

    @pytest.mark.parametrize(
        "text",
        [
            "0.0 d0.png - -\n",  # no intrinsics
            "intrinsics 10 10 4 4 32 24\n0.0 missing.png - -\n",
            "intrinsics 10 10 4 4 32 24\n0.0 d0.png -\n",
            "intrinsics 10 10 4 4 32 24\n1.0 d0.png - -\n0.5 d0.png - -\n",
            "intrinsics 10 10 4 4 30 24\n",
            "intrinsics 10 10 4 4 32 24\ndepth_scale -1\n",
        ],
    )
    def test_malformed(self, tmp_path, tiny, text):
        write_depth(tmp_path / "d0.png", np.ones(tiny.shape))
        path = tmp_path / "m.txt"
        path.write_text(text)
        with pytest.raises(ManifestError):
            load_sequence(path)

    def test_dimension_mismatch(self, tmp_path, tiny):
        write_depth(tmp_path / "d0.png", np.ones((16, 16)))
        path = tmp_path / "m.txt"
        path.write_text("intrinsics 10 10 4 4 32 24\n0.0 d0.png - -\n")
        with pytest.raises(ManifestError):
            list(load_sequence(path).frames())

    def test_unreadable_manifest(self, tmp_path):
        with pytest.raises(ManifestError):
            load_sequence(tmp_path / "nope.txt")

    def test_depth_round_trip(self, tmp_path, rng):
        d = np.round(rng.uniform(0.3, 7.0, size=(24, 32)) * 5000) / 5000
        d[0, 0] = 0
        write_depth(tmp_path / "x.png", d)
        np.testing.assert_allclose(read_depth(tmp_path / "x.png"), d, atol=1e-12)


class TestPredictionGrid:
    def test_paper_resolution(self, tmp_path, rng):
        grid = rng.random((30, 40, 13))
        grid /= grid.sum(-1, keepdims=True)
        write_prediction_grid(tmp_path / "g", grid)
        out = load_prediction_grid(tmp_path / "g")
        assert out.shape == (30, 40, 13) and out.shape[0] * out.shape[1] == 1200
        np.testing.assert_allclose(out.sum(-1), 1.0, atol=1e-12)
        np.testing.assert_allclose(out, grid, atol=1e-6)

    def test_uniform(self, tmp_path):
        (tmp_path / "g").write_bytes(sfpg(2, 3, 4, np.full(24, 0.25)))
        np.testing.assert_allclose(load_prediction_grid(tmp_path / "g"), 0.25)

    def test_class_fastest_layout(self, tmp_path):
        vals = [1, 0, 0, 1]  # cell (0,0) -> class 0, cell (0,1) -> class 1
        (tmp_path / "g").write_bytes(sfpg(1, 2, 2, vals))
        np.testing.assert_array_equal(load_prediction_grid(tmp_path / "g"), [[[1, 0], [0, 1]]])

    @pytest.mark.parametrize(
        "blob",
        [
            sfpg(2, 3, 4, np.full(24, 0.25))[:-4],  # truncated
            b"XXXX" + sfpg(1, 1, 2, [0.5, 0.5])[4:],  # bad magic
            sfpg(1, 1, 2, [np.nan, 0.5]),
            sfpg(1, 1, 2, [0.6, 0.5]),  # sums to 1.1
            sfpg(1, 1, 2, [1.5, -0.5]),
            b"SFPG\x01",
        ],
    )
    def test_rejects(self, tmp_path, blob):
        (tmp_path / "g").write_bytes(blob)
        with pytest.raises(PredictionGridError):
            load_prediction_grid(tmp_path / "g")

    def test_renormalises_small_drift(self, tmp_path):
        (tmp_path / "g").write_bytes(sfpg(1, 1, 2, [0.5004, 0.5]))
        assert load_prediction_grid(tmp_path / "g").sum() == pytest.approx(1.0, abs=1e-12)


def test_trajectory_round_trip(tmp_path, rng):
    poses = [(i * 0.1, Pose.from_rotvec(rng.normal(size=3), rng.normal(size=3))) for i in range(5)]
    write_trajectory(tmp_path / "t.txt", poses)
    back = read_trajectory(tmp_path / "t.txt")
    for (s0, p0), (s1, p1) in zip(poses, back):
        assert s0 == pytest.approx(s1)
        np.testing.assert_allclose(p1.matrix(), p0.matrix(), atol=1e-12)
    (tmp_path / "bad.txt").write_text("0 1 2 3\n")
    with pytest.raises(ManifestError):
        read_trajectory(tmp_path / "bad.txt")


def test_synthetic_sequence_round_trip(tmp_path, small_intr):
    scene = synthetic.Scene(small_intr, synthetic.painting_on_wall(small_intr), synthetic.static_trajectory(3), noise=0.1, seed=3)
    frames = synthetic.generate_synthetic_scene(scene)
    seq = load_sequence(write_synthetic_sequence(frames, small_intr, tmp_path))
    for f, g in zip(frames, seq.frames(n_classes=13)):
        np.testing.assert_allclose(g.depth, f.depth, atol=1e-4)
        np.testing.assert_allclose(g.prediction, f.prediction, atol=1e-6)
        assert g.pose.distance_to(f.pose) < 1e-12
    assert len(read_trajectory(tmp_path / "groundtruth.txt")) == 3
