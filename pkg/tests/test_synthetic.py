import numpy as np
import pytest

from segfusion import synthetic
from segfusion.core import Pose
from segfusion.geometry import compute_normal_map, compute_vertex_map, geometric_edge_map
from segfusion.segmentation import argmax_class_map, semantic_edge_map, upsample_nearest


def test_single_plane_constant_depth(intr):
    frames = synthetic.generate_synthetic_scene(
        synthetic.Scene(intr, synthetic.single_plane(1.0), synthetic.static_trajectory(1))
    )
    np.testing.assert_allclose(frames[0].depth, 1.0)
    assert (frames[0].classes == synthetic.WALL).all()


def test_noise_free_prediction_is_one_hot(intr):
    frames = synthetic.generate_synthetic_scene(
        synthetic.Scene(intr, synthetic.painting_on_wall(intr), synthetic.static_trajectory(1))
    )
    pred = frames[0].prediction
    assert pred.shape == (30, 40, 13)
    assert set(np.unique(pred)) == {0.0, 1.0}
    expected = synthetic.majority_cell_classes(frames[0].classes, 13, synthetic.WALL)
    np.testing.assert_array_equal(argmax_class_map(pred), expected)


def test_painting_has_semantic_but_no_geometric_edge(intr):
    f = synthetic.generate_synthetic_scene(
        synthetic.Scene(intr, synthetic.painting_on_wall(intr), synthetic.static_trajectory(1))
    )[0]
    v = compute_vertex_map(f.depth, intr)
    bg = geometric_edge_map(v, compute_normal_map(v))
    assert bg[1:-1, 1:-1].sum() == 0
    boundary = np.zeros(intr.shape, bool)
    boundary[:, :-1] |= f.classes[:, :-1] != f.classes[:, 1:]
    boundary[:-1] |= f.classes[:-1] != f.classes[1:]
    assert boundary.any()
    bs = semantic_edge_map(upsample_nearest(argmax_class_map(f.prediction)))
    assert bs[boundary].all()
    # the painting is cell aligned, so the ground-truth class image shows the same edges
    np.testing.assert_array_equal(bs, semantic_edge_map(f.classes))


def test_noise_rate(intr):
    scene = synthetic.Scene(intr, synthetic.single_plane(), synthetic.static_trajectory(20), noise=0.2, seed=5)
    frames = synthetic.generate_synthetic_scene(scene)
    wrong = np.mean([(argmax_class_map(f.prediction) != synthetic.WALL).mean() for f in frames])
    assert wrong == pytest.approx(0.2, abs=0.02)


def test_softness_keeps_distribution(intr):
    scene = synthetic.Scene(intr, synthetic.single_plane(), synthetic.static_trajectory(1), softness=0.1)
    pred = synthetic.generate_synthetic_scene(scene)[0].prediction
    np.testing.assert_allclose(pred.sum(-1), 1.0)
    np.testing.assert_allclose(pred[..., synthetic.WALL], 0.9 + 0.1 / 13)


def test_deterministic_given_seed(small_intr):
    mk = lambda: synthetic.generate_synthetic_scene(  # noqa: E731
        synthetic.Scene(small_intr, synthetic.random_room(np.random.default_rng(2)),
                        synthetic.jitter_trajectory(4, np.random.default_rng(3)), noise=0.3, seed=4)
    )  # fmt: skip
    a, b = mk(), mk()
    for fa, fb in zip(a, b):
        np.testing.assert_array_equal(fa.depth, fb.depth)
        np.testing.assert_array_equal(fa.prediction, fb.prediction)


def test_later_surface_wins_coplanar_tie(intr):
    surfaces = synthetic.painting_on_wall(intr)
    _, classes, objects = synthetic.raycast(surfaces, Pose.identity(), intr)
    assert classes[120, 160] == synthetic.PAINTING and objects[120, 160] == 1
    assert classes[0, 0] == synthetic.WALL


def test_box_occludes_wall(intr):
    surfaces = synthetic.single_plane(3.0) + synthetic.box((-0.2, -0.2, 1.0), (0.2, 0.2, 1.4), synthetic.TABLE, 5)
    depth, classes, objects = synthetic.raycast(surfaces, Pose.identity(), intr)
    assert depth[120, 160] == pytest.approx(1.0) and classes[120, 160] == synthetic.TABLE
    assert depth[0, 0] == pytest.approx(3.0)


def test_look_at_points_camera(intr):
    pose = synthetic.corner_view()
    target = np.array([0.8, 0.7, 2.5])
    cam = pose.inverse().transform(target[None])[0]
    np.testing.assert_allclose(cam[:2], 0.0, atol=1e-12)
    assert cam[2] == pytest.approx(2.0)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(surfaces=[]),
        dict(trajectory=[]),
        dict(timestamps=[0.0, 0.0]),
        dict(trajectory=[Pose.from_rotvec((0, np.pi, 0), (0, 0, 0))] * 2),  # looking away from the plane
    ],
)
def test_errors(intr, kwargs):
    base = dict(surfaces=synthetic.single_plane(), trajectory=synthetic.static_trajectory(2))
    base.update(kwargs)
    with pytest.raises(ValueError):
        synthetic.generate_synthetic_scene(synthetic.Scene(intr, **base))
