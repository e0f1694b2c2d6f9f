import math

import numpy as np
import pytest

import splatdeform as sd


def sheet(n=12, h=0.1):
    ij = np.array([(i, j) for j in range(n) for i in range(n)], dtype=float)
    means = np.column_stack([ij[:, 0] * h, ij[:, 1] * h, np.zeros(len(ij))])
    quats = np.tile([1.0, 0.0, 0.0, 0.0], (len(means), 1))
    scales = np.tile([0.5 * h, 0.4 * h], (len(means), 1))
    opacity = np.full(len(means), 0.9)
    return means, quats, scales, opacity


@pytest.fixture(scope="module")
def scene():
    return sd.make_scene(*sheet(), config={"epsilon_factor": 0.005})


def test_scene_graph_and_laplacian(scene):
    assert scene.size == 144
    assert scene.edges.shape[1] == 2 and len(scene.edges) > 144
    assert np.all(scene.edges[:, 0] < scene.edges[:, 1])
    rows, cols, vals, mass = scene.laplacian()
    lap = np.zeros((scene.size, scene.size))
    np.add.at(lap, (rows, cols), vals)
    assert np.array_equal(lap, lap.T)
    assert np.abs(lap.sum(axis=1)).max() == 0.0
    assert np.all(mass > 0.0)


def test_deform_moves_the_handle(scene):
    d = [0.0, 0.0, 0.1]
    out = sd.deform(scene, {"handles": [{"index": 66, "displacement": d}]}, {"method": "arap"})
    moved = out["displaced"] - scene.means
    assert np.allclose(moved[66], d, atol=1e-12)
    assert out["report"]["method"] == "arap"
    assert out["means"].shape == (144, 3)
    assert np.allclose(np.linalg.norm(out["quaternions"], axis=1), 1.0)


def test_adapt_translation_is_rigid(scene):
    t = np.array([0.3, -0.2, 0.5])
    out = sd.adapt(scene, scene.means + t)
    ref = scene.splats()
    assert np.allclose(out["means"], ref["means"] + t, atol=1e-12)
    assert np.allclose(out["scales"], ref["scales"], atol=1e-9)


def test_self_consistent_pck_is_one(scene):
    rep = sd.evaluate(scene, {"handles": [{"index": 66, "displacement": [0, 0, 0.1]}]})
    assert rep["average"] == [1.0] * len(rep["thresholds"])


def test_pck3d_counts_within_tau():
    gt = np.zeros((4, 3))
    pred = np.array([[0, 0, 0], [0.05, 0, 0], [0.2, 0, 0], [0, 0, 0]], dtype=float)
    assert math.isclose(sd.pck3d(gt, pred, [0, 1, 2, -1], 0.1), 0.5)


def test_bad_handle_spec_raises(scene):
    with pytest.raises(sd.SplatDeformError):
        sd.deform(scene, {"handles": []})


def test_ply_round_trip(tmp_path):
    means, quats, scales, opacity = sheet(4)
    path = tmp_path / "s.ply"
    sd.save_splats(str(path), means, quats, scales, opacity)
    back = sd.load_scene(path, with_laplacian=False)
    assert np.allclose(back.means, means, atol=1e-6)
