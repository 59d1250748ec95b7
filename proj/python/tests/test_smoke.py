import json
import math

import numpy as np
import pytest

import crfreid


def logistic(x):
    return 1.0 / (1.0 + math.exp(-x))


def test_distances_and_kernel():
    a = np.array([0.0, 0.0])
    b = np.array([3.0, 4.0])
    assert crfreid.euclidean_distance(a, b) == pytest.approx(5.0)
    assert crfreid.gaussian_kernel(a, b, 2.0) == pytest.approx(math.exp(-25.0 / 2.0))
    h = np.array([0.5, 0.5])
    assert crfreid.bhattacharyya_distance(h, h) == pytest.approx(0.0, abs=1e-12)


def test_alpha_zero_gives_logistic_marginals():
    unary = np.array([0.0, 1.0, 2.5, 0.5])
    points = np.random.default_rng(0).normal(size=(4, 2))
    q, _, converged = crfreid.infer_marginals(unary, [(points, 1.0, 1.0)], 0.0)
    assert converged
    np.testing.assert_allclose(q, [logistic(-u) for u in unary], atol=1e-12)


def test_small_instance_matches_enumeration():
    rng = np.random.default_rng(1)
    unary = rng.uniform(0.0, 2.0, size=5)
    kernels = [(rng.normal(size=(5, 3)), 1.0, 1.0)]
    q, _, converged = crfreid.infer_marginals(unary, kernels, 0.0)
    exact = crfreid.exact_joint_enumeration(unary, kernels, 0.0)
    assert converged
    np.testing.assert_allclose(q, exact, atol=1e-12)


def test_lattice_filter_close_to_exact():
    rng = np.random.default_rng(2)
    pts = rng.normal(size=(300, 3))
    vals = rng.uniform(size=300)
    exact = crfreid.exact_filter(pts, vals, 1.0)
    approx = crfreid.lattice_filter(pts, vals, 1.0)
    assert np.mean(np.abs(approx - exact) / exact) < 0.05


def test_width_grid():
    np.testing.assert_allclose(crfreid.width_grid(1.0, 1, 1), [0.5, 1.0, 2.0])


def test_learned_weights_on_simplex():
    design = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
    gt = np.array([1.0, 0.0, 1.0, 0.0])
    w = crfreid.learn_kernel_weights(design, gt)
    np.testing.assert_allclose(w, [1.0, 0.0], atol=1e-6)
    p = crfreid.project_to_simplex(np.array([2.0, 0.0, -1.0]))
    assert p.sum() == pytest.approx(1.0)
    assert (p >= 0).all()


def test_max_f_score():
    assert crfreid.max_f_score(np.array([0.9, 0.1, 0.5]), [0]) == pytest.approx(1.0)


def test_errors_raise():
    with pytest.raises(crfreid.CrfreidError):
        crfreid.width_grid(-1.0, 1, 1)


def test_pipeline_round_trip(tmp_path):
    manifest = crfreid.synth(str(tmp_path / "data"), 7, persons=12, images_per_person=4)
    params = crfreid.train(str(manifest), str(tmp_path / "model"), 7, alpha_grid=[0.0, 0.1], folds=2)
    with open(params) as fh:
        model = json.load(fh)
    assert model["alpha"] in (0.0, 0.1)

    model_f, baseline_f = crfreid.evaluate(str(manifest), str(params), str(tmp_path / "eval"), 7, runs=2)
    assert 0.0 <= model_f <= 1.0
    assert 0.0 <= baseline_f <= 1.0
    assert (tmp_path / "eval").is_dir()
