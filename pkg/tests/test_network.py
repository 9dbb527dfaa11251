import logging

import numpy as np
import pytest

from ctxconv import ops
from ctxconv.autograd import Var
from ctxconv.data import Dataset
from ctxconv.errors import ShapeError, TrainingError
from ctxconv.filters import context_conv
from ctxconv.network import (ModelParams, branch_forward, error_rate, evaluate, export_filter_vectors,
                             forward_instances, head_forward, init_params, invariant_features, model_forward,
                             nearest_centroid_accuracy, predict, read_filter_csv, train_step, write_filter_csv)
from ctxconv.optim import AdamState
from ctxconv.tensor import Rng
from ctxconv.transforms import EXACT, ROTATION, TransformSet


@pytest.fixture(scope="module")
def params():
    return init_params(Rng(21))


@pytest.fixture
def images(rng):
    return rng.random((2, 1, 28, 28))


def test_branch_shape_trace(params, images):
    x = Var(images)
    h = context_conv(x, params.generator)
    assert h.shape == (2, 40, 14, 14)
    h = ops.maxpool2d(ops.relu(ops.conv2d(h, params.conv80_w, params.conv80_b, padding=1)), 2, 2)
    assert h.shape == (2, 80, 7, 7)
    assert branch_forward(x, params).shape == (2, 160, 3, 3)
    assert model_forward(images, TransformSet.rotations(4), params).shape == (2, 10)


def test_zero_image_zero_bias_gives_zero_features(params):
    out = branch_forward(Var(np.zeros((2, 1, 28, 28))), params)
    assert not out.value.any()


def test_branch_forward_deterministic(params, images):
    a = branch_forward(Var(images), params).value
    b = branch_forward(Var(images.copy()), params).value
    assert a.tobytes() == b.tobytes()


def test_single_transform_reduces_to_plain_network(params, images):
    logits = model_forward(images, TransformSet(ROTATION, (0.0,)), params).value
    plain = head_forward(branch_forward(Var(images), params), params).value
    np.testing.assert_array_equal(logits, plain)


def test_exact_right_angle_invariance(params, images):
    phi = TransformSet.rotations(4, EXACT)
    a = model_forward(images, phi, params).value
    b = model_forward(np.rot90(images, 1, axes=(2, 3)), phi, params).value
    assert np.abs(a - b).max() < 1e-5


def test_duplicate_transform_is_idempotent(params, images):
    a = forward_instances([images, images], params).value
    b = forward_instances([images], params).value
    np.testing.assert_array_equal(a, b)


def test_instance_order_does_not_matter(params, images):
    inst = TransformSet.rotations(4).apply(images)
    a = forward_instances(inst, params).value
    b = forward_instances(inst[::-1], params).value
    assert a.tobytes() == b.tobytes()


def test_max_dominance(params, images):
    inst = TransformSet.rotations(3, "bilinear").apply(images)
    g = invariant_features(inst, params).value
    branches = np.stack([branch_forward(Var(x), params).value for x in inst])
    assert (g[None] >= branches).all()
    assert ((g[None] == branches).any(axis=0)).all()


def test_parameter_count_independent_of_transform_count(params):
    expected = (20 * 9 + 20 + 20 * 40 * 4 + 40 + 80 * 40 * 9 + 80 + 160 * 80 * 9 + 160
                + 1440 * 512 + 512 + 512 * 10 + 10)
    assert params.count() == expected
    images = np.zeros((1, 1, 28, 28))
    for n in (1, 4, 8):
        model_forward(images, TransformSet.rotations(n), params)
        assert params.count() == expected


def test_empty_transform_set_rejected(params, images):
    with pytest.raises(ValueError):
        model_forward(images, None, params)
    with pytest.raises(ValueError):
        forward_instances([], params)


def test_model_rejects_bad_images(params):
    with pytest.raises(ShapeError):
        model_forward(np.zeros((1, 28, 28)), TransformSet.rotations(1), params)


def small_params(seed=0):
    return init_params(Rng(seed), gen_channels=4, dense_width=32)


def test_zero_learning_rate_keeps_params(rng):
    p = small_params()
    before = [v.value.copy() for v in p.vars()]
    x, y = rng.random((8, 1, 28, 28)), np.arange(8) % 10
    phi = TransformSet.rotations(2)
    losses = [train_step(x, y, phi, p, AdamState(lr=0.0), Rng(0), dropout_rate=0.0)[0] for _ in range(3)]
    assert losses[0] == losses[1] == losses[2]
    train_step(x, y, phi, p, AdamState(lr=0.0), Rng(0), dropout_rate=0.5)
    for a, v in zip(before, p.vars()):
        np.testing.assert_array_equal(a, v.value)


def test_train_step_is_deterministic(rng):
    x, y = rng.random((8, 1, 28, 28)), np.arange(8) % 10
    phi = TransformSet.rotations(2)

    def run():
        p, adam, r = small_params(), AdamState(), Rng(5)
        for _ in range(3):
            train_step(x, y, phi, p, adam, r)
        return b"".join(v.value.tobytes() for v in p.vars())

    assert run() == run()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_raises(rng):
    p = small_params()
    p.out_b.value = np.array([np.inf] + [0.0] * 9)
    with pytest.raises(TrainingError, match="non-finite"):
        train_step(rng.random((2, 1, 28, 28)), np.array([1, 2]), TransformSet.rotations(1), p, AdamState(), Rng(0))


def test_error_rate_values(rng):
    labels = np.arange(10_000) % 10
    assert error_rate(labels, labels) == 0.0
    guesses = (rng.random(10_000) * 10).astype(int)
    assert abs(error_rate(guesses, labels) - 90.0) < 3.0
    with pytest.raises(ValueError):
        error_rate([], [])


def test_evaluate_matches_predict(rng):
    p = small_params()
    ds = Dataset(rng.random((12, 1, 28, 28)), np.arange(12) % 10)
    phi = TransformSet.rotations(2)
    preds, err = evaluate(ds, phi, p)
    np.testing.assert_array_equal(preds, predict(ds.images, phi, p, batch_size=5))
    assert err == 100.0 * np.mean(preds != ds.labels)
    with pytest.raises(ValueError):
        evaluate(Dataset(np.zeros((0, 1, 28, 28)), np.zeros(0)), phi, p)


def test_export_filter_vectors_and_csv(tmp_path, rng):
    p = small_params()
    ds = Dataset(rng.random((30, 1, 28, 28)), np.arange(30) % 10)
    labels, vectors = export_filter_vectors(ds, p, 1, Rng(0))
    assert vectors.shape == (10, 360) and sorted(labels) == list(range(10))
    write_filter_csv(tmp_path / "f.csv", labels, vectors)
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0].split(",") == ["label"] + [f"v{i}" for i in range(1, 361)]
    assert all(len(line.split(",")) == 361 for line in lines)
    l2, v2 = read_filter_csv(tmp_path / "f.csv")
    np.testing.assert_array_equal(l2, labels)
    np.testing.assert_allclose(v2, vectors, rtol=1e-8)


def test_export_short_class_takes_all_and_warns(rng, caplog):
    p = small_params()
    ds = Dataset(rng.random((12, 1, 28, 28)), np.array([0] * 3 + list(range(1, 10))))
    with caplog.at_level(logging.WARNING):
        labels, _ = export_filter_vectors(ds, p, 2, Rng(0))
    assert np.bincount(labels).tolist() == [2] + [1] * 9
    assert "only 1 samples" in caplog.text


def brute_force_loo_centroid(labels, vectors):
    correct = 0
    for i in range(len(labels)):
        best, best_d = None, np.inf
        for c in np.unique(labels):
            members = [j for j in range(len(labels)) if labels[j] == c and j != i]
            if not members:
                continue
            d = np.sum((vectors[i] - vectors[members].mean(axis=0)) ** 2)
            if d < best_d:
                best, best_d = c, d
        correct += best == labels[i]
    return 100.0 * correct / len(labels)


def test_nearest_centroid_matches_brute_force(rng):
    labels = np.repeat(np.arange(4), 6)
    vectors = rng.random((24, 5)) + labels[:, None] * 0.3
    assert nearest_centroid_accuracy(labels, vectors) == pytest.approx(brute_force_loo_centroid(labels, vectors))


def test_nearest_centroid_separable_clusters(rng):
    labels = np.repeat(np.arange(10), 20)
    vectors = rng.random((200, 8)) * 0.1 + np.eye(10)[labels][:, :8]
    assert nearest_centroid_accuracy(labels, vectors) >= 80.0


def test_params_roundtrip_through_arrays():
    p = small_params()
    q = ModelParams.from_arrays(p.arrays())
    assert [k for k, _ in p.named()] == [k for k, _ in q.named()]
    for a, b in zip(p.vars(), q.vars()):
        np.testing.assert_array_equal(a.value, b.value)
