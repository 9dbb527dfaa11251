import numpy as np
import pytest

from ctxconv import ops
from ctxconv.autograd import Var
from ctxconv.checks import Suite
from ctxconv.errors import ShapeError
from ctxconv.filters import GeneratorParams, context_conv, dynamic_conv, generate_filters, init_generator
from ctxconv.gradcheck import gradcheck
from ctxconv.tensor import Rng


def degenerate_generator(bias, channels=20):
    return GeneratorParams(
        Var(np.zeros((channels, 1, 3, 3)), True), Var(np.zeros(channels), True),
        Var(np.zeros((channels, 40, 2, 2)), True), Var(np.asarray(bias, dtype=float), True),
    )


def test_degenerate_generator_gives_constant_filters(rng):
    b = rng.uniform((40,), -1, 1)
    f = generate_filters(rng.random((3, 1, 28, 28)), degenerate_generator(b)).value
    assert f.shape == (3, 40, 1, 3, 3)
    np.testing.assert_array_equal(f, np.broadcast_to(b[None, :, None, None, None], f.shape))


def test_distinct_images_get_distinct_filters(rng):
    gen = init_generator(rng)
    f = generate_filters(rng.random((2, 1, 28, 28)), gen).value
    assert np.abs(f[0] - f[1]).max() > 0


def test_shape_trace(rng):
    gen = init_generator(rng, channels=20)
    x = Var(rng.random((2, 1, 28, 28)))
    h = ops.conv2d(x, gen.gen_conv_weight, gen.gen_conv_bias, padding=1)
    assert h.shape == (2, 20, 28, 28)
    h = ops.maxpool2d(ops.relu(h), 14, 14)
    assert h.shape == (2, 20, 2, 2)
    h = ops.conv2d_transposed(h, gen.gen_deconv_weight, gen.gen_deconv_bias)
    assert h.shape == (2, 40, 3, 3)
    assert generate_filters(x, gen).shape == (2, 40, 1, 3, 3)
    assert dynamic_conv(x, generate_filters(x, gen)).shape == (2, 40, 14, 14)


def test_generator_rejects_wrong_input(rng):
    gen = init_generator(rng)
    with pytest.raises(ShapeError):
        generate_filters(np.zeros((1, 1, 27, 27)), gen)
    with pytest.raises(ShapeError):
        generate_filters(np.zeros((1, 3, 28, 28)), gen)


def test_generator_params_shapes_enforced():
    with pytest.raises(ShapeError):
        GeneratorParams(Var(np.zeros((4, 1, 3, 3))), Var(np.zeros(4)), Var(np.zeros((4, 32, 2, 2))), Var(np.zeros(40)))


def test_identity_filter_passes_image_through(rng):
    x = rng.random((2, 1, 28, 28))
    filters = rng.uniform((2, 40, 1, 3, 3), -1, 1)
    filters[:, 0] = 0.0
    filters[:, 0, 0, 1, 1] = 1.0
    pre = ops.conv2d_per_sample(x, filters, padding=1).value
    np.testing.assert_array_equal(pre[:, 0], x[:, 0])


def test_constant_filters_reduce_to_standard_conv(rng):
    x = rng.random((4, 1, 28, 28))
    bank = rng.uniform((40, 1, 3, 3), -1, 1)
    out = dynamic_conv(x, np.broadcast_to(bank, (4, 40, 1, 3, 3)).copy()).value
    ref = ops.maxpool2d(ops.relu(ops.conv2d(x, bank, padding=1)), 2, 2).value
    assert np.abs(out - ref).max() < 1e-12


def test_degenerate_module_equals_bias_free_conv_twenty_inputs(rng):
    for _ in range(20):
        b = rng.uniform((40,), -1, 1)
        x = rng.random((1, 1, 28, 28))
        out = context_conv(x, degenerate_generator(b)).value
        kernels = np.broadcast_to(b[:, None, None, None], (40, 1, 3, 3))
        ref = ops.maxpool2d(ops.relu(ops.conv2d(x, kernels, padding=1)), 2, 2).value
        assert np.abs(out - ref).max() < 1e-12


def test_dynamic_conv_batch_mismatch(rng):
    with pytest.raises(ShapeError):
        dynamic_conv(rng.random((2, 1, 28, 28)), np.zeros((3, 40, 1, 3, 3)))


def test_generate_filters_is_pure(rng):
    gen = init_generator(rng)
    x = rng.random((3, 1, 28, 28))
    assert generate_filters(x, gen).value.tobytes() == generate_filters(x.copy(), gen).value.tobytes()


def test_both_gradient_paths_reach_the_image(rng):
    gen = init_generator(rng, channels=4)
    x = Var(rng.random((1, 1, 28, 28)), True)
    ops.total(context_conv(x, gen)).backward()
    both = x.grad.copy()

    x.grad = None
    frozen = Var(generate_filters(Var(x.value), gen).value)
    ops.total(dynamic_conv(x, frozen)).backward()
    image_only = x.grad.copy()

    # the generator path contributes a non-zero share of the image gradient
    assert np.abs(both - image_only).max() > 1e-6
    for v in (gen.gen_conv_weight, gen.gen_conv_bias, gen.gen_deconv_weight, gen.gen_deconv_bias):
        assert v.grad is not None and np.abs(v.grad).max() > 0


def test_double_path_gradcheck():
    suite = Suite(seed=3)
    for i in range(2):
        f, inputs = suite.case_dynamic_conv_double_path(i)
        assert gradcheck(f, inputs, h=1e-5, tol=1e-4).passed
