"""Input-conditioned filter generation and the bias-free dynamic convolution."""
from dataclasses import dataclass

import numpy as np

from . import ops
from .autograd import Var, as_var
from .errors import ShapeError

N_FILTERS = 40
FILTER_SIZE = 3
GEN_KERNEL = 3
DECONV_KERNEL = 2


@dataclass
class GeneratorParams:
    gen_conv_weight: Var  # [Cg, 1, 3, 3]
    gen_conv_bias: Var  # [Cg]
    gen_deconv_weight: Var  # [Cg, 40, 2, 2]
    gen_deconv_bias: Var  # [40]

    def __post_init__(self):
        cg = self.gen_conv_weight.shape[0]
        expected = {
            "gen_conv_weight": (cg, 1, GEN_KERNEL, GEN_KERNEL),
            "gen_conv_bias": (cg,),
            "gen_deconv_weight": (cg, N_FILTERS, DECONV_KERNEL, DECONV_KERNEL),
            "gen_deconv_bias": (N_FILTERS,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ShapeError(f"{name} must have shape {shape}, got {getattr(self, name).shape}")

    @property
    def channels(self):
        return self.gen_conv_weight.shape[0]

    def named(self):
        return [(k, getattr(self, k)) for k in ("gen_conv_weight", "gen_conv_bias", "gen_deconv_weight", "gen_deconv_bias")]


def kaiming_uniform(rng, shape, fan_in):
    # uniform with std sqrt(2 / fan_in)
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(shape, -bound, bound)


def init_generator(rng, channels=20):
    return GeneratorParams(
        Var(kaiming_uniform(rng, (channels, 1, GEN_KERNEL, GEN_KERNEL), GEN_KERNEL * GEN_KERNEL), True),
        Var(np.zeros(channels), True),
        Var(kaiming_uniform(rng, (channels, N_FILTERS, DECONV_KERNEL, DECONV_KERNEL), channels * DECONV_KERNEL**2), True),
        Var(np.zeros(N_FILTERS), True),
    )


def _check_images(images):
    if images.value.ndim != 4 or images.shape[1:] != (1, 28, 28):
        raise ShapeError(f"expected single-channel 28x28 images [N,1,28,28], got {images.shape}")


def generate_filters(images, params):
    """Map each image to its own bank of 40 single-channel 3x3 kernels.

    conv 3x3 (padding 1) -> relu -> max-pool 14/14 -> [N, Cg, 2, 2]
    -> transposed conv 2x2 (stride 1) -> [N, 40, 3, 3] -> [N, 40, 1, 3, 3].
    """
    images = as_var(images)
    _check_images(images)
    h = ops.conv2d(images, params.gen_conv_weight, params.gen_conv_bias, padding=1)
    h = ops.relu(h)
    h = ops.maxpool2d(h, k=14, stride=14)
    h = ops.conv2d_transposed(h, params.gen_deconv_weight, params.gen_deconv_bias, stride=1)
    return ops.reshape(h, (images.shape[0], N_FILTERS, 1, FILTER_SIZE, FILTER_SIZE))


def dynamic_conv(images, filters):
    """Convolve every image with its own filter bank (no bias), then relu and 2x2 pooling."""
    images, filters = as_var(images), as_var(filters)
    _check_images(images)
    if filters.shape[1:] != (N_FILTERS, 1, FILTER_SIZE, FILTER_SIZE):
        raise ShapeError(f"expected filters [N,40,1,3,3], got {filters.shape}")
    if filters.shape[0] != images.shape[0]:
        raise ShapeError(f"batch mismatch: {images.shape[0]} images, {filters.shape[0]} filter banks")
    h = ops.conv2d_per_sample(images, filters, padding=1)
    return ops.maxpool2d(ops.relu(h), k=2, stride=2)


def context_conv(images, params):
    """Generator and dynamic convolution chained; ``images`` feeds both paths."""
    images = as_var(images)
    return dynamic_conv(images, generate_filters(images, params))
