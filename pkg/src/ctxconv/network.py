"""The transformation-invariant network: shared branches, element-wise max, dense head."""
import csv
import logging
from dataclasses import dataclass

import numpy as np

from . import ops
from .autograd import Var
from .errors import ShapeError, TrainingError
from .filters import GeneratorParams, context_conv, generate_filters, init_generator, kaiming_uniform
from .optim import adam_step
from .transforms import TransformSet

log = logging.getLogger(__name__)

N_CLASSES = 10
FEATURE_SHAPE = (160, 3, 3)


@dataclass
class ModelParams:
    """The single parameter set shared by every branch."""

    generator: GeneratorParams
    conv80_w: Var
    conv80_b: Var
    conv160_w: Var
    conv160_b: Var
    dense_w: Var
    dense_b: Var
    out_w: Var
    out_b: Var

    HEAD = ("conv80_w", "conv80_b", "conv160_w", "conv160_b", "dense_w", "dense_b", "out_w", "out_b")

    def named(self):
        return self.generator.named() + [(k, getattr(self, k)) for k in self.HEAD]

    def vars(self):
        return [v for _, v in self.named()]

    def count(self):
        return sum(v.value.size for v in self.vars())

    def zero_grad(self):
        for v in self.vars():
            v.grad = None

    def arrays(self):
        return {k: v.value for k, v in self.named()}

    @classmethod
    def from_arrays(cls, arrays):
        def var(k):
            return Var(np.array(arrays[k], dtype=np.float64), True)

        gen = GeneratorParams(*(var(k) for k in ("gen_conv_weight", "gen_conv_bias", "gen_deconv_weight", "gen_deconv_bias")))
        return cls(gen, *(var(k) for k in cls.HEAD))


def init_params(rng, gen_channels=20, dense_width=512):
    """Kaiming-uniform weights, zero biases."""
    gen = init_generator(rng, gen_channels)
    flat = int(np.prod(FEATURE_SHAPE))

    def w(shape, fan_in):
        return Var(kaiming_uniform(rng, shape, fan_in), True)

    def zeros(n):
        return Var(np.zeros(n), True)

    return ModelParams(
        gen,
        w((80, 40, 3, 3), 40 * 9), zeros(80),
        w((160, 80, 3, 3), 80 * 9), zeros(160),
        w((flat, dense_width), flat), zeros(dense_width),
        w((dense_width, N_CLASSES), dense_width), zeros(N_CLASSES),
    )


def branch_forward(images, params, rng=None, training=False):
    """One Siamese branch: ``[N,1,28,28] -> [N,160,3,3]``."""
    h = context_conv(images, params.generator)
    h = ops.maxpool2d(ops.relu(ops.conv2d(h, params.conv80_w, params.conv80_b, padding=1)), 2, 2)
    h = ops.maxpool2d(ops.relu(ops.conv2d(h, params.conv160_w, params.conv160_b, padding=1)), 2, 2)
    return h


def head_forward(features, params, rng=None, training=False, dropout_rate=0.5):
    n = features.shape[0]
    h = ops.reshape(features, (n, -1))
    h = ops.relu(ops.dense(h, params.dense_w, params.dense_b))
    h = ops.dropout(h, dropout_rate, rng, training)
    return ops.dense(h, params.out_w, params.out_b)


def invariant_features(instances, params, rng=None, training=False):
    """Element-wise max over the branch outputs of each transformed instance batch.

    All instances run through one stacked branch pass, so every branch
    evaluates the very same parameters.
    """
    if not instances:
        raise ValueError("need at least one transformed instance")
    n = instances[0].shape[0]
    stacked = np.concatenate([np.asarray(x, dtype=np.float64) for x in instances])
    feats = branch_forward(Var(stacked), params, rng, training)
    return ops.stacked_branch_max(feats, len(instances)) if len(instances) > 1 else feats


def forward_instances(instances, params, rng=None, training=False, dropout_rate=0.5):
    g = invariant_features(instances, params, rng, training)
    return head_forward(g, params, rng, training, dropout_rate)


def model_forward(images, phi, params, rng=None, training=False, dropout_rate=0.5):
    """Logits ``[N, 10]`` for a batch ``[N,1,28,28]`` under transform set ``phi``."""
    if phi is None or len(phi) == 0:
        raise ValueError("transform set must be non-empty")
    images = images.value if isinstance(images, Var) else np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[1:] != (1, 28, 28):
        raise ShapeError(f"expected [N,1,28,28] images, got {images.shape}")
    return forward_instances(phi.apply(images), params, rng, training, dropout_rate)


def _param_summary(params):
    return {k: (float(np.abs(v.value).max()), bool(np.isfinite(v.value).all())) for k, v in params.named()}


def train_step(images, labels, phi, params, adam, rng, dropout_rate=0.5):
    """One Adam step on a batch. Returns the pre-step loss and the training-mode logits."""
    params.zero_grad()
    logits = model_forward(images, phi, params, rng, training=True, dropout_rate=dropout_rate)
    loss = ops.softmax_cross_entropy(logits, labels)
    value = float(loss.value)
    if not np.isfinite(value):
        raise TrainingError(f"non-finite loss {value}; parameter max-abs/finite: {_param_summary(params)}")
    loss.backward()
    pv = params.vars()
    adam_step(pv, [p.grad for p in pv], adam)
    return value, logits.value


def predict(images, phi, params, batch_size=256):
    images = np.asarray(images, dtype=np.float64)
    out = []
    for i in range(0, len(images), batch_size):
        logits = model_forward(images[i:i + batch_size], phi, params, training=False)
        out.append(logits.value.argmax(axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def error_rate(predictions, labels):
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("cannot compute an error rate on an empty dataset")
    return 100.0 * float(np.mean(np.asarray(predictions) != labels))


def evaluate(dataset, phi, params, batch_size=256):
    """Predicted classes and error percentage (inference mode)."""
    if len(dataset.labels) == 0:
        raise ValueError("empty dataset")
    preds = predict(dataset.images, phi, params, batch_size)
    return preds, error_rate(preds, dataset.labels)


def filter_vectors(images, params, batch_size=256):
    """Flattened 360-value filter banks of untransformed images."""
    out = []
    for i in range(0, len(images), batch_size):
        f = generate_filters(Var(images[i:i + batch_size]), params.generator)
        out.append(f.value.reshape(f.shape[0], -1))
    return np.concatenate(out)


def export_filter_vectors(dataset, params, count_per_class, rng):
    """Pick up to ``count_per_class`` random images per class and return ``(labels, vectors)``."""
    if count_per_class < 1:
        raise ValueError("count_per_class must be >= 1")
    picked = []
    for c in range(N_CLASSES):
        idx = np.flatnonzero(dataset.labels == c)
        if len(idx) < count_per_class:
            log.warning("class %d has only %d samples, exporting all of them", c, len(idx))
        picked.append(idx[rng.permutation(len(idx))[:count_per_class]])
    picked = np.concatenate(picked)
    return dataset.labels[picked].copy(), filter_vectors(dataset.images[picked], params)


def write_filter_csv(path, labels, vectors):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"v{i + 1}" for i in range(vectors.shape[1])])
        for label, row in zip(labels, vectors):
            writer.writerow([int(label)] + [f"{x:.9g}" for x in row])


def read_filter_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0].astype(np.int64), data[:, 1:]


def nearest_centroid_accuracy(labels, vectors):
    """Leave-one-out nearest-class-centroid accuracy in percent.

    Each vector is classified against centroids where its own class centroid
    excludes the vector itself.
    """
    labels = np.asarray(labels)
    classes = np.unique(labels)
    sums = np.stack([vectors[labels == c].sum(axis=0) for c in classes])
    counts = np.array([(labels == c).sum() for c in classes], dtype=np.float64)
    centroids = sums / counts[:, None]
    d = ((vectors[:, None, :] - centroids[None]) ** 2).sum(axis=-1)
    own = np.searchsorted(classes, labels)
    rows = np.arange(len(labels))
    n_own = counts[own]
    loo = np.where(n_own[:, None] > 1, (sums[own] - vectors) / np.maximum(n_own - 1, 1)[:, None], np.nan)
    d[rows, own] = np.where(n_own > 1, ((vectors - loo) ** 2).sum(axis=-1), np.inf)
    return 100.0 * float(np.mean(classes[d.argmin(axis=1)] == labels))
