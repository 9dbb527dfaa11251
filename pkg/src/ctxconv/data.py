"""Dataset loading (IDX, amat), synthesis of transformed variants, subsets and batching."""
import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError
from .tensor import Rng, Tensor, load_tensors, save_tensors
from .transforms import ROTATION, SCALING, transform_each

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
SIDE = 28
AMAT_COLUMNS = SIDE * SIDE + 1


@dataclass
class Dataset:
    images: np.ndarray  # [M, 1, 28, 28] in [0, 1]
    labels: np.ndarray  # [M] int64 in [0, 10)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or self.images.shape[1:] != (1, SIDE, SIDE):
            raise FormatError(f"images must be [M,1,28,28], got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise FormatError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise FormatError("pixel values must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= 10):
            raise FormatError("labels must lie in [0, 10)")

    def __len__(self):
        return len(self.labels)

    def take(self, idx, **meta):
        return Dataset(self.images[idx], self.labels[idx], {**self.meta, **meta})


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def _read_idx(path, magic, dims):
    with _open(path) as fh:
        raw = fh.read()
    header = 4 + 4 * (1 + len(dims))
    if len(raw) < header:
        raise FormatError(f"{path}: truncated IDX header")
    found, count, *extents = struct.unpack(f">{2 + len(dims)}I", raw[:header])
    if found != magic:
        raise FormatError(f"{path}: bad IDX magic 0x{found:08x}, expected 0x{magic:08x}")
    if tuple(extents) != dims:
        raise FormatError(f"{path}: dimensions {tuple(extents)}, expected {dims}")
    size = count * int(np.prod(dims, dtype=np.int64))
    if len(raw) - header != size:
        raise FormatError(f"{path}: expected {size} payload bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(count, *dims)


def load_idx(images_path, labels_path):
    """Read an MNIST IDX image/label file pair (optionally gzipped)."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, (SIDE, SIDE))
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, ())
    if len(images) != len(labels):
        raise FormatError(f"{len(images)} images but {len(labels)} labels")
    return Dataset(
        images[:, None].astype(np.float64) / 255.0,
        labels.astype(np.int64),
        {"source": "idx", "images": str(images_path), "labels": str(labels_path)},
    )


def write_idx(dataset, images_path, labels_path):
    pixels = np.clip(np.rint(dataset.images[:, 0] * 255.0), 0, 255).astype(np.uint8)
    for path, magic, payload, dims in (
        (images_path, IDX_IMAGES_MAGIC, pixels, (SIDE, SIDE)),
        (labels_path, IDX_LABELS_MAGIC, dataset.labels.astype(np.uint8), ()),
    ):
        header = struct.pack(f">{2 + len(dims)}I", magic, len(dataset), *dims)
        opener = gzip.open if Path(path).suffix == ".gz" else open
        with opener(path, "wb") as fh:
            fh.write(header + payload.tobytes())


def load_amat(path, transpose=False):
    """Read an ``.amat`` text file: 784 pixels in [0, 1] then the label, per row.

    Pixels are read row-major; ``transpose=True`` swaps the two image axes
    for files stored column-major.
    """
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != AMAT_COLUMNS:
                raise FormatError(f"{path}:{lineno}: expected {AMAT_COLUMNS} values, found {len(tokens)}")
            try:
                rows.append([float(t) for t in tokens])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
    data = np.array(rows, dtype=np.float64).reshape(-1, AMAT_COLUMNS)
    labels = data[:, -1]
    if np.any(labels != np.round(labels)):
        raise FormatError(f"{path}: non-integer label")
    images = data[:, :-1].reshape(-1, 1, SIDE, SIDE)
    if transpose:
        images = images.transpose(0, 1, 3, 2)
    return Dataset(np.ascontiguousarray(images), labels.astype(np.int64),
                   {"source": "amat", "path": str(path), "transpose": transpose})


def write_amat(dataset, path):
    flat = dataset.images.reshape(len(dataset), -1)
    with open(path, "w") as fh:
        for row, label in zip(flat, dataset.labels):
            fh.write(" ".join(f"{v:.10g}" for v in row))
            fh.write(f" {int(label)}\n")


def _synthesize(base, kind, lo, hi, seed, chunk=4096):
    rng = Rng.derive(seed, "synthesize", kind)
    m = len(base)
    values = np.full(m, float(lo)) if lo == hi else rng.uniform((m,), lo, hi)
    images = np.empty_like(base.images)
    for i in range(0, m, chunk):
        sl = slice(i, i + chunk)
        images[sl, 0] = transform_each(base.images[sl, 0], kind, values[sl])
    np.clip(images, 0.0, 1.0, out=images)
    recipe = {"base": base.meta.get("source", "?"), "transform": kind, "lo": lo, "hi": hi, "seed": seed}
    return Dataset(images, base.labels.copy(), {**base.meta, "synthesis": recipe}), values


def synthesize_rotated(base, lo_deg, hi_deg, seed):
    """Rotate each image by its own uniform angle in ``[lo_deg, hi_deg]``."""
    if lo_deg > hi_deg:
        raise ValueError(f"need lo <= hi, got [{lo_deg}, {hi_deg}]")
    return _synthesize(base, ROTATION, lo_deg, hi_deg, seed)[0]


def synthesize_scaled(base, lo_factor, hi_factor, seed):
    """Scale each image about its center by its own uniform factor in ``[lo, hi]``."""
    if not 0 < lo_factor <= hi_factor:
        raise ValueError(f"need 0 < lo <= hi, got [{lo_factor}, {hi_factor}]")
    return _synthesize(base, SCALING, lo_factor, hi_factor, seed)[0]


def stratified_quotas(class_sizes, count, rng):
    """Split ``count`` across classes as evenly as availability allows."""
    sizes = np.asarray(class_sizes)
    quotas = np.zeros_like(sizes)
    remaining = count
    while remaining > 0:
        open_ = np.flatnonzero(quotas < sizes)
        share = remaining // len(open_)
        if share == 0:
            for c in open_[rng.permutation(len(open_))][:remaining]:
                quotas[c] += 1
            break
        add = np.minimum(share, sizes[open_] - quotas[open_])
        quotas[open_] += add
        remaining -= int(add.sum())
    return quotas


def subset(ds, count, seed):
    """Deterministic class-balanced sample of ``count`` items, shuffled."""
    if not 1 <= count <= len(ds):
        raise ValueError(f"subset size must be in [1, {len(ds)}], got {count}")
    rng = Rng.derive(seed, "subset")
    classes = np.unique(ds.labels)
    members = [np.flatnonzero(ds.labels == c) for c in classes]
    quotas = stratified_quotas([len(m) for m in members], count, rng)
    picked = np.concatenate([m[rng.permutation(len(m))[:q]] for m, q in zip(members, quotas)])
    picked = picked[rng.permutation(len(picked))]
    return ds.take(picked, subset={"count": count, "seed": seed})


def split_by_class(ds, fraction, seed):
    """Two disjoint datasets; each class contributes ``fraction`` of its items to the first."""
    rng = Rng.derive(seed, "split")
    first, second = [], []
    for c in np.unique(ds.labels):
        idx = np.flatnonzero(ds.labels == c)
        idx = idx[rng.permutation(len(idx))]
        cut = int(round(fraction * len(idx)))
        first.append(idx[:cut])
        second.append(idx[cut:])
    return ds.take(np.sort(np.concatenate(first))), ds.take(np.sort(np.concatenate(second)))


class BatchIter:
    """Shuffled mini-batches; the order of epoch ``e`` depends only on ``(seed, e)``."""

    def __init__(self, size, batch_size, seed):
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.size = size
        self.batch_size = batch_size
        self.seed = seed

    def order(self, epoch):
        return Rng.derive(self.seed, "epoch", epoch).permutation(self.size)

    def epoch(self, epoch):
        order = self.order(epoch)
        for i in range(0, self.size, self.batch_size):
            yield order[i:i + self.batch_size]

    def __len__(self):
        return -(-self.size // self.batch_size)


def _meta_lines(meta, prefix=""):
    for key, value in meta.items():
        if isinstance(value, dict):
            yield from _meta_lines(value, f"{prefix}{key}.")
        else:
            yield f"{prefix}{key}={value}"


def save_dataset(ds, path):
    """Tensor container with ``images`` and ``labels`` plus a ``.meta`` text file."""
    path = Path(path)
    save_tensors(path, {
        "images": Tensor(ds.images),
        "labels": Tensor(ds.labels.astype(np.float64)),
    })
    path.with_name(path.name + ".meta").write_text("\n".join(_meta_lines(ds.meta)) + "\n")


def load_dataset(path):
    path = Path(path)
    tensors = load_tensors(path)
    if set(tensors) != {"images", "labels"}:
        raise FormatError(f"{path}: not a dataset container")
    meta = {"source": str(path)}
    meta_path = path.with_name(path.name + ".meta")
    if meta_path.exists():
        for line in meta_path.read_text().splitlines():
            if "=" in line:
                k, v = line.split("=", 1)
                meta[k] = v
        meta["source"] = str(path)
    return Dataset(tensors["images"].numpy(), tensors["labels"].numpy().astype(np.int64), meta)


def ascii_digit(image, levels=" .:-=+*#%@"):
    """Text rendering of a [28, 28] (or [1, 28, 28]) image."""
    img = np.asarray(image).reshape(SIDE, SIDE)
    idx = np.clip((img * (len(levels) - 1)).round().astype(int), 0, len(levels) - 1)
    return "\n".join("".join(levels[i] for i in row) for row in idx)


def rot12k_surrogate(base, seed=0):
    """Rotated-digit train/test pair built the way rot-12k was: uniform angles over [0, 360).

    ``base`` is split per class into disjoint halves so no digit appears in both.
    """
    train_base, test_base = split_by_class(base, 0.5, seed)
    return (synthesize_rotated(train_base, 0.0, 360.0, int(Rng.derive(seed, "train").seed)),
            synthesize_rotated(test_base, 0.0, 360.0, int(Rng.derive(seed, "test").seed)))
