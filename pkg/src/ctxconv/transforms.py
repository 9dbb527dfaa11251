"""Rotations and isotropic scalings of square images about their center.

Continuous transforms use inverse mapping with bilinear interpolation and
zero fill. Positive angles rotate counter-clockwise as displayed (row axis
pointing down), matching ``np.rot90``.
"""
from dataclasses import dataclass

import numpy as np

ROTATION = "rotation"
SCALING = "scaling"
BILINEAR = "bilinear"
EXACT = "exact-right-angle"

KINDS = (ROTATION, SCALING)
INTERPOLATIONS = (BILINEAR, EXACT)


def _validate(kind, value):
    if kind == ROTATION:
        if not np.isfinite(value):
            raise ValueError(f"bad rotation angle {value}")
    elif kind == SCALING:
        if not value > 0:
            raise ValueError(f"scale factor must be positive, got {value}")
    else:
        raise ValueError(f"unknown transform kind {kind!r}")


def _source_coords(kind, values, size):
    """Source ``(row, col)`` arrays of shape ``[len(values), size, size]``."""
    values = np.asarray(values, dtype=np.float64)[:, None, None]
    c = (size - 1) / 2.0
    r, q = np.meshgrid(np.arange(size, dtype=np.float64), np.arange(size, dtype=np.float64), indexing="ij")
    x = q - c
    y = c - r
    if kind == ROTATION:
        theta = np.deg2rad(values)
        cos, sin = np.cos(theta), np.sin(theta)
        xs = x * cos + y * sin
        ys = y * cos - x * sin
    else:
        xs = x / values
        ys = y / values
    return c - ys, c + xs


def _bilinear(images, src_r, src_c):
    """Sample ``images[m]`` ([M, S, S]) at per-image source grids (zero fill)."""
    m, s, _ = images.shape
    padded = np.zeros((m, s * s + 1))
    padded[:, :-1] = images.reshape(m, -1)
    r0 = np.floor(src_r)
    c0 = np.floor(src_c)
    fr = src_r - r0
    fc = src_c - c0
    r0 = r0.astype(np.int64)
    c0 = c0.astype(np.int64)
    out = np.zeros((m, s, s))
    rows = np.arange(m)[:, None, None]
    for dr, wr in ((0, 1.0 - fr), (1, fr)):
        for dc, wc in ((0, 1.0 - fc), (1, fc)):
            rr = r0 + dr
            cc = c0 + dc
            inside = (rr >= 0) & (rr < s) & (cc >= 0) & (cc < s)
            idx = np.where(inside, rr * s + cc, s * s)
            out += wr * wc * padded[rows, idx]
    return out


def _is_identity(kind, value):
    return (kind == ROTATION and value % 360 == 0) or (kind == SCALING and value == 1.0)


def transform_images(images, kind, value, interpolation=BILINEAR):
    """Apply one transform to every image of an ``[..., S, S]`` stack."""
    _validate(kind, value)
    if interpolation not in INTERPOLATIONS:
        raise ValueError(f"unknown interpolation {interpolation!r}")
    images = np.asarray(images, dtype=np.float64)
    if _is_identity(kind, value):
        return images.copy()
    if kind == ROTATION and interpolation == EXACT and value % 90 == 0:
        return np.ascontiguousarray(np.rot90(images, int(value // 90) % 4, axes=(-2, -1)))
    lead = images.shape[:-2]
    s = images.shape[-1]
    flat = images.reshape(-1, s, s)
    src_r, src_c = _source_coords(kind, [value], s)
    out = _bilinear(flat, np.broadcast_to(src_r, flat.shape), np.broadcast_to(src_c, flat.shape))
    return out.reshape(*lead, s, s)


def apply_transform(image, kind, value, interpolation=BILINEAR):
    return transform_images(image, kind, value, interpolation)


def transform_each(images, kind, values):
    """Bilinear transform of ``images[i]`` ([M, S, S]) by its own ``values[i]``."""
    images = np.asarray(images, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    for v in np.unique(values):
        _validate(kind, v)
    s = images.shape[-1]
    src_r, src_c = _source_coords(kind, values, s)
    out = _bilinear(images, src_r, src_c)
    same = np.array([_is_identity(kind, v) for v in values], dtype=bool)
    out[same] = images[same]
    return out


@dataclass(frozen=True)
class TransformSet:
    """Ordered transforms whose instances feed the parallel branches.

    Rotation angles are normalized into ``[0, 360)``; values are sorted and
    must be distinct.
    """

    kind: str
    values: tuple
    interpolation: str = BILINEAR

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if self.interpolation not in INTERPOLATIONS:
            raise ValueError(f"unknown interpolation {self.interpolation!r}")
        vals = [float(v) for v in self.values]
        if not vals:
            raise ValueError("a transform set needs at least one transform")
        for v in vals:
            _validate(self.kind, v)
        if self.kind == ROTATION:
            vals = [_normalize_angle(v) for v in vals]
        vals = sorted(vals)
        if len(set(vals)) != len(vals):
            raise ValueError(f"transform values must be distinct, got {vals}")
        object.__setattr__(self, "values", tuple(vals))

    def __len__(self):
        return len(self.values)

    @classmethod
    def rotations(cls, n, interpolation=EXACT):
        """``n`` angles ``k * 360 / n``."""
        return cls(ROTATION, tuple(k * 360.0 / n for k in range(n)), interpolation)

    @classmethod
    def rotations_between(cls, n, lo=-90.0, hi=90.0, interpolation=EXACT):
        return cls(ROTATION, tuple(np.linspace(lo, hi, n)), interpolation)

    @classmethod
    def scalings(cls, n, lo=0.5, hi=1.5):
        return cls(SCALING, tuple(np.linspace(lo, hi, n)), BILINEAR)

    def apply(self, images):
        """List of transformed copies of ``images``, one per set member."""
        return [transform_images(images, self.kind, v, self.interpolation) for v in self.values]


def _normalize_angle(v):
    v = float(v) % 360.0
    return 0.0 if v == 360.0 else v
