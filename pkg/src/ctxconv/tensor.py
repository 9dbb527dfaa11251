"""Dense float64 tensors, a counter-based RNG and the binary tensor container.

Container layout (little-endian)::

    magic    8 bytes   b"CTXTENS\\x00"
    version  1 byte    1
    records  until EOF, each:
        name_len  u32
        name      name_len bytes, UTF-8
        rank      u32
        extents   rank x u64
        payload   prod(extents) x f64
"""
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeError

MAGIC = b"CTXTENS\x00"
VERSION = 1

_MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _check_extents(shape):
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise ShapeError(f"extents must be >= 1, got {shape}")
    return shape


class Tensor:
    """Immutable row-major float64 array.

    ``data`` is the flat payload, ``array`` a read-only n-d view of it.
    """

    __slots__ = ("_array",)

    def __init__(self, data, shape=None):
        arr = np.array(data, dtype=np.float64)
        if shape is not None:
            shape = _check_extents(shape)
            if arr.size != int(np.prod(shape, dtype=np.int64)):
                raise ShapeError(f"{arr.size} elements cannot have shape {shape}")
            arr = arr.reshape(shape)
        else:
            _check_extents(arr.shape)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor elements must be finite")
        arr.flags.writeable = False
        self._array = arr

    @property
    def shape(self):
        return self._array.shape

    @property
    def data(self):
        return self._array.reshape(-1)

    @property
    def array(self):
        return self._array

    def numpy(self):
        return self._array.copy()

    def __len__(self):
        return self._array.shape[0]

    def __repr__(self):
        return f"Tensor(shape={list(self.shape)})"

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self._array, other._array)

    __hash__ = None


def tensor_new(shape, fill=0.0):
    shape = _check_extents(shape)
    return Tensor(np.full(shape, float(fill)))


def reshape(t, new_shape):
    new_shape = _check_extents(new_shape)
    if int(np.prod(new_shape, dtype=np.int64)) != t.data.size:
        raise ShapeError(f"cannot reshape {list(t.shape)} to {list(new_shape)}")
    return Tensor(t.array.reshape(new_shape))


def flat_offset(index, shape):
    """Row-major offset of a multi-index."""
    offset = 0
    for i, n in zip(index, shape):
        offset = offset * n + i
    return offset


def _mix64(z):
    # splitmix64 finalizer, vectorized; uint64 arithmetic wraps mod 2**64
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class Rng:
    """Counter-based generator: draw ``i`` is ``mix64(key + (counter + i) * golden)``.

    ``key`` is ``mix64(seed + golden)``, the first splitmix64 output for ``seed``. The whole state is ``(seed, counter)``, so it
    can be checkpointed exactly and gives the same stream on every platform.
    Uniform floats take the top 53 bits of each draw.
    """

    def __init__(self, seed=0, counter=0):
        self.seed = int(seed) & _MASK64
        self.counter = int(counter)
        with np.errstate(over="ignore"):
            self._key = _mix64(np.array([self.seed], dtype=np.uint64) + _GOLDEN)[0]

    @classmethod
    def derive(cls, seed, *keys):
        """Independent stream for ``(seed, *keys)``; keys are ints or strings."""
        state = int(seed) & _MASK64
        for key in keys:
            if isinstance(key, str):
                key = int.from_bytes(key.encode(), "little") & _MASK64
            state = cls(state ^ (int(key) & _MASK64)).next_uint64(1)[0]
            state = int(state)
        return cls(state)

    def next_uint64(self, count):
        with np.errstate(over="ignore"):
            idx = np.arange(self.counter, self.counter + count, dtype=np.uint64)
            out = _mix64(self._key + idx * _GOLDEN)
        self.counter += count
        return out

    def random(self, shape):
        shape = (int(shape),) if isinstance(shape, (int, np.integer)) else tuple(shape)
        count = int(np.prod(shape, dtype=np.int64))
        bits = self.next_uint64(count) >> np.uint64(11)
        return (bits.astype(np.float64) * (1.0 / (1 << 53))).reshape(shape)

    def uniform(self, shape, lo=0.0, hi=1.0):
        if not lo < hi:
            raise ValueError(f"need lo < hi, got [{lo}, {hi})")
        u = lo + (hi - lo) * self.random(tuple(shape))
        # rounding can land exactly on hi for wide ranges
        return np.minimum(u, np.nextafter(hi, lo))

    def permutation(self, n):
        return np.argsort(self.random((n,)), kind="stable")

    def split(self):
        return Rng(int(self.next_uint64(1)[0]))

    def get_state(self):
        return (self.seed, self.counter)

    def set_state(self, state):
        seed, counter = state
        self.__init__(seed, counter)

    def state_tensor(self):
        # 32-bit halves keep the state exactly representable in float64
        s, c = self.seed, self.counter
        return Tensor([s >> 32, s & 0xFFFFFFFF, c >> 32, c & 0xFFFFFFFF])

    @classmethod
    def from_state_tensor(cls, t):
        hi_s, lo_s, hi_c, lo_c = (int(v) for v in t.data)
        return cls((hi_s << 32) | lo_s, (hi_c << 32) | lo_c)


def rng_uniform(rng, shape, lo, hi):
    return Tensor(rng.uniform(tuple(_check_extents(shape)), lo, hi))


def save_tensors(path, tensors):
    """Write an ordered mapping ``name -> Tensor`` to ``path``."""
    chunks = [MAGIC, bytes([VERSION])]
    for name, t in tensors.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", len(t.shape)))
        chunks.append(struct.pack(f"<{len(t.shape)}Q", *t.shape))
        chunks.append(np.ascontiguousarray(t.array, dtype="<f8").tobytes())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)


def load_tensors(path):
    buf = Path(path).read_bytes()
    if len(buf) < 9 or buf[:8] != MAGIC:
        raise FormatError(f"{path}: not a tensor container (bad magic)")
    if buf[8] != VERSION:
        raise FormatError(f"{path}: unsupported container version {buf[8]}")
    out = {}
    pos = 9

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"{path}: truncated record at byte {pos}")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    while pos < len(buf):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank))
        count = int(np.prod(shape, dtype=np.int64))
        payload = np.frombuffer(take(8 * count), dtype="<f8")
        try:
            out[name] = Tensor(payload, shape)
        except ShapeError as exc:
            raise FormatError(f"{path}: record {name!r}: {exc}") from exc
    return out


def save_tensor(path, t):
    save_tensors(path, {"": t})


def load_tensor(path):
    tensors = load_tensors(path)
    if len(tensors) != 1:
        raise FormatError(f"{path}: expected a single tensor, found {len(tensors)}")
    return next(iter(tensors.values()))
