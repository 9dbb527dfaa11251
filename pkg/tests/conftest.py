from pathlib import Path

import numpy as np
import pytest

from ctxconv.data import load_idx
from ctxconv.tensor import Rng

ROOT = Path(__file__).resolve().parents[1]
MNIST10K = ROOT / "data" / "mnist10k"


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture(scope="session")
def mnist10k():
    return load_idx(MNIST10K / "images-idx3-ubyte.gz", MNIST10K / "labels-idx1-ubyte.gz")


def naive_conv2d(x, w, b=None, padding=0, stride=1):
    """Direct six-loop cross-correlation; the reference for the im2col path."""
    n, c, h, wd = x.shape
    k, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, k, ho, wo))
    for i in range(n):
        for o in range(k):
            for r in range(ho):
                for q in range(wo):
                    patch = xp[i, :, r * stride:r * stride + kh, q * stride:q * stride + kw]
                    out[i, o, r, q] = np.sum(patch * w[o]) + (0.0 if b is None else b[o])
    return out


def naive_conv2d_transposed(x, w, stride=1):
    """Scatter form: each input pixel stamps its weighted kernel into the output."""
    n, c, h, wd = x.shape
    _, k, kh, kw = w.shape
    out = np.zeros((n, k, (h - 1) * stride + kh, (wd - 1) * stride + kw))
    for i in range(n):
        for ci in range(c):
            for r in range(h):
                for q in range(wd):
                    out[i, :, r * stride:r * stride + kh, q * stride:q * stride + kw] += x[i, ci, r, q] * w[ci]
    return out


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
