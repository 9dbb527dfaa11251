"""Finite-difference suite over every differentiable op and the filter module."""
import time

import numpy as np

from . import ops
from .autograd import Var
from .filters import GeneratorParams, context_conv, generate_filters
from .gradcheck import gradcheck, relative_error
from .network import init_params, model_forward
from .tensor import Rng
from .transforms import TransformSet

H = 1e-5
TOL = 1e-4
INSTANCES = 5


def _spaced(rng, shape, gap=0.02):
    """Values whose pairwise gaps exceed ``gap``, away from zero, in random order."""
    n = int(np.prod(shape))
    vals = (np.arange(n) - n / 2 + 0.5) * gap
    vals = np.where(np.abs(vals) < gap, np.sign(vals + 1e-12) * gap, vals)
    return vals[rng.permutation(n)].reshape(shape)


def _relu_margin(pre):
    return float(np.abs(pre).min())


def _pool_gap(pre, k):
    """Smallest top-two gap over non-overlapping windows whose maximum is positive."""
    n, c, h, w = pre.shape
    ho, wo = h // k, w // k
    win = np.maximum(pre[:, :, :ho * k, :wo * k], 0).reshape(n, c, ho, k, wo, k)
    win = np.sort(win.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, k * k), axis=-1)
    gap = win[..., -1] - win[..., -2]
    live = win[..., -1] > 0
    return float(gap[live].min()) if live.any() else np.inf


def _param(x):
    return Var(x, requires_grad=True)


class Suite:
    def __init__(self, seed=0, fault=None):
        self.rng = Rng.derive(seed, "gradcheck")
        self.fault = fault

    def _out(self, name, v):
        return ops.negate_grad(v) if self.fault == name else v

    def probe(self, name, out):
        w = self.rng.uniform(out.shape, -1.0, 1.0) if out.value.size > 1 else np.ones(out.shape)
        return ops.vdot(self._out(name, out), w)

    # each case returns (f, inputs)
    def case_conv2d(self, i):
        r = self.rng
        stride, pad = (1, 1) if i % 2 == 0 else (2, 0)
        x, w, b = _param(r.uniform((2, 2, 5, 5), -1, 1)), _param(r.uniform((3, 2, 3, 3), -1, 1)), _param(r.uniform((3,), -1, 1))
        probe = r.uniform((2, 3) + ops.conv2d(x, w, b, pad, stride).shape[2:], -1, 1)
        return (lambda x, w, b: ops.vdot(self._out("conv2d", ops.conv2d(x, w, b, pad, stride)), probe)), [x, w, b]

    def case_conv2d_transposed(self, i):
        r = self.rng
        stride = 1 + i % 2
        x, w, b = _param(r.uniform((2, 3, 3, 3), -1, 1)), _param(r.uniform((3, 2, 2, 2), -1, 1)), _param(r.uniform((2,), -1, 1))
        probe = r.uniform(ops.conv2d_transposed(x, w, b, stride).shape, -1, 1)
        return (lambda x, w, b: ops.vdot(self._out("conv2d_transposed", ops.conv2d_transposed(x, w, b, stride)), probe)), [x, w, b]

    def case_conv2d_per_sample(self, i):
        r = self.rng
        x, w = _param(r.uniform((2, 1, 5, 5), -1, 1)), _param(r.uniform((2, 3, 1, 3, 3), -1, 1))
        probe = r.uniform((2, 3, 5, 5), -1, 1)
        return (lambda x, w: ops.vdot(self._out("conv2d_per_sample", ops.conv2d_per_sample(x, w, padding=1)), probe)), [x, w]

    def case_maxpool2d(self, i):
        r = self.rng
        k, s = (2, 2) if i % 2 == 0 else (3, 2)
        x = _param(_spaced(r, (2, 2, 7, 7)))
        probe = r.uniform(ops.maxpool2d(x, k, s).shape, -1, 1)
        return (lambda x: ops.vdot(self._out("maxpool2d", ops.maxpool2d(x, k, s)), probe)), [x]

    def case_relu(self, i):
        r = self.rng
        x = _param(_spaced(r, (3, 7), gap=0.1))
        probe = r.uniform((3, 7), -1, 1)
        return (lambda x: ops.vdot(self._out("relu", ops.relu(x)), probe)), [x]

    def case_dense(self, i):
        r = self.rng
        x, w, b = _param(r.uniform((4, 5), -1, 1)), _param(r.uniform((5, 3), -1, 1)), _param(r.uniform((3,), -1, 1))
        probe = r.uniform((4, 3), -1, 1)
        return (lambda x, w, b: ops.vdot(self._out("dense", ops.dense(x, w, b)), probe)), [x, w, b]

    def case_dropout(self, i):
        r = self.rng
        x = _param(r.uniform((4, 6), -1, 1))
        probe = r.uniform((4, 6), -1, 1)
        seed = i

        def f(x):
            # fresh generator each call keeps the mask fixed across perturbations
            return ops.vdot(self._out("dropout", ops.dropout(x, 0.5, Rng(seed), training=True)), probe)

        return f, [x]

    def case_softmax_cross_entropy(self, i):
        r = self.rng
        x = _param(r.uniform((4, 10), -3, 3))
        labels = (r.random((4,)) * 10).astype(int)
        return (lambda x: self._out("softmax_cross_entropy", ops.softmax_cross_entropy(x, labels))), [x]

    def case_branch_max(self, i):
        r = self.rng
        vals = _spaced(r, (3, 2, 4))
        branches = [_param(vals[j]) for j in range(3)]
        probe = r.uniform((2, 4), -1, 1)
        return (lambda *b: ops.vdot(self._out("branch_max", ops.branch_max(list(b))), probe)), branches

    def case_stacked_branch_max(self, i):
        r = self.rng
        x = _param(_spaced(r, (6, 2, 2)))
        probe = r.uniform((2, 2, 2), -1, 1)
        return (lambda x: ops.vdot(self._out("stacked_branch_max", ops.stacked_branch_max(x, 3)), probe)), [x]

    def case_reshape(self, i):
        r = self.rng
        x = _param(r.uniform((2, 3, 4), -1, 1))
        probe = r.uniform((6, 4), -1, 1)
        return (lambda x: ops.vdot(self._out("reshape", ops.reshape(x, (6, 4))), probe)), [x]

    def _generator(self, channels=2):
        r = self.rng
        return GeneratorParams(
            _param(r.uniform((channels, 1, 3, 3), -1, 1)),
            _param(r.uniform((channels,), -0.2, 0.2)),
            _param(r.uniform((channels, 40, 2, 2), -1, 1)),
            _param(r.uniform((40,), -0.2, 0.2)),
        )

    def _kink_free(self, channels=2, margin=3e-4, tries=200):
        """Image and generator whose relu inputs and pool winners all clear ``margin``."""
        for _ in range(tries):
            gen = self._generator(channels)
            x = _param(self.rng.uniform((1, 1, 28, 28), 0, 1))
            pre1 = ops.conv2d(x.value, gen.gen_conv_weight.value, gen.gen_conv_bias.value, padding=1).value
            filters = generate_filters(Var(x.value), gen).value
            pre2 = ops.conv2d_per_sample(x.value, filters, padding=1).value
            if _relu_margin(pre1) > margin and _relu_margin(pre2) > margin \
                    and _pool_gap(pre1, 14) > margin and _pool_gap(pre2, 2) > margin:
                return x, gen
        raise RuntimeError("could not draw a kink-free instance")

    def case_generate_filters(self, i):
        x, gen = self._kink_free()
        probe = self.rng.uniform((1, 40, 1, 3, 3), -1, 1)

        def f(x, *p):
            return ops.vdot(self._out("generate_filters", generate_filters(x, GeneratorParams(*p))), probe)

        return f, [x] + [v for _, v in gen.named()]

    def case_dynamic_conv_double_path(self, i):
        """sum(dynamic_conv(x, generate_filters(x))) w.r.t. the image and all generator params."""
        x, gen = self._kink_free()

        def f(x, *p):
            return ops.total(self._out("dynamic_conv_double_path", context_conv(x, GeneratorParams(*p))))

        return f, [x] + [v for _, v in gen.named()]

    def run(self, names=None, instances=INSTANCES):
        results = []
        for name in names or CASES:
            build = getattr(self, f"case_{name}")
            count = 1 if name in SLOW_CASES else instances
            t0 = time.perf_counter()
            worst = 0.0
            for i in range(count):
                f, inputs = build(i)
                worst = max(worst, gradcheck(f, inputs, H, TOL).max_rel_error)
            results.append({"op": name, "instances": count, "max_rel_error": worst,
                            "passed": worst < TOL, "seconds": time.perf_counter() - t0})
        results.append(self.model_directional())
        return results

    def model_directional(self, directions=3, h=1e-7):
        """Directional derivatives of a full small model against central differences.

        The step is smaller than ``H`` because a random direction moves every
        relu input of the network at once.
        """
        t0 = time.perf_counter()
        params = init_params(Rng(7), gen_channels=2, dense_width=8)
        x = self.rng.uniform((2, 1, 28, 28), 0, 1)
        labels = np.array([3, 5])
        phi = TransformSet.rotations(2)

        def loss():
            return ops.softmax_cross_entropy(self._out("model", model_forward(x, phi, params)), labels)

        params.zero_grad()
        loss().backward()
        grads = [p.grad.copy() for p in params.vars()]
        worst = 0.0
        for _ in range(directions):
            d = [self.rng.uniform(p.shape, -1, 1) for p in params.vars()]
            analytic = sum(float(np.vdot(g, di)) for g, di in zip(grads, d))
            base = [p.value for p in params.vars()]
            vals = []
            for sign in (1.0, -1.0):
                for p, b, di in zip(params.vars(), base, d):
                    p.value = b + sign * h * di
                vals.append(float(loss().value))
            for p, b in zip(params.vars(), base):
                p.value = b
            numeric = (vals[0] - vals[1]) / (2 * h)
            worst = max(worst, float(relative_error(np.array(analytic), np.array(numeric))))
        return {"op": "model", "instances": directions, "max_rel_error": worst,
                "passed": worst < TOL, "seconds": time.perf_counter() - t0}


CASES = (
    "conv2d", "conv2d_transposed", "conv2d_per_sample", "maxpool2d", "relu", "dense", "dropout",
    "softmax_cross_entropy", "branch_max", "stacked_branch_max", "reshape", "generate_filters",
    "dynamic_conv_double_path",
)
SLOW_CASES = ()


def run_suite(seed=0, fault=None, names=None, instances=INSTANCES):
    return Suite(seed, fault).run(names, instances)


def format_report(results):
    lines = [f"{'op':<28} {'n':>2} {'max rel err':>12}  status"]
    for r in results:
        lines.append(f"{r['op']:<28} {r['instances']:>2} {r['max_rel_error']:>12.3e}  {'PASS' if r['passed'] else 'FAIL'}")
    return "\n".join(lines)
