"""Reverse-mode differentiation over numpy float64 arrays."""
import numpy as np

from .tensor import Tensor


class Var:
    """A value on the differentiation tape.

    Leaves are created by the user (``requires_grad=True`` for parameters);
    every op returns a new ``Var`` that remembers its parents and a closure
    mapping the output gradient to parent gradients.
    """

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "op", "visits")

    def __init__(self, value, requires_grad=False, parents=(), backward=None, op="leaf"):
        if isinstance(value, Tensor):
            value = value.array
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self.op = op
        self.visits = 0

    @property
    def shape(self):
        return self.value.shape

    @property
    def tensor(self):
        return Tensor(self.value)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Propagate ``grad`` (default 1 for scalars) to every ancestor."""
        if grad is None:
            if self.value.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.value)
        order = _topo_order(self)
        self.grad = np.asarray(grad, dtype=np.float64) if self.grad is None else self.grad + grad
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                node.visits += 1

    def __repr__(self):
        return f"Var(op={self.op}, shape={list(self.shape)}, requires_grad={self.requires_grad})"


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def accumulate(var, g):
    if not var.requires_grad:
        return
    var.grad = g if var.grad is None else var.grad + g


def as_var(x):
    return x if isinstance(x, Var) else Var(x)


def make(value, parents, backward, op):
    """Output node; the backward closure is dropped if no parent needs gradients."""
    if any(p.requires_grad for p in parents):
        return Var(value, True, tuple(parents), backward, op)
    return Var(value, False, (), None, op)
