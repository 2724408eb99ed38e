"""Tensors and the recording tape."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError, NumericError
from .ops import OPS


class Tensor:
    """Dense float64 array, optionally tracking a gradient buffer.

    ``node_id`` is ``None`` for leaves (parameters, inputs, constants) and the
    index of the producing node otherwise.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "node_id")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.name = name
        self.node_id = None

    @classmethod
    def _wrap(cls, arr, requires_grad):
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        t.node_id = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def numpy(self):
        return self.data

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    op: str
    inputs: tuple
    output: Tensor
    ctx: object = field(repr=False)


class Graph:
    """Append-only tape of op applications.

    ``record=False`` computes forward values without keeping nodes, which is
    what frozen inference uses.
    """

    def __init__(self, record=True):
        self.record = record
        self.nodes: list[Node] = []

    def forward(self, op_kind, *inputs, **attrs):
        try:
            op = OPS[op_kind]
        except KeyError:
            raise ContractError(f"unknown op {op_kind!r}") from None
        xs = [as_tensor(x) for x in inputs]
        out, ctx = op.forward([x.data for x in xs], **attrs)
        out = np.asarray(out, dtype=np.float64)
        if not np.all(np.isfinite(out)):
            raise NumericError(
                f"{op_kind}: non-finite output for input shapes {[x.shape for x in xs]}"
            )
        needs = self.record and any(x.requires_grad for x in xs)
        t = Tensor._wrap(out, needs)
        if needs:
            t.node_id = len(self.nodes)
            self.nodes.append(Node(op_kind, tuple(xs), t, ctx))
        return t

    def backward(self, loss: Tensor):
        """Accumulate d(loss)/d(leaf) into every reachable ``requires_grad`` leaf.

        Returns a ``{leaf: gradient}`` map for the leaves reached in this pass.
        """
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        reached: dict[int, tuple[Tensor, np.ndarray]] = {}
        if loss.node_id is None:
            if loss.requires_grad:
                g = np.ones_like(loss.data)
                loss.grad = loss.grad + g
                reached[id(loss)] = (loss, g)
            return {t: g for t, g in reached.values()}

        pending = {loss.node_id: np.ones_like(loss.data)}
        for node in reversed(self.nodes[: loss.node_id + 1]):
            gout = pending.pop(node.output.node_id, None)
            if gout is None:
                continue
            grads = OPS[node.op].backward(node.ctx, gout)
            for x, gx in zip(node.inputs, grads):
                if gx is None or not x.requires_grad:
                    continue
                if not np.all(np.isfinite(gx)):
                    raise NumericError(f"{node.op}: non-finite gradient in backward")
                if x.node_id is None:
                    x.grad = x.grad + gx if x.grad is not None else gx.copy()
                    if id(x) in reached:
                        reached[id(x)] = (x, reached[id(x)][1] + gx)
                    else:
                        reached[id(x)] = (x, gx)
                elif x.node_id in pending:
                    pending[x.node_id] = pending[x.node_id] + gx
                else:
                    pending[x.node_id] = gx
        return {t: g for t, g in reached.values()}

    # Thin named wrappers keep model code readable.
    def matmul(self, a, b):
        return self.forward("matmul", a, b)

    def add(self, a, b):
        return self.forward("add", a, b)

    def sub(self, a, b):
        return self.forward("sub", a, b)

    def mul(self, a, b):
        return self.forward("mul", a, b)

    def scale(self, x, factor=1.0, shift=0.0):
        return self.forward("scale", x, factor=factor, shift=shift)

    def concat(self, xs, axis=-1):
        return self.forward("concat", *xs, axis=axis)

    def slice(self, x, start, stop):
        return self.forward("slice", x, start=start, stop=stop)

    def relu(self, x):
        return self.forward("relu", x)

    def sigmoid(self, x):
        return self.forward("sigmoid", x)

    def softmax(self, x):
        return self.forward("softmax", x)

    def exp(self, x):
        return self.forward("exp", x)

    def log(self, x):
        return self.forward("log", x)

    def clip(self, x, lo, hi):
        return self.forward("clip", x, lo=lo, hi=hi)

    def sum(self, x, axis=None, keepdims=False):
        return self.forward("sum", x, axis=axis, keepdims=keepdims)

    def mean(self, x, axis=None, keepdims=False):
        return self.forward("mean", x, axis=axis, keepdims=keepdims)

    def batchnorm(self, x, gamma, beta, stats, mode="train"):
        return self.forward("batchnorm", x, gamma, beta, stats=stats, mode=mode)

    def dropout(self, x, ratio, mode="train", rng=None):
        return self.forward("dropout", x, ratio=ratio, mode=mode, rng=rng)


def backward(graph: Graph, loss: Tensor):
    return graph.backward(loss)
