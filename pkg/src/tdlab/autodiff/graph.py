"""Static computation graphs captured by tracing ``Var`` programs.

A :class:`CompGraph` is a list of op records in topological order.  It is built
by running an ordinary Python function on placeholder inputs while the engine's
trace hook is active, and it can be replayed on new parameters and inputs.
Replay goes through the same engine ops, so replayed graphs are differentiable
(twice, if needed) and gradient computations can themselves be traced into a
new ``CompGraph``.

Input dimensions declared as ``None`` (typically the batch axis) are traced at
two sizes; node shapes that differ between the two traces become wildcards.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import engine
from .engine import Var


class GraphShapeError(ValueError):
    """Raised when replay sees a shape the graph was not traced for."""

    def __init__(self, node_id: int, message: str):
        super().__init__(f"node {node_id}: {message}")
        self.node_id = node_id


@dataclass(frozen=True)
class Node:
    id: int
    op: str  # engine op name, or one of "input", "param", "const"
    inputs: tuple[int, ...]
    shape: tuple[int, ...]  # -1 marks a wildcard dimension
    attrs: dict = field(default_factory=dict, compare=False)
    name: str | None = None
    value: np.ndarray | None = field(default=None, compare=False, repr=False)


class _Trace:
    def __init__(self):
        self.nodes: list[Node] = []
        self.ids: dict[int, int] = {}

    def _new(self, var: Var, **kw) -> int:
        nid = len(self.nodes)
        self.nodes.append(Node(nid, shape=var.shape, **kw))
        self.ids[var.uid] = nid
        return nid

    def add_placeholder(self, var: Var, kind: str, name: str):
        self._new(var, op=kind, inputs=(), name=name)

    def add_const(self, var: Var):
        if var.uid not in self.ids:
            self._new(var, op="const", inputs=(), value=var.value)

    def add_op(self, out: Var, name: str, parents, attrs):
        for p in parents:
            self.add_const(p)
        self._new(out, op=name, inputs=tuple(self.ids[p.uid] for p in parents),
                  attrs=dict(attrs))


def _shape_matches(declared, actual) -> bool:
    return len(declared) == len(actual) and all(
        d == -1 or d == a for d, a in zip(declared, actual))


class CompGraph:
    """A traced program ``(params, inputs) -> output``."""

    def __init__(self, nodes, inputs: Mapping[str, int], params: Mapping[str, int], output: int,
                 input_dtypes: Mapping[str, str] | None = None):
        self.nodes = tuple(nodes)
        self.inputs = dict(inputs)
        self.params = dict(params)
        self.output = output
        self.input_dtypes = dict(input_dtypes or {})
        for node in self.nodes:
            if any(i >= node.id for i in node.inputs):
                raise ValueError(f"node {node.id} is not in topological order")

    def __len__(self):
        return len(self.nodes)

    @property
    def output_shape(self) -> tuple:
        return self.nodes[self.output].shape

    @classmethod
    def trace(cls, fn: Callable, input_shapes: Mapping[str, tuple],
              param_shapes: Mapping[str, tuple], input_dtypes: Mapping[str, str] | None = None):
        """Trace ``fn(params: dict[str, Var], inputs: dict[str, Var]) -> Var``."""
        input_dtypes = dict(input_dtypes or {})
        polymorphic = any(d is None for s in input_shapes.values() for d in s)
        first = cls._trace_once(fn, input_shapes, param_shapes, input_dtypes, 2)
        if not polymorphic:
            return first
        second = cls._trace_once(fn, input_shapes, param_shapes, input_dtypes, 3)
        if len(first.nodes) != len(second.nodes):
            raise ValueError("traced program structure depends on the batch size")
        merged = []
        for a, b in zip(first.nodes, second.nodes):
            if a.op != b.op or a.inputs != b.inputs or len(a.shape) != len(b.shape):
                raise ValueError(f"node {a.id}: traced program structure depends on the batch size")
            shape = tuple(x if x == y else -1 for x, y in zip(a.shape, b.shape))
            merged.append(Node(a.id, a.op, a.inputs, shape, a.attrs, a.name, a.value))
        return cls(merged, first.inputs, first.params, first.output, input_dtypes)

    @classmethod
    def _trace_once(cls, fn, input_shapes, param_shapes, input_dtypes, batch):
        tr = _Trace()
        token = engine._TRACE.set(tr)
        try:
            pvars, ivars = {}, {}
            for name, shape in param_shapes.items():
                v = engine.leaf(np.zeros(shape))
                tr.add_placeholder(v, "param", name)
                pvars[name] = v
            for name, shape in input_shapes.items():
                concrete = tuple(batch if d is None else d for d in shape)
                dtype = input_dtypes.get(name, "float64")
                v = Var(np.zeros(concrete, dtype=dtype))
                tr.add_placeholder(v, "input", name)
                ivars[name] = v
            out = fn(pvars, ivars)
            tr.add_const(out)
        finally:
            engine._TRACE.reset(token)
        inputs = {n.name: n.id for n in tr.nodes if n.op == "input"}
        params = {n.name: n.id for n in tr.nodes if n.op == "param"}
        return cls(tr.nodes, inputs, params, tr.ids[out.uid], input_dtypes)

    def __call__(self, params: Mapping[str, Var], inputs: Mapping) -> Var:
        """Replay on ``Var`` parameters and array/Var inputs."""
        vals: list[Var | None] = [None] * len(self.nodes)
        for node in self.nodes:
            if node.op == "input":
                if node.name not in inputs:
                    raise GraphShapeError(node.id, f"missing input {node.name!r}")
                v = engine.const(inputs[node.name])
                if not _shape_matches(node.shape, v.shape):
                    raise GraphShapeError(
                        node.id, f"input {node.name!r} has shape {v.shape}, expected {node.shape}")
            elif node.op == "param":
                if node.name not in params:
                    raise GraphShapeError(node.id, f"missing parameter {node.name!r}")
                v = params[node.name]
                if not isinstance(v, Var):
                    v = engine.const(v)
                if v.shape != node.shape:
                    raise GraphShapeError(
                        node.id, f"parameter {node.name!r} has shape {v.shape}, expected {node.shape}")
            elif node.op == "const":
                v = engine.const(node.value)
            else:
                try:
                    v = engine.apply(node.op, *[vals[i] for i in node.inputs], **node.attrs)
                except (ValueError, IndexError) as exc:
                    raise GraphShapeError(node.id, f"{node.op} failed: {exc}") from exc
                if not _shape_matches(node.shape, v.shape):
                    raise GraphShapeError(
                        node.id, f"{node.op} produced shape {v.shape}, expected {node.shape}")
            vals[node.id] = v
        return vals[self.output]
