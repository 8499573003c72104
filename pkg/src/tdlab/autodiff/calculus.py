"""Gradients, per-example gradients, Hessian-vector products and finite differences.

All functions take a *program* ``fn(params: dict[str, Var], inputs) -> Var``;
a :class:`~tdlab.autodiff.graph.CompGraph` is one such program, but any Python
function built from engine ops works the same way.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import engine
from .engine import Var
from .graph import CompGraph
from .tensor import LayoutMismatch, ParamVector

Program = Callable[[dict, object], Var]


@dataclass(frozen=True)
class GradResult:
    value: float
    grad: ParamVector


def _leaves(params: ParamVector) -> dict[str, Var]:
    return {name: engine.leaf(block) for name, block in params.blocks().items()}


def _constants(params: ParamVector) -> dict[str, Var]:
    return {name: Var(block) for name, block in params.blocks().items()}


def _collect(grads, params: ParamVector) -> ParamVector:
    parts = []
    for seg, g in zip(params.layout, grads):
        parts.append(np.zeros(seg.size) if g is None else np.asarray(g.value, dtype=np.float64).reshape(-1))
    return params.with_data(np.concatenate(parts) if parts else np.zeros(0))


def _scalar(out: Var) -> Var:
    if out.value.size != 1:
        raise ValueError(f"expected a scalar output, got shape {out.shape}")
    return out


def evaluate(fn: Program, params: ParamVector, inputs=None) -> np.ndarray:
    """Forward value of ``fn`` (no gradient bookkeeping)."""
    with engine.no_grad():
        return fn(_constants(params), inputs).value


def grad(fn: Program, params: ParamVector, inputs=None) -> GradResult:
    """Value and gradient of a scalar program."""
    pv = _leaves(params)
    out = _scalar(fn(pv, inputs))
    gs = engine.backward(out, list(pv.values()))
    return GradResult(float(out.value), _collect(gs, params))


def grad_vars(fn: Program, params: ParamVector, inputs=None, create_graph: bool = False):
    """Like :func:`grad` but returns the leaves, output and gradient ``Var`` blocks."""
    pv = _leaves(params)
    out = _scalar(fn(pv, inputs))
    gs = engine.backward(out, list(pv.values()), create_graph=create_graph)
    return pv, out, gs


def per_example_grads(fn: Program, params: ParamVector, batch: Sequence) -> list[GradResult]:
    """One backward pass per example; ``fn`` receives a single example as ``inputs``."""
    if len(batch) == 0:
        raise ValueError("per_example_grads needs a nonempty batch")
    return [grad(fn, params, example) for example in batch]


def _dot_vars(gs, v: ParamVector) -> Var:
    terms = [engine.sum(g * Var(block)) for g, block in zip(gs, v.blocks().values()) if g is not None]
    if not terms:
        return Var(0.0)
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total


def hvp(fn: Program, params: ParamVector, v: ParamVector, inputs=None) -> ParamVector:
    """Hessian of a scalar program times ``v``: gradient of ``<grad fn, v>`` (reverse over reverse)."""
    if not params.same_layout(v):
        raise LayoutMismatch("hvp direction layout does not match the parameters")
    pv, _, gs = grad_vars(fn, params, inputs, create_graph=True)
    gv = _dot_vars(gs, v)
    hs = engine.backward(gv, list(pv.values())) if gv.requires_grad else [None] * len(pv)
    return _collect(hs, params)


def function_hvp(scalar_fn: Program, params: ParamVector, v: ParamVector, inputs=None) -> ParamVector:
    """Hessian of the scalarized model output (not of a loss) times ``v``."""
    return hvp(scalar_fn, params, v, inputs)


def grad_and_hvp(fn: Program, params: ParamVector, vs: Sequence[ParamVector], inputs=None):
    """Gradient plus several Hessian-vector products from one recorded gradient."""
    pv, out, gs = grad_vars(fn, params, inputs, create_graph=True)
    g = _collect(gs, params)
    res = []
    for v in vs:
        if not params.same_layout(v):
            raise LayoutMismatch("hvp direction layout does not match the parameters")
        gv = _dot_vars(gs, v)
        hs = engine.backward(gv, list(pv.values())) if gv.requires_grad else [None] * len(pv)
        res.append(_collect(hs, params))
    return float(out.value), g, res


def finite_diff_grad(fn: Program, params: ParamVector, inputs=None, h: float = 1e-5) -> ParamVector:
    """Central-difference gradient, one coordinate at a time."""
    if not h > 0:
        raise ValueError("finite-difference step must be positive")
    base = params.data
    out = np.empty_like(base)
    for i in range(base.size):
        plus = base.copy()
        plus[i] += h
        minus = base.copy()
        minus[i] -= h
        fp = float(evaluate(fn, params.with_data(plus), inputs))
        fm = float(evaluate(fn, params.with_data(minus), inputs))
        out[i] = (fp - fm) / (2.0 * h)
    return params.with_data(out)


def finite_diff_hvp(fn: Program, params: ParamVector, v: ParamVector, inputs=None,
                    h: float = 1e-5) -> ParamVector:
    """(grad(theta + h v) - grad(theta - h v)) / 2h."""
    gp = grad(fn, params + h * v, inputs).grad
    gm = grad(fn, params - h * v, inputs).grad
    return (gp - gm) * (1.0 / (2.0 * h))


def gradient_graph(graph: CompGraph, params: ParamVector, inputs) -> CompGraph:
    """Trace the adjoint pass of ``graph`` into a new graph returning the flat gradient.

    Shapes are fixed to those of ``inputs``; the result can be differentiated again.
    """
    param_shapes = {s.name: s.shape for s in params.layout}
    input_shapes = {k: np.shape(v) for k, v in inputs.items()}
    dtypes = {k: str(np.asarray(v).dtype) for k, v in inputs.items()}

    def adjoint(pv, iv):
        out = _scalar(graph(pv, iv))
        names = list(pv)
        gs = engine.backward(out, [pv[n] for n in names], create_graph=True)
        blocks = [g if g is not None else Var(np.zeros(pv[n].shape)) for n, g in zip(names, gs)]
        return engine.flat_concat(*blocks)

    return CompGraph.trace(adjoint, input_shapes, param_shapes, dtypes)
