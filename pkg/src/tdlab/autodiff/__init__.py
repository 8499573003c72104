"""Numeric substrate: tensors, reverse-mode autodiff, HVPs and finite-difference oracles."""

from . import engine
from .calculus import (GradResult, evaluate, finite_diff_grad, finite_diff_hvp, function_hvp,
                       grad, grad_and_hvp, grad_vars, gradient_graph, hvp, per_example_grads)
from .engine import Var, backward, const, leaf, no_grad
from .graph import CompGraph, GraphShapeError, Node
from .tensor import (LayoutMismatch, ParamVector, Segment, as_tensor, dot, is_valid, load_tnsr,
                     make_layout, save_tnsr, tnsr_bytes, tnsr_from_bytes)

__all__ = [
    "engine", "Var", "backward", "const", "leaf", "no_grad",
    "CompGraph", "GraphShapeError", "Node",
    "GradResult", "evaluate", "grad", "grad_vars", "grad_and_hvp", "per_example_grads", "hvp",
    "function_hvp", "finite_diff_grad", "finite_diff_hvp", "gradient_graph",
    "LayoutMismatch", "ParamVector", "Segment", "as_tensor", "dot", "is_valid", "make_layout",
    "load_tnsr", "save_tnsr", "tnsr_bytes", "tnsr_from_bytes",
]
