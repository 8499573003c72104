"""Network architectures, initialization and the scalarized-output rule.

Three kinds are supported:

``linear``  one affine map (optionally without bias; with one-hot inputs this is a table)
``mlp``     input -> n_h -> (n_L more n_h layers) -> n_o
``conv``    5x5 stride-2 conv (n_h), 3x3 (2 n_h), 3x3 (4 n_h), n_L padded 3x3 (4 n_h),
            dense 4 n_h, dense n_o

Hidden layers use a leaky ReLU (slope 0.01 by default) or tanh; the output
layer is linear.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from .autodiff import engine as E
from .autodiff import CompGraph, ParamVector, evaluate, load_tnsr, make_layout, save_tnsr
from .autodiff.engine import Var
from .rng import Rng, derive_seed

KINDS = ("linear", "mlp", "conv")
HEADS = ("value", "classifier")


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    input_shape: tuple
    n_h: int = 32
    n_L: int = 0
    n_o: int = 1
    slope: float = 0.01
    activation: str = "leaky_relu"
    head: str = "value"
    bias: bool = True

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        errors = []
        if self.kind not in KINDS:
            errors.append(f"kind must be one of {KINDS}")
        if self.head not in HEADS:
            errors.append(f"head must be one of {HEADS}")
        if self.activation not in ("leaky_relu", "tanh"):
            errors.append("activation must be leaky_relu or tanh")
        if self.n_h < 1:
            errors.append("n_h must be >= 1")
        if self.n_L < 0:
            errors.append("n_L must be >= 0")
        if self.n_o < 1:
            errors.append("n_o must be >= 1")
        if self.kind == "conv" and len(self.input_shape) != 3:
            errors.append("conv models take (channels, height, width) inputs")
        if self.kind == "conv" and len(self.input_shape) == 3:
            h, w = self._conv_hw()
            if h < 1 or w < 1:
                errors.append(f"input {self.input_shape} too small for the conv stack")
        if errors:
            raise ValueError("invalid ModelSpec: " + "; ".join(errors))

    def _conv_hw(self):
        _, h, w = self.input_shape
        h, w = (h - 5) // 2 + 1, (w - 5) // 2 + 1
        return h - 4, w - 4

    @property
    def input_dim(self) -> int:
        return int(np.prod(self.input_shape))

    def to_json(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ModelSpec":
        return cls(**{**d, "input_shape": tuple(d["input_shape"])})

    def param_shapes(self) -> dict[str, tuple]:
        """Ordered parameter blocks; the layout is a pure function of the model spec."""
        shapes: dict[str, tuple] = {}
        if self.kind == "linear":
            shapes["out.w"] = (self.input_dim, self.n_o)
            if self.bias:
                shapes["out.b"] = (self.n_o,)
        elif self.kind == "mlp":
            widths = [self.input_dim] + [self.n_h] * (1 + self.n_L)
            for i in range(len(widths) - 1):
                shapes[f"l{i}.w"] = (widths[i], widths[i + 1])
                if self.bias:
                    shapes[f"l{i}.b"] = (widths[i + 1],)
            shapes["out.w"] = (self.n_h, self.n_o)
            if self.bias:
                shapes["out.b"] = (self.n_o,)
        else:
            c, n = self.input_shape[0], self.n_h
            convs = [("c0", n, c, 5), ("c1", 2 * n, n, 3), ("c2", 4 * n, 2 * n, 3)]
            convs += [(f"c{3 + i}", 4 * n, 4 * n, 3) for i in range(self.n_L)]
            for name, o, i, k in convs:
                shapes[f"{name}.w"] = (o, i, k, k)
                if self.bias:
                    shapes[f"{name}.b"] = (o,)
            h, w = self._conv_hw()
            shapes["fc.w"] = (4 * n * h * w, 4 * n)
            if self.bias:
                shapes["fc.b"] = (4 * n,)
            shapes["out.w"] = (4 * n, self.n_o)
            if self.bias:
                shapes["out.b"] = (self.n_o,)
        return shapes

    def layout(self):
        return make_layout(self.param_shapes())

    def last_hidden_weight_name(self) -> str:
        """Weight block producing the last hidden representation."""
        if self.kind == "linear":
            return "out.w"
        if self.kind == "mlp":
            return f"l{self.n_L}.w"
        return "fc.w"


def _fans(shape) -> tuple[int, int]:
    if len(shape) == 2:
        return shape[0], shape[1]
    o, i, kh, kw = shape
    return i * kh * kw, o * kh * kw


def init(spec: ModelSpec, seed: int) -> "ValueModel":
    """Uniform(+-sqrt(6 / (fan_in + fan_out))) weights, zero biases."""
    rng = Rng(derive_seed(seed, "init"))
    blocks = {}
    for name, shape in spec.param_shapes().items():
        if name.endswith(".b"):
            blocks[name] = np.zeros(shape)
        else:
            fan_in, fan_out = _fans(shape)
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            blocks[name] = rng.uniform(-bound, bound, shape)
    return ValueModel(spec, ParamVector.from_blocks(blocks))


def _act(spec: ModelSpec, x: Var) -> Var:
    return E.leaky_relu(x, spec.slope) if spec.activation == "leaky_relu" else E.tanh(x)


def apply(spec: ModelSpec, p: dict, x) -> Var:
    """Forward pass on a batch ``x`` of shape ``(N, *input_shape)`` -> ``(N, n_o)``."""
    x = E.const(x)

    def affine(h, name):
        h = h @ p[f"{name}.w"]
        return h + p[f"{name}.b"] if spec.bias else h

    if spec.kind in ("linear", "mlp"):
        h = E.reshape(x, (-1, spec.input_dim))
        if spec.kind == "mlp":
            for i in range(1 + spec.n_L):
                h = _act(spec, affine(h, f"l{i}"))
        return affine(h, "out")

    def conv(h, name, stride, pad):
        h = E.conv2d(h, p[f"{name}.w"], stride, pad)
        if spec.bias:
            h = h + E.reshape(p[f"{name}.b"], (1, -1, 1, 1))
        return _act(spec, h)

    h = conv(x, "c0", 2, 0)
    h = conv(h, "c1", 1, 0)
    h = conv(h, "c2", 1, 0)
    for i in range(spec.n_L):
        h = conv(h, f"c{3 + i}", 1, 1)
    hh, ww = spec._conv_hw()
    h = E.reshape(h, (-1, 4 * spec.n_h * hh * ww))
    h = _act(spec, affine(h, "fc"))
    return affine(h, "out")


def scalarize(spec: ModelSpec, outputs: Var) -> Var:
    """Argmax rule on a ``(n_o,)`` or ``(1, n_o)`` output.

    Classifier heads give the softmax probability of the argmax class, value
    heads the largest raw output (V itself when n_o = 1).  Ties resolve to the
    lowest index through the max op's adjoint.
    """
    outputs = E.reshape(outputs, (spec.n_o,))
    if spec.head == "classifier":
        return E.max(E.softmax(outputs, -1), -1)
    return E.max(outputs, -1)


@dataclass(frozen=True)
class ValueModel:
    spec: ModelSpec
    params: ParamVector
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.params.layout != self.spec.layout():
            raise ValueError("parameter layout does not match the model spec")

    def with_params(self, params: ParamVector) -> "ValueModel":
        return replace(self, params=params)

    def apply(self, p: dict, x) -> Var:
        return apply(self.spec, p, x)

    @cached_property
    def graph(self) -> CompGraph:
        return CompGraph.trace(lambda p, iv: apply(self.spec, p, iv["x"]),
                               {"x": (None,) + self.spec.input_shape},
                               self.spec.param_shapes())

    def scalar_program(self):
        """Program ``(params, x) -> scalar`` used for function interference."""
        spec = self.spec
        return lambda p, x: scalarize(spec, apply(spec, p, np.asarray(x)[None]))


def forward(model: ValueModel, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.shape[1:] != model.spec.input_shape:
        raise ValueError(f"input batch shape {x.shape} does not match {model.spec.input_shape}")
    return evaluate(model.graph, model.params, {"x": x})


def scalar_output(model: ValueModel, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != model.spec.input_shape:
        raise ValueError(f"input shape {x.shape} does not match {model.spec.input_shape}")
    return float(evaluate(model.scalar_program(), model.params, x))


def save_checkpoint(model: ValueModel, prefix, seed: int | None = None, extra: dict | None = None):
    prefix = Path(prefix)
    save_tnsr(prefix.with_suffix(".tnsr"), model.params.data)
    meta = {"spec": model.spec.to_json(), "seed": seed, **(extra or {})}
    prefix.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_checkpoint(prefix) -> tuple[ValueModel, dict]:
    prefix = Path(prefix)
    meta = json.loads(prefix.with_suffix(".json").read_text())
    spec = ModelSpec.from_json(meta["spec"])
    data = load_tnsr(prefix.with_suffix(".tnsr"))
    return ValueModel(spec, ParamVector(data, spec.layout())), meta
