from __future__ import annotations

import hashlib
import math
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any, Type, TypeAlias

import numpy as np
import scipy.linalg
import scipy.special

from ._private.errors import ContractError, InvalidDistributionError, NumericFailureError

__all__ = [
    "AdamState",
    "PRIMITIVES",
    "ParamSet",
    "ParamTensor",
    "Primitive",
    "Rng",
    "adam_step",
    "apply",
    "backprop",
    "check_primitive",
    "concat",
    "const",
    "gumbel_softmax",
    "init_linear",
    "lr_at",
    "register_primitive",
    "value_and_grad",
]


class ParamTensor(object):
    """
    Dense float64 array that records the primitive which produced it.

    Parameters (leaves created by :meth:`parameter`) own a gradient
    accumulator of the same shape. Intermediate tensors keep references to
    their inputs so that :func:`backprop` can walk the tape in reverse.
    """

    __array_ufunc__ = None

    def __init__(self, values: Any, *, requires_grad: bool = False, name: str | None = None) -> None:
        self.values: np.ndarray = np.asarray(values, dtype=np.float64)
        self.requires_grad: bool = requires_grad
        self.name: str | None = name
        self.grad: np.ndarray | None = None
        self._op: str | None = None
        self._inputs: tuple[ParamTensor, ...] = ()
        self._kwargs: dict[str, Any] = {}

    @classmethod
    def parameter(cls, values: Any, name: str | None = None) -> ParamTensor:
        """
        Create trainable leaf tensor with zeroed gradient accumulator.
        """
        tensor = cls(np.array(values, dtype=np.float64), requires_grad=True, name=name)
        tensor.grad = np.zeros_like(tensor.values)
        return tensor

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def T(self) -> ParamTensor:
        return self.transpose()

    def detach(self) -> ParamTensor:
        """
        Same values, no gradient flow.
        """
        return ParamTensor(self.values)

    def item(self) -> float:
        return float(self.values.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"ParamTensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def __add__(self, other: Any) -> ParamTensor:
        return apply("add", self, other)

    def __radd__(self, other: Any) -> ParamTensor:
        return apply("add", other, self)

    def __sub__(self, other: Any) -> ParamTensor:
        return apply("sub", self, other)

    def __rsub__(self, other: Any) -> ParamTensor:
        return apply("sub", other, self)

    def __mul__(self, other: Any) -> ParamTensor:
        return apply("mul", self, other)

    def __rmul__(self, other: Any) -> ParamTensor:
        return apply("mul", other, self)

    def __truediv__(self, other: Any) -> ParamTensor:
        return apply("div", self, other)

    def __rtruediv__(self, other: Any) -> ParamTensor:
        return apply("div", other, self)

    def __neg__(self) -> ParamTensor:
        return apply("neg", self)

    def __pow__(self, exponent: float) -> ParamTensor:
        return apply("pow", self, exponent=float(exponent))

    def __matmul__(self, other: Any) -> ParamTensor:
        return apply("matmul", self, other)

    def __rmatmul__(self, other: Any) -> ParamTensor:
        return apply("matmul", other, self)

    def __getitem__(self, key: Any) -> ParamTensor:
        return apply("index", self, key=key)

    def sum(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> ParamTensor:
        return apply("sum", self, axis=axis, keepdims=keepdims)

    def mean(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> ParamTensor:
        return apply("mean", self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: int) -> ParamTensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])

        return apply("reshape", self, shape=tuple(shape))

    def transpose(self, *axes: int) -> ParamTensor:
        return apply("transpose", self, axes=tuple(axes) if axes else None)

    def exp(self) -> ParamTensor:
        return apply("exp", self)

    def log(self) -> ParamTensor:
        return apply("log", self)

    def tanh(self) -> ParamTensor:
        return apply("tanh", self)

    def sigmoid(self) -> ParamTensor:
        return apply("sigmoid", self)

    def softplus(self) -> ParamTensor:
        return apply("softplus", self)

    def leaky_relu(self, slope: float = 0.01) -> ParamTensor:
        return apply("leaky_relu", self, slope=slope)

    def swish(self) -> ParamTensor:
        return self * self.sigmoid()

    def clip(self, lo: float, hi: float) -> ParamTensor:
        return apply("clip", self, lo=lo, hi=hi)

    def logsumexp(self, axis: int = -1, keepdims: bool = False) -> ParamTensor:
        return apply("logsumexp", self, axis=axis, keepdims=keepdims)


ParamSet: TypeAlias = dict[str, ParamTensor]
"""Ordered mapping of parameter name to trainable tensor."""


def const(values: Any) -> ParamTensor:
    """
    Wrap a value as a tensor that never receives gradient.
    """
    if isinstance(values, ParamTensor):
        return values.detach()

    return ParamTensor(values)


def _as_tensor(x: Any) -> ParamTensor:
    return x if isinstance(x, ParamTensor) else ParamTensor(x)


class Primitive(object):
    """
    Differentiable operation on numpy arrays.

    Subclasses implement :meth:`forward` and :meth:`backward` and are made
    available to the tape through :func:`register_primitive`.
    :meth:`sample_inputs` returns valid random inputs for the finite
    difference check.
    """

    name: str = ""

    def forward(self, *args: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError()

    def backward(self, g: np.ndarray, out: np.ndarray, *args: np.ndarray, **kwargs) -> tuple[np.ndarray | None, ...]:
        raise NotImplementedError()

    def sample_inputs(self, rng: np.random.Generator) -> tuple[list[np.ndarray], dict[str, Any]]:
        raise NotImplementedError()


PRIMITIVES: dict[str, Primitive] = {}
"""Registry of primitives available to :func:`apply`."""


def register_primitive(cls: Type[Primitive]) -> Type[Primitive]:
    """
    Class decorator that registers a primitive under its ``name``.
    """
    if not cls.name:
        raise ValueError(f"Primitive {cls.__name__} has no name")

    if cls.name in PRIMITIVES:
        raise ValueError(f"Primitive {cls.name} is already registered")

    PRIMITIVES[cls.name] = cls()
    return cls


def apply(name: str, *inputs: Any, **kwargs: Any) -> ParamTensor:
    """
    Evaluate registered primitive ``name`` and record it on the tape.

    :raises NumericFailureError: If the output contains non-finite values.
    """
    primitive = PRIMITIVES[name]
    tensors = tuple(_as_tensor(x) for x in inputs)

    with np.errstate(all="ignore"):
        out = np.asarray(primitive.forward(*(t.values for t in tensors), **kwargs), dtype=np.float64)

    if not np.all(np.isfinite(out)):
        raise NumericFailureError(name, detail=f"non-finite output of shape {out.shape}")

    result = ParamTensor(out)
    if any(t.requires_grad for t in tensors):
        result.requires_grad = True
        result._op = name
        result._inputs = tensors
        result._kwargs = kwargs

    return result


def concat(tensors: Sequence[Any], axis: int = -1) -> ParamTensor:
    return apply("concat", *tensors, axis=axis)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)

    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)

    return grad


def _topological_order(root: ParamTensor) -> list[ParamTensor]:
    order: list[ParamTensor] = []
    visited: set[int] = set()
    stack: list[tuple[ParamTensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue

        if id(node) in visited:
            continue

        visited.add(id(node))
        stack.append((node, True))
        for parent in node._inputs:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))

    return order


def backprop(loss: ParamTensor, wrt: Sequence[ParamTensor]) -> list[np.ndarray]:
    """
    Reverse-mode gradient of a scalar ``loss`` with respect to ``wrt``.

    Gradients are accumulated in a local table; ``grad`` fields of the
    parameters are left untouched.
    """
    if loss.values.size != 1:
        raise ContractError(f"Loss must be a scalar, got shape {loss.shape}")

    grads: dict[int, np.ndarray] = {}
    if loss.requires_grad:
        grads[id(loss)] = np.ones_like(loss.values)
        for node in reversed(_topological_order(loss)):
            if node._op is None:
                continue

            g = grads.pop(id(node), None)
            if g is None:
                continue

            primitive = PRIMITIVES[node._op]
            in_grads = primitive.backward(g, node.values, *(t.values for t in node._inputs), **node._kwargs)
            for tensor, tensor_grad in zip(node._inputs, in_grads):
                if tensor_grad is None or not tensor.requires_grad:
                    continue

                tensor_grad = _unbroadcast(np.asarray(tensor_grad, dtype=np.float64), tensor.shape)
                if id(tensor) in grads:
                    grads[id(tensor)] = grads[id(tensor)] + tensor_grad
                else:
                    grads[id(tensor)] = tensor_grad

    return [np.array(grads.get(id(p), np.zeros_like(p.values))) for p in wrt]


def value_and_grad(
    loss_fn: Callable[[ParamSet], Any], params: Mapping[str, ParamTensor], *, has_aux: bool = False
) -> tuple[Any, dict[str, np.ndarray]]:
    """
    Evaluate ``loss_fn(params)`` and its gradient with respect to every
    parameter.

    If ``has_aux`` is set, ``loss_fn`` returns ``(loss, aux)`` and the first
    returned value is ``(float(loss), aux)``.

    :raises NumericFailureError: If any primitive produces a non-finite value.
    """
    result = loss_fn(dict(params))
    loss, aux = result if has_aux else (result, None)
    if not isinstance(loss, ParamTensor):
        loss = ParamTensor(loss)

    grads = backprop(loss, list(params.values()))
    value = float(loss.values.reshape(-1)[0])
    return ((value, aux) if has_aux else value), dict(zip(params.keys(), grads))


def check_primitive(name: str, rng: np.random.Generator, *, eps: float = 1e-5) -> float:
    """
    Compare the analytic gradient of primitive ``name`` with central finite
    differences on one random input.

    :return: Largest relative error over all inputs.
    :rtype: float
    """
    primitive = PRIMITIVES[name]
    args, kwargs = primitive.sample_inputs(rng)
    args = [np.asarray(x, dtype=np.float64) for x in args]
    out = primitive.forward(*args, **kwargs)
    weights = rng.normal(size=np.shape(out))

    def objective(values: list[np.ndarray]) -> float:
        return float(np.sum(primitive.forward(*values, **kwargs) * weights))

    analytic = primitive.backward(weights, out, *args, **kwargs)
    worst = 0.0
    for i, arg in enumerate(args):
        numeric = np.zeros_like(arg)
        for index in np.ndindex(arg.shape):
            shifted = [x.copy() for x in args]
            shifted[i][index] = arg[index] + eps
            upper = objective(shifted)
            shifted[i][index] = arg[index] - eps
            lower = objective(shifted)
            numeric[index] = (upper - lower) / (2 * eps)

        grad = _unbroadcast(np.asarray(analytic[i], dtype=np.float64), arg.shape)
        scale = max(np.linalg.norm(grad) + np.linalg.norm(numeric), 1e-8)
        worst = max(worst, float(np.linalg.norm(grad - numeric) / scale))

    return worst


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def _expand(g: np.ndarray, shape: tuple[int, ...], axis: Any, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)

    return np.array(np.broadcast_to(g, shape))


def _away_from(x: np.ndarray, points: Sequence[float], margin: float = 0.05) -> np.ndarray:
    for point in points:
        x = np.where(np.abs(x - point) < margin, point + np.sign(x - point + 1e-12) * 2 * margin, x)

    return x


@register_primitive
class Add(Primitive):
    name = "add"

    def forward(self, a, b):
        return a + b

    def backward(self, g, out, a, b):
        return g, g

    def sample_inputs(self, rng):
        return [rng.normal(size=(3, 4)), rng.normal(size=(4,))], {}


@register_primitive
class Sub(Primitive):
    name = "sub"

    def forward(self, a, b):
        return a - b

    def backward(self, g, out, a, b):
        return g, -g

    def sample_inputs(self, rng):
        return [rng.normal(size=(3, 4)), rng.normal(size=(3, 1))], {}


@register_primitive
class Mul(Primitive):
    name = "mul"

    def forward(self, a, b):
        return a * b

    def backward(self, g, out, a, b):
        return g * b, g * a

    def sample_inputs(self, rng):
        return [rng.normal(size=(3, 4)), rng.normal(size=(3, 1))], {}


@register_primitive
class Div(Primitive):
    name = "div"

    def forward(self, a, b):
        return a / b

    def backward(self, g, out, a, b):
        return g / b, -g * a / (b * b)

    def sample_inputs(self, rng):
        b = rng.uniform(0.5, 2.0, size=(3, 4)) * rng.choice([-1.0, 1.0], size=(3, 4))
        return [rng.normal(size=(3, 4)), b], {}


@register_primitive
class Neg(Primitive):
    name = "neg"

    def forward(self, a):
        return -a

    def backward(self, g, out, a):
        return (-g,)

    def sample_inputs(self, rng):
        return [rng.normal(size=(5,))], {}


@register_primitive
class Pow(Primitive):
    name = "pow"

    def forward(self, a, exponent):
        return np.power(a, exponent)

    def backward(self, g, out, a, exponent):
        return (g * exponent * np.power(a, exponent - 1),)

    def sample_inputs(self, rng):
        return [rng.uniform(0.5, 2.0, size=(4,))], {"exponent": 2.5}


@register_primitive
class MatMul(Primitive):
    name = "matmul"

    def forward(self, a, b):
        return np.matmul(a, b)

    def backward(self, g, out, a, b):
        return np.matmul(g, _swap(b)), np.matmul(_swap(a), g)

    def sample_inputs(self, rng):
        return [rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))], {}


@register_primitive
class Affine(Primitive):
    name = "affine"

    def forward(self, x, w, b):
        return np.matmul(x, w) + b

    def backward(self, g, out, x, w, b):
        return np.matmul(g, _swap(w)), np.matmul(_swap(x), g), g

    def sample_inputs(self, rng):
        return [rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=(2,))], {}


@register_primitive
class Sum(Primitive):
    name = "sum"

    def forward(self, a, axis=None, keepdims=False):
        return np.sum(a, axis=axis, keepdims=keepdims)

    def backward(self, g, out, a, axis=None, keepdims=False):
        return (_expand(g, a.shape, axis, keepdims),)

    def sample_inputs(self, rng):
        return [rng.normal(size=(3, 4))], {"axis": 1}


@register_primitive
class Mean(Primitive):
    name = "mean"

    def forward(self, a, axis=None, keepdims=False):
        return np.mean(a, axis=axis, keepdims=keepdims)

    def backward(self, g, out, a, axis=None, keepdims=False):
        count = a.size / max(np.size(out), 1)
        return (_expand(g, a.shape, axis, keepdims) / count,)

    def sample_inputs(self, rng):
        return [rng.normal(size=(3, 4))], {"axis": 0, "keepdims": True}


@register_primitive
class Reshape(Primitive):
    name = "reshape"

    def forward(self, a, shape):
        return np.reshape(a, shape)

    def backward(self, g, out, a, shape):
        return (np.reshape(g, a.shape),)

    def sample_inputs(self, rng):
        return [rng.normal(size=(3, 4))], {"shape": (2, 6)}


@register_primitive
class Transpose(Primitive):
    name = "transpose"

    def forward(self, a, axes=None):
        return np.transpose(a, axes)

    def backward(self, g, out, a, axes=None):
        if axes is None:
            return (np.transpose(g),)

        return (np.transpose(g, np.argsort(axes)),)

    def sample_inputs(self, rng):
        return [rng.normal(size=(2, 3, 4))], {"axes": (1, 0, 2)}


@register_primitive
class Index(Primitive):
    name = "index"

    def forward(self, a, key):
        return a[key]

    def backward(self, g, out, a, key):
        grad = np.zeros_like(a)
        np.add.at(grad, key, g)
        return (grad,)

    def sample_inputs(self, rng):
        return [rng.normal(size=(5, 3))], {"key": (np.array([0, 2, 2, 4]),)}


@register_primitive
class Concat(Primitive):
    name = "concat"

    def forward(self, *args, axis=-1):
        return np.concatenate(args, axis=axis)

    def backward(self, g, out, *args, axis=-1):
        bounds = np.cumsum([x.shape[axis] for x in args])[:-1]
        return tuple(np.split(g, bounds, axis=axis))

    def sample_inputs(self, rng):
        return [rng.normal(size=(2, 3)), rng.normal(size=(2, 2))], {"axis": 1}


@register_primitive
class Exp(Primitive):
    name = "exp"

    def forward(self, a):
        return np.exp(a)

    def backward(self, g, out, a):
        return (g * out,)

    def sample_inputs(self, rng):
        return [rng.normal(size=(6,))], {}


@register_primitive
class Log(Primitive):
    name = "log"

    def forward(self, a):
        return np.log(a)

    def backward(self, g, out, a):
        return (g / a,)

    def sample_inputs(self, rng):
        return [rng.uniform(0.5, 3.0, size=(6,))], {}


@register_primitive
class Tanh(Primitive):
    name = "tanh"

    def forward(self, a):
        return np.tanh(a)

    def backward(self, g, out, a):
        return (g * (1.0 - out * out),)

    def sample_inputs(self, rng):
        return [2.0 * rng.normal(size=(6,))], {}


@register_primitive
class Sigmoid(Primitive):
    name = "sigmoid"

    def forward(self, a):
        return scipy.special.expit(a)

    def backward(self, g, out, a):
        return (g * out * (1.0 - out),)

    def sample_inputs(self, rng):
        return [2.0 * rng.normal(size=(6,))], {}


@register_primitive
class Softplus(Primitive):
    name = "softplus"

    def forward(self, a):
        return np.logaddexp(0.0, a)

    def backward(self, g, out, a):
        return (g * scipy.special.expit(a),)

    def sample_inputs(self, rng):
        return [2.0 * rng.normal(size=(6,))], {}


@register_primitive
class LeakyReLU(Primitive):
    name = "leaky_relu"

    def forward(self, a, slope=0.01):
        return np.where(a > 0, a, slope * a)

    def backward(self, g, out, a, slope=0.01):
        return (g * np.where(a > 0, 1.0, slope),)

    def sample_inputs(self, rng):
        return [_away_from(2.0 * rng.normal(size=(6,)), [0.0])], {"slope": 0.1}


@register_primitive
class Clip(Primitive):
    name = "clip"

    def forward(self, a, lo, hi):
        return np.clip(a, lo, hi)

    def backward(self, g, out, a, lo, hi):
        return (g * ((a >= lo) & (a <= hi)),)

    def sample_inputs(self, rng):
        return [_away_from(2.0 * rng.normal(size=(8,)), [-1.0, 1.0])], {"lo": -1.0, "hi": 1.0}


@register_primitive
class GaussianLogPdf(Primitive):
    """
    Elementwise log N(x | mean, exp(log_std)^2).
    """

    name = "gaussian_logpdf"

    def forward(self, x, mean, log_std):
        scaled = (x - mean) * np.exp(-log_std)
        return -0.5 * scaled * scaled - log_std - 0.5 * math.log(2 * math.pi)

    def backward(self, g, out, x, mean, log_std):
        inv_var = np.exp(-2.0 * log_std)
        diff = x - mean
        return -g * diff * inv_var, g * diff * inv_var, g * (diff * diff * inv_var - 1.0)

    def sample_inputs(self, rng):
        return [rng.normal(size=(3, 2)), rng.normal(size=(3, 2)), rng.uniform(-1.0, 1.0, size=(3, 2))], {}


@register_primitive
class LogSumExp(Primitive):
    name = "logsumexp"

    def forward(self, a, axis=-1, keepdims=False):
        return scipy.special.logsumexp(a, axis=axis, keepdims=keepdims)

    def backward(self, g, out, a, axis=-1, keepdims=False):
        full = out if keepdims else np.expand_dims(out, axis)
        return (_expand(g, a.shape, axis, keepdims) * np.exp(a - full),)

    def sample_inputs(self, rng):
        return [rng.normal(size=(3, 4))], {"axis": -1}


@register_primitive
class Softmax(Primitive):
    """
    Softmax over ``axis`` restricted to entries where ``mask`` is true.
    Masked entries get exactly zero mass.
    """

    name = "softmax"

    def forward(self, a, mask=None, axis=-1):
        if mask is None:
            mask = np.ones(a.shape, dtype=bool)

        shifted = np.where(mask, a, -np.inf)
        shifted = shifted - np.max(shifted, axis=axis, keepdims=True)
        e = np.where(mask, np.exp(shifted), 0.0)
        return e / np.sum(e, axis=axis, keepdims=True)

    def backward(self, g, out, a, mask=None, axis=-1):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    def sample_inputs(self, rng):
        mask = np.ones((3, 4), dtype=bool)
        mask[:, 1] = False
        return [rng.normal(size=(3, 4))], {"mask": mask, "axis": -1}


@register_primitive
class TraceExpm(Primitive):
    """
    tr(exp(A)) of a square matrix, gradient exp(A)^T.
    """

    name = "trace_expm"

    def forward(self, a):
        return np.trace(scipy.linalg.expm(a))

    def backward(self, g, out, a):
        return (g * scipy.linalg.expm(a).T,)

    def sample_inputs(self, rng):
        return [0.5 * rng.normal(size=(3, 3))], {}


@register_primitive
class LogAbsDet(Primitive):
    name = "logabsdet"

    def forward(self, a):
        return np.linalg.slogdet(a)[1]

    def backward(self, g, out, a):
        return (g * np.linalg.inv(a).T,)

    def sample_inputs(self, rng):
        return [rng.normal(size=(3, 3)) + 3.0 * np.eye(3)], {}


class Rng(object):
    """
    Counter-based random stream keyed by ``(seed, stream)``.

    Child streams are derived from a purpose string and a step counter so
    that adding a consumer never perturbs the draws of other consumers.
    """

    def __init__(self, seed: int, stream: int = 0) -> None:
        self.seed: int = int(seed)
        """
        Root seed.
        """

        self.stream: int = int(stream)
        """
        Stream identifier, derived from purpose and step for child streams.
        """

        self.generator: np.random.Generator = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,)))
        )

    def child(self, purpose: str, step: int = 0) -> Rng:
        """
        Derive an independent stream for ``purpose`` at ``step``.
        """
        digest = hashlib.blake2b(f"{self.stream}:{purpose}:{step}".encode(), digest_size=8).digest()
        return Rng(self.seed, int.from_bytes(digest, "little"))

    def normal(self, loc: float = 0.0, scale: float = 1.0, size: Any = None) -> np.ndarray:
        return self.generator.normal(loc, scale, size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size: Any = None) -> np.ndarray:
        return self.generator.uniform(low, high, size)

    def integers(self, low: int, high: int | None = None, size: Any = None) -> np.ndarray:
        return self.generator.integers(low, high, size)

    def gumbel(self, size: Any = None) -> np.ndarray:
        return self.generator.gumbel(size=size)

    def logistic(self, size: Any = None) -> np.ndarray:
        return self.generator.logistic(size=size)

    def bernoulli(self, p: Any, size: Any = None) -> np.ndarray:
        return (self.generator.random(size if size is not None else np.shape(p)) < p).astype(np.float64)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def choice(self, a: Any, size: Any = None, p: Any = None) -> Any:
        return self.generator.choice(a, size=size, p=p)


def gumbel_softmax(
    logits: ParamTensor | np.ndarray, temperature: float, rng: Rng, *, hard: bool = False
) -> ParamTensor:
    """
    Relaxed one-hot sample over the last axis.

    Entries with ``-inf`` logits receive zero mass. With ``hard`` set, the
    returned values are the one-hot argmax of the relaxed sample while the
    gradient is that of the relaxed sample (straight-through).

    :raises ContractError: If the temperature is not positive or a logit is
        ``+inf`` or ``nan``.
    :raises InvalidDistributionError: If all logits of a row are ``-inf``.
    """
    if temperature <= 0:
        raise ContractError(f"Temperature must be positive, got {temperature}")

    tensor = logits if isinstance(logits, ParamTensor) else ParamTensor(logits)
    values = tensor.values
    if np.any(np.isnan(values)) or np.any(np.isposinf(values)):
        raise ContractError("Logits must be finite or -inf")

    mask = np.isfinite(values)
    if not np.all(mask.any(axis=-1)):
        raise InvalidDistributionError("All logits of a categorical are -inf")

    noise = np.where(mask, rng.gumbel(size=values.shape), 0.0)
    if not np.all(mask):
        # Only constant leaves may hold -inf, tape tensors are always finite.
        tensor = ParamTensor(np.where(mask, values, 0.0))

    soft = apply("softmax", (tensor + noise) * (1.0 / temperature), mask=mask, axis=-1)
    if not hard:
        return soft

    one_hot = np.zeros_like(soft.values)
    np.put_along_axis(one_hot, np.argmax(soft.values, axis=-1)[..., None], 1.0, axis=-1)
    return soft + const(one_hot - soft.values)


def init_linear(
    rng: Rng, fan_in: int, fan_out: int, *, batch: tuple[int, ...] = (), gain: float = 1.0
) -> tuple[np.ndarray, np.ndarray]:
    """
    Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weight and bias, optionally
    stacked along leading ``batch`` dimensions.
    """
    bound = gain / math.sqrt(max(fan_in, 1))
    weight = rng.uniform(-bound, bound, size=batch + (fan_in, fan_out))
    bias = rng.uniform(-bound, bound, size=batch + (1, fan_out))
    return weight, bias


@dataclass
class AdamState(object):
    """
    Moment accumulators of :func:`adam_step`.
    """

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, ParamTensor], grads: Mapping[str, np.ndarray], state: AdamState, lr: float
) -> None:
    """
    In-place Adam update of every parameter that has a gradient.

    :raises NumericFailureError: If any gradient is non-finite; parameters
        and state are left untouched.
    """
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NumericFailureError("adam_step", detail=f'non-finite gradient of "{name}"')

    state.step += 1
    t = state.step
    for name, param in params.items():
        if name not in grads:
            continue

        grad = grads[name]
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - state.beta1) * grad if m is None else state.beta1 * m + (1.0 - state.beta1) * grad
        v = (1.0 - state.beta2) * grad * grad if v is None else state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.m[name] = m
        state.v[name] = v

        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        param.values -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


def lr_at(step: int, total_steps: int, base: float = 1e-3, warmup: int = 100, floor: float = 5e-5) -> float:
    """
    Linear warmup from 0 to ``base`` over ``warmup`` steps, then cosine decay
    to ``floor`` at ``total_steps``.
    """
    if warmup > 0 and step < warmup:
        return base * step / warmup

    if total_steps <= warmup:
        return base

    progress = min(max((step - warmup) / (total_steps - warmup), 0.0), 1.0)
    return floor + 0.5 * (base - floor) * (1.0 + math.cos(math.pi * progress))
