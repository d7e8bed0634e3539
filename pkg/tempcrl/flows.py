from __future__ import annotations

from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any

import numpy as np

from ._private.container import read_container, write_container
from ._private.errors import CheckpointError, ContractError
from .diffcore import ParamSet, ParamTensor, Rng, apply, const, init_linear

__all__ = [
    "ActNorm",
    "AffineCoupling",
    "FlowLayer",
    "FlowStack",
    "OrthogonalMix",
    "flow_apply",
    "flow_forward",
    "flow_from_spec",
    "flow_inverse",
    "load_flow",
    "make_encoder",
    "make_entangler",
    "save_flow",
]


def _param(values: np.ndarray, trainable: bool) -> ParamTensor:
    return ParamTensor.parameter(values) if trainable else ParamTensor(np.array(values, dtype=np.float64))


class FlowLayer(ABC):
    """
    Invertible transform of ``(B, D)`` arrays with exact log-determinant.
    """

    kind: str = ""

    def __init__(self, dim: int, trainable: bool) -> None:
        self.dim: int = dim
        self.trainable: bool = trainable

    @abstractmethod
    def state(self) -> ParamSet:
        """
        All arrays of the layer, trainable or not, in declaration order.
        """
        pass

    @abstractmethod
    def forward(self, x: ParamTensor) -> tuple[ParamTensor, ParamTensor]:
        """
        :return: Output ``(B, D)`` and per-sample log-determinant ``(B,)``.
        """
        pass

    @abstractmethod
    def inverse(self, z: np.ndarray) -> np.ndarray:
        pass

    def spec(self) -> dict[str, Any]:
        return {"kind": self.kind, "dim": self.dim, "trainable": self.trainable}

    def params(self) -> ParamSet:
        return self.state() if self.trainable else {}

    def _zeros_logdet(self, x: ParamTensor) -> ParamTensor:
        return const(np.zeros(x.shape[0]))


class ActNorm(FlowLayer):
    """
    Per-dimension affine map ``z = x * exp(log_scale) + shift``.
    """

    kind = "actnorm"

    def __init__(self, dim: int, trainable: bool = True) -> None:
        super().__init__(dim, trainable)
        self.log_scale: ParamTensor = _param(np.zeros(dim), trainable)
        self.shift: ParamTensor = _param(np.zeros(dim), trainable)

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale.values)

    def state(self) -> ParamSet:
        return {"log_scale": self.log_scale, "shift": self.shift}

    def initialize(self, x: np.ndarray) -> None:
        """
        Data-dependent init: outputs on ``x`` get zero mean and unit std.
        """
        mean = x.mean(axis=0)
        std = x.std(axis=0) + 1e-6
        self.log_scale.values[...] = -np.log(std)
        self.shift.values[...] = -mean / std

    def forward(self, x: ParamTensor) -> tuple[ParamTensor, ParamTensor]:
        z = x * self.log_scale.exp() + self.shift
        logdet = const(np.ones(x.shape[0])) * self.log_scale.sum()
        return z, logdet

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return (z - self.shift.values) / self.scale


class OrthogonalMix(FlowLayer):
    """
    Invertible linear map ``z = x @ W^T`` initialized to an orthogonal
    matrix. A frozen mix stays orthogonal and contributes log-determinant 0;
    a trainable one may become any invertible matrix and contributes
    ``log|det W|``.
    """

    kind = "mix"

    def __init__(self, dim: int, trainable: bool = True, rng: Rng | None = None) -> None:
        super().__init__(dim, trainable)
        if rng is None:
            weight = np.eye(dim)
        else:
            q, r = np.linalg.qr(rng.normal(size=(dim, dim)))
            weight = q * np.sign(np.diag(r))

        self.weight: ParamTensor = _param(weight, trainable)

    def state(self) -> ParamSet:
        return {"weight": self.weight}

    def forward(self, x: ParamTensor) -> tuple[ParamTensor, ParamTensor]:
        z = x @ self.weight.T
        if not self.trainable:
            return z, self._zeros_logdet(x)

        return z, const(np.ones(x.shape[0])) * apply("logabsdet", self.weight)

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return np.linalg.solve(self.weight.values, z.T).T


class AffineCoupling(FlowLayer):
    """
    Autoregressive affine coupling.

    Coordinate ``order[i]`` is transformed with shift (and scale) computed
    by a masked conditioner from the coordinates ``order[:i]``. The scale
    exponent is bounded by ``scale_bound * tanh(raw / scale_bound)``.
    """

    kind = "coupling"
    scale_bound = 2.0

    def __init__(
        self,
        dim: int,
        rng: Rng,
        *,
        scaled: bool,
        hidden: int = 32,
        order: list[int] | None = None,
        trainable: bool = True,
        zero_init: bool = True,
    ) -> None:
        super().__init__(dim, trainable)
        self.scaled: bool = scaled
        self.hidden: int = hidden
        self.order: list[int] = list(order) if order is not None else list(range(dim))
        if sorted(self.order) != list(range(dim)):
            raise ContractError(f"Coupling order must be a permutation of 0..{dim - 1}")

        degree = np.empty(dim, dtype=np.int64)
        degree[self.order] = np.arange(dim)
        hidden_degree = np.arange(hidden) % max(dim - 1, 1)
        self.in_mask: np.ndarray = (degree[:, None] <= hidden_degree[None, :]).astype(np.float64)
        self.out_mask: np.ndarray = (hidden_degree[:, None] < degree[None, :]).astype(np.float64)

        w1, b1 = init_linear(rng.child("hidden"), dim, hidden)
        self.w1: ParamTensor = _param(w1, trainable)
        self.b1: ParamTensor = _param(b1[0], trainable)

        heads = 2 if scaled else 1
        if zero_init:
            w2, b2 = np.zeros((hidden, heads * dim)), np.zeros((1, heads * dim))
        else:
            w2, b2 = init_linear(rng.child("output"), hidden, heads * dim)

        self.w2: ParamTensor = _param(w2, trainable)
        self.b2: ParamTensor = _param(b2[0], trainable)

    def state(self) -> ParamSet:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def spec(self) -> dict[str, Any]:
        return {**super().spec(), "scaled": self.scaled, "hidden": self.hidden, "order": self.order}

    def conditioner(self, x: ParamTensor) -> tuple[ParamTensor, ParamTensor | None]:
        """
        :return: Shift and log-scale (``None`` for shift-only couplings).
        """
        heads = 2 if self.scaled else 1
        out_mask = np.tile(self.out_mask, (1, heads))
        h = apply("affine", x, self.w1 * self.in_mask, self.b1).tanh()
        out = apply("affine", h, self.w2 * out_mask, self.b2)
        shift = out[:, : self.dim]
        if not self.scaled:
            return shift, None

        raw = out[:, self.dim :]
        log_scale = (raw * (1.0 / self.scale_bound)).tanh() * self.scale_bound
        return shift, log_scale

    def calibrate_shift(self, x: np.ndarray, target_std: float) -> None:
        """
        Rescale the output layer so that the conditioned shifts have average
        standard deviation ``target_std`` on ``x``.
        """
        shift, _ = self.conditioner(const(x))
        std = shift.values.std(axis=0)
        conditioned = self.out_mask.any(axis=0)
        if not conditioned.any() or std[conditioned].mean() <= 0:
            return

        factor = target_std / std[conditioned].mean()
        self.w2.values[...] *= factor
        self.b2.values[...] *= factor

    def forward(self, x: ParamTensor) -> tuple[ParamTensor, ParamTensor]:
        shift, log_scale = self.conditioner(x)
        if log_scale is None:
            return x + shift, self._zeros_logdet(x)

        return x * log_scale.exp() + shift, log_scale.sum(axis=-1)

    def inverse(self, z: np.ndarray) -> np.ndarray:
        x = np.zeros_like(z)
        for d in self.order:
            shift, log_scale = self.conditioner(const(x))
            if log_scale is None:
                x[:, d] = z[:, d] - shift.values[:, d]
            else:
                x[:, d] = (z[:, d] - shift.values[:, d]) * np.exp(-log_scale.values[:, d])

        return x


class FlowStack(object):
    """
    Ordered composition of flow layers acting on dimension ``dim``.
    """

    def __init__(self, dim: int, layers: list[FlowLayer] | None = None) -> None:
        self.dim: int = dim
        self.layers: list[FlowLayer] = list(layers) if layers is not None else []
        for layer in self.layers:
            if layer.dim != dim:
                raise ContractError(f"Layer {layer.kind} has dim {layer.dim}, stack has dim {dim}")

    @property
    def trainable(self) -> bool:
        return any(layer.trainable for layer in self.layers)

    def params(self) -> ParamSet:
        return {f"{i}.{name}": p for i, layer in enumerate(self.layers) for name, p in layer.params().items()}

    def state(self) -> ParamSet:
        return {f"{i}.{name}": p for i, layer in enumerate(self.layers) for name, p in layer.state().items()}

    def spec(self) -> dict[str, Any]:
        return {"dim": self.dim, "layers": [layer.spec() for layer in self.layers]}

    def forward(self, x: ParamTensor) -> tuple[ParamTensor, ParamTensor]:
        logdet = const(np.zeros(x.shape[0]))
        for layer in self.layers:
            x, layer_logdet = layer.forward(x)
            logdet = logdet + layer_logdet

        return x, logdet

    def inverse(self, z: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            z = layer.inverse(z)

        return z


def flow_forward(stack: FlowStack, x: ParamTensor | np.ndarray) -> tuple[ParamTensor, ParamTensor]:
    """
    Forward pass with log-determinant, differentiable with respect to the
    trainable layers. A single ``(D,)`` vector yields ``(D,)`` and a scalar.

    :raises NumericFailureError: If a layer produces non-finite values.
    """
    tensor = x if isinstance(x, ParamTensor) else const(x)
    if tensor.ndim == 1:
        z, logdet = stack.forward(tensor.reshape(1, -1))
        return z.reshape(-1), logdet.sum()

    return stack.forward(tensor)


def flow_inverse(stack: FlowStack, z: np.ndarray) -> np.ndarray:
    """
    Exact inverse of :func:`flow_forward`; couplings are inverted coordinate
    by coordinate in autoregressive order.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        return stack.inverse(z[None, :])[0]

    return stack.inverse(z)


def flow_apply(stack: FlowStack, x: np.ndarray, chunk: int = 8192) -> np.ndarray:
    """
    Forward values only, evaluated in chunks.
    """
    x = np.asarray(x, dtype=np.float64)
    out = [stack.forward(const(x[i : i + chunk]))[0].values for i in range(0, x.shape[0], chunk)]
    return np.concatenate(out, axis=0) if out else np.zeros((0, stack.dim))


def make_entangler(dim: int, rng: Rng, calibration: np.ndarray | None = None, target_std: float = 0.2) -> FlowStack:
    """
    Fixed random observation function.

    Layers: ActNorm, shift-only coupling, ActNorm, random orthogonal mix,
    shift-only coupling (reversed order), ActNorm. ActNorm layers are
    initialized on ``calibration`` samples (10^4 standard normal samples if
    not given) so that their outputs are standardized; coupling conditioners
    are rescaled to output standard deviation ``target_std``.
    """
    if calibration is None:
        calibration = rng.child("calibration").normal(size=(10000, dim))

    layers: list[FlowLayer] = [
        ActNorm(dim, trainable=False),
        AffineCoupling(dim, rng.child("coupling", 0), scaled=False, trainable=False, zero_init=False),
        ActNorm(dim, trainable=False),
        OrthogonalMix(dim, trainable=False, rng=rng.child("mix")),
        AffineCoupling(
            dim,
            rng.child("coupling", 1),
            scaled=False,
            order=list(reversed(range(dim))),
            trainable=False,
            zero_init=False,
        ),
        ActNorm(dim, trainable=False),
    ]

    h = np.asarray(calibration, dtype=np.float64)
    for layer in layers:
        if isinstance(layer, ActNorm):
            layer.initialize(h)
        elif isinstance(layer, AffineCoupling):
            layer.calibrate_shift(h, target_std)

        h = layer.forward(const(h))[0].values

    return FlowStack(dim, layers)


def make_encoder(dim: int, rng: Rng, layers: int = 4, hidden: int = 32) -> FlowStack:
    """
    Trainable flow: ``layers`` blocks of ActNorm, OrthogonalMix and scaled
    autoregressive coupling. Every block starts as the identity map.
    """
    stack: list[FlowLayer] = []
    for block in range(layers):
        order = list(range(dim)) if block % 2 == 0 else list(reversed(range(dim)))
        stack.append(ActNorm(dim))
        stack.append(OrthogonalMix(dim))
        stack.append(AffineCoupling(dim, rng.child("coupling", block), scaled=True, hidden=hidden, order=order))

    return FlowStack(dim, stack)


def flow_from_spec(spec: dict[str, Any], arrays: dict[str, np.ndarray], prefix: str = "") -> FlowStack:
    """
    Rebuild a stack from :meth:`FlowStack.spec` and its state arrays.

    :raises CheckpointError: If an array is missing or has a wrong shape.
    """
    dim = int(spec["dim"])
    layers: list[FlowLayer] = []
    dummy = Rng(0)
    for layer_spec in spec["layers"]:
        trainable = bool(layer_spec["trainable"])
        match layer_spec["kind"]:
            case ActNorm.kind:
                layers.append(ActNorm(dim, trainable=trainable))
            case OrthogonalMix.kind:
                layers.append(OrthogonalMix(dim, trainable=trainable))
            case AffineCoupling.kind:
                layers.append(
                    AffineCoupling(
                        dim,
                        dummy,
                        scaled=bool(layer_spec["scaled"]),
                        hidden=int(layer_spec["hidden"]),
                        order=list(layer_spec["order"]),
                        trainable=trainable,
                    )
                )
            case _:
                raise CheckpointError(f"Unknown flow layer kind: {layer_spec['kind']}")

    stack = FlowStack(dim, layers)
    for name, tensor in stack.state().items():
        key = prefix + name
        if key not in arrays:
            raise CheckpointError(f'Flow array "{key}" is missing')

        if arrays[key].shape != tensor.shape:
            raise CheckpointError(f'Flow array "{key}" has shape {arrays[key].shape}, expected {tensor.shape}')

        tensor.values[...] = arrays[key]

    return stack


def save_flow(stack: FlowStack, path: str | Path) -> None:
    write_container(path, {"kind": "flow", "flow": stack.spec()}, [(k, v.values) for k, v in stack.state().items()])


def load_flow(path: str | Path) -> FlowStack:
    header, arrays = read_container(path)
    if header.get("kind") != "flow":
        raise CheckpointError(f"{path} does not contain a flow")

    return flow_from_spec(header["flow"], arrays)
