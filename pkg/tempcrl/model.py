from __future__ import annotations

from dataclasses import dataclass

import networkx as nx
import numpy as np

from ._private.errors import ContractError
from .diffcore import ParamSet, ParamTensor, Rng, apply, concat, const, gumbel_softmax, init_linear
from .flows import FlowStack, flow_apply, make_encoder

__all__ = [
    "Assignment",
    "EncoderModel",
    "PriorNet",
    "encode_pair",
    "groups_of",
    "prior_logprob",
    "sample_assignment",
    "total_loglik",
]

LOG_STD_MIN = -8.0
LOG_STD_MAX = 4.0


@dataclass
class Assignment(object):
    """
    Categorical map of every latent dimension to one of ``K + 1`` groups;
    column 0 is the group without intervention target.
    """

    logits: ParamTensor
    temperature: float = 1.0

    @classmethod
    def create(cls, M: int, K: int, temperature: float = 1.0) -> Assignment:
        return cls(ParamTensor.parameter(np.zeros((M, K + 1))), temperature)

    @property
    def M(self) -> int:
        return self.logits.shape[0]

    @property
    def K(self) -> int:
        return self.logits.shape[1] - 1

    def hard(self) -> np.ndarray:
        """
        Row-argmax group of every latent.
        """
        return np.argmax(self.logits.values, axis=1)

    def one_hot(self) -> np.ndarray:
        return np.eye(self.K + 1)[self.hard()]


def groups_of(hard: np.ndarray, K: int) -> list[list[int]]:
    """
    Latent indices of each group ``0..K`` for a hard assignment.
    """
    return [[int(m) for m in np.nonzero(hard == i)[0]] for i in range(K + 1)]


class PriorNet(object):
    """
    One 2-layer network per latent dimension predicting mean and log-std of
    ``z_m^{t+1}``. Input layout: ``[z^t, z^{t+1}, I, mask_z, mask_I]``.
    The output layer starts at zero, i.e. as a standard normal prior.
    """

    def __init__(self, M: int, K: int, rng: Rng, hidden: int = 32) -> None:
        self.M: int = M
        self.K: int = K
        self.hidden: int = hidden

        w1, b1 = init_linear(rng.child("hidden"), self.input_size, hidden, batch=(M,))
        self.w1: ParamTensor = ParamTensor.parameter(w1)
        self.b1: ParamTensor = ParamTensor.parameter(b1)
        self.w_mean: ParamTensor = ParamTensor.parameter(np.zeros((M, hidden, 1)))
        self.b_mean: ParamTensor = ParamTensor.parameter(np.zeros((M, 1, 1)))
        self.w_log_std: ParamTensor = ParamTensor.parameter(np.zeros((M, hidden, 1)))
        self.b_log_std: ParamTensor = ParamTensor.parameter(np.zeros((M, 1, 1)))

    @property
    def input_size(self) -> int:
        return 3 * self.M + 2 * self.K

    def params(self) -> ParamSet:
        return {
            "w1": self.w1,
            "b1": self.b1,
            "w_mean": self.w_mean,
            "b_mean": self.b_mean,
            "w_log_std": self.w_log_std,
            "b_log_std": self.b_log_std,
        }

    def __call__(self, inputs: ParamTensor) -> tuple[ParamTensor, ParamTensor]:
        """
        :param inputs: ``(..., M, B, 3M + 2K)``.
        :return: Mean and clamped log-std, both ``(..., M, B)``.
        """
        h = (inputs @ self.w1 + self.b1).swish()
        shape = h.shape[:-1]
        mean = (h @ self.w_mean + self.b_mean).reshape(shape)
        log_std = (h @ self.w_log_std + self.b_log_std).reshape(shape).clip(LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std


class EncoderModel(object):
    """
    Trainable flow, latent assignment and prior networks.
    """

    def __init__(self, encoder: FlowStack, assignment: Assignment, prior: PriorNet) -> None:
        if assignment.M != encoder.dim or prior.M != encoder.dim:
            raise ContractError("Flow, assignment and prior must share the latent dimension")

        self.encoder: FlowStack = encoder
        self.assignment: Assignment = assignment
        self.prior: PriorNet = prior

    @classmethod
    def create(
        cls, D: int, K: int, rng: Rng, *, layers: int = 4, hidden: int = 32, temperature: float = 1.0
    ) -> EncoderModel:
        return cls(
            make_encoder(D, rng.child("encoder"), layers=layers, hidden=hidden),
            Assignment.create(D, K, temperature),
            PriorNet(D, K, rng.child("prior"), hidden=hidden),
        )

    @property
    def M(self) -> int:
        return self.encoder.dim

    @property
    def K(self) -> int:
        return self.assignment.K

    def params(self) -> ParamSet:
        params: ParamSet = {f"encoder.{k}": v for k, v in self.encoder.params().items()}
        params["assignment.logits"] = self.assignment.logits
        params.update({f"prior.{k}": v for k, v in self.prior.params().items()})
        return params

    def encode(self, x: np.ndarray) -> np.ndarray:
        return flow_apply(self.encoder, x)


def sample_assignment(
    assignment: Assignment, rng: Rng, batch: int | None = None, *, hard: bool = False
) -> ParamTensor:
    """
    One relaxed one-hot draw per latent row, or per latent row and batch
    element if ``batch`` is given (shape ``(batch, M, K + 1)``).
    """
    logits = assignment.logits
    if batch is not None:
        logits = logits + const(np.zeros((batch,) + logits.shape))

    return gumbel_softmax(logits, assignment.temperature, rng, hard=hard)


def _swap_last(x: ParamTensor) -> ParamTensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return x.transpose(*axes)


def _check_acyclic(graph: np.ndarray) -> None:
    causal = np.asarray(graph)[..., 1:, 1:] > 0.5
    for adjacency in causal.reshape((-1,) + causal.shape[-2:]):
        if not nx.is_directed_acyclic_graph(nx.from_numpy_array(adjacency.astype(np.int64), create_using=nx.DiGraph)):
            raise ContractError("Graph sample over causal groups contains a cycle")


def prior_logprob(
    model: EncoderModel,
    z_t: ParamTensor | np.ndarray,
    z_t1: ParamTensor | np.ndarray,
    targets: np.ndarray,
    assign_sample: ParamTensor | np.ndarray,
    graph_sample: ParamTensor | np.ndarray,
    *,
    temporal_mask: np.ndarray | None = None,
    check_acyclic: bool = True,
) -> ParamTensor:
    """
    Per-group log-probability of ``z^{t+1}`` under the structured prior.

    Shapes: ``z_t``, ``z_t1`` are ``(B, M)`` (or ``(M,)``), ``targets``
    ``(B, K)``, ``assign_sample`` ``(M, K + 1)`` or ``(B, M, K + 1)``.
    ``graph_sample`` is ``(..., G, K + 1, K + 1)`` with ``G`` either 1 or
    ``B``; leading dimensions (e.g. several sampled graphs) are kept in the
    output of shape ``(..., B, K + 1)``. Entry ``(g, i)`` of a graph means
    group ``g`` is an instantaneous parent of group ``i``.

    ``temporal_mask`` (``(..., K + 1, K + 1)``, entry ``(g, i)`` meaning
    group ``g`` at ``t`` is a parent of group ``i``) restricts the ``z^t``
    channel; by default every latent sees all of ``z^t``.

    Latents of an intervened group see neither ``z^t`` nor their parents.
    Column 0 of the graph and its diagonal are ignored, so group 0 has no
    instantaneous parents.

    :raises ContractError: If ``check_acyclic`` is set and a graph sample has
        a cycle over groups ``1..K``.
    """
    single = np.ndim(z_t1.values if isinstance(z_t1, ParamTensor) else z_t1) == 1
    z_t = z_t if isinstance(z_t, ParamTensor) else const(z_t)
    z_t1 = z_t1 if isinstance(z_t1, ParamTensor) else const(z_t1)
    if single:
        z_t, z_t1 = z_t.reshape(1, -1), z_t1.reshape(1, -1)

    B, M = z_t1.shape
    K = model.K
    targets = np.asarray(targets, dtype=np.float64).reshape(B, K)

    assign = assign_sample if isinstance(assign_sample, ParamTensor) else const(assign_sample)
    if assign.ndim == 2:
        assign = assign + const(np.zeros((B, M, K + 1)))

    graph = graph_sample if isinstance(graph_sample, ParamTensor) else const(graph_sample)
    if graph.ndim == 2:
        graph = graph.reshape(1, K + 1, K + 1)

    if check_acyclic:
        _check_acyclic(graph.values)

    fixed = np.ones((K + 1, K + 1)) - np.eye(K + 1)
    fixed[:, 0] = 0.0
    graph = graph * fixed

    causal = assign[:, :, 1:]
    keep = 1.0 - (causal * targets[:, None, :]).sum(axis=-1)
    off_diagonal = 1.0 - np.eye(M)

    mask_z = (assign @ _swap_last(graph)) @ _swap_last(assign)
    mask_z = mask_z * keep.reshape(B, M, 1) * off_diagonal

    if temporal_mask is None:
        z_t_in = z_t.reshape(B, 1, M) * keep.reshape(B, M, 1)
    else:
        temporal = np.swapaxes(np.asarray(temporal_mask, dtype=np.float64), -1, -2)
        temporal = (assign @ const(temporal)) @ _swap_last(assign)
        z_t_in = z_t.reshape(B, 1, M) * temporal * keep.reshape(B, M, 1)

    z_t1_in = z_t1.reshape(B, 1, M) * mask_z
    targets_in = causal * targets[:, None, :]

    lead = np.broadcast_shapes(mask_z.shape, z_t_in.shape)[:-2]
    zeros_m = const(np.zeros(lead + (M, M)))
    zeros_k = const(np.zeros(lead + (M, K)))
    inputs = concat(
        [z_t_in + zeros_m, z_t1_in + zeros_m, targets_in + zeros_k, mask_z + zeros_m, causal + zeros_k], axis=-1
    )

    axes = list(range(inputs.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    mean, log_std = model.prior(inputs.transpose(*axes))
    mean, log_std = _swap_last(mean), _swap_last(log_std)
    logp = apply("gaussian_logpdf", z_t1, mean, log_std)
    per_group = (logp.reshape(logp.shape + (1,)) * assign).sum(axis=-2)

    if single and per_group.ndim == 2:
        return per_group.reshape(K + 1)

    return per_group


def encode_pair(
    model: EncoderModel, x_t: np.ndarray, x_t1: np.ndarray
) -> tuple[ParamTensor, ParamTensor, ParamTensor]:
    """
    Encode both observations in one flow pass.

    :return: ``z^t``, ``z^{t+1}`` and the log-determinant of the ``t+1``
        encoding.
    """
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    x_t1 = np.atleast_2d(np.asarray(x_t1, dtype=np.float64))
    B = x_t.shape[0]
    z, logdet = model.encoder.forward(const(np.concatenate([x_t, x_t1], axis=0)))
    return z[:B], z[B:], logdet[B:]


def total_loglik(
    model: EncoderModel,
    x_t: np.ndarray,
    x_t1: np.ndarray,
    targets: np.ndarray,
    assign_sample: ParamTensor | np.ndarray,
    graph_sample: ParamTensor | np.ndarray,
    *,
    check_acyclic: bool = True,
) -> ParamTensor:
    """
    Mean log-likelihood of ``x^{t+1}`` given ``x^t`` and the targets:
    log-determinant of the ``t+1`` encoding plus the summed prior
    log-probability. Averaged over the batch and any sampled graphs.
    """
    z_t, z_t1, logdet = encode_pair(model, x_t, x_t1)
    per_group = prior_logprob(
        model, z_t, z_t1, np.atleast_2d(targets), assign_sample, graph_sample, check_acyclic=check_acyclic
    )
    return (per_group.sum(axis=-1) + logdet).mean()
