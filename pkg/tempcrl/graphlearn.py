from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import networkx as nx
import numpy as np
import scipy.special

from ._private.errors import ContractError
from ._private.logging import TempcrlLogger
from .diffcore import AdamState, ParamSet, ParamTensor, Rng, adam_step, apply, const
from .scm import CausalGraph, dot_graph

__all__ = [
    "ENCO_GAMMA_INIT",
    "ENCO_SPARSE",
    "NOTEARS_SPARSE",
    "EncoParams",
    "GraphLrSchedule",
    "NotearsParams",
    "acyclicity",
    "enco_edge_probs",
    "enco_gradients",
    "enco_sample_graphs",
    "enco_step",
    "edge_nll_contrast",
    "export_edge_probs",
    "group_names",
    "hard_graph",
    "lambda_cycle",
    "notears_edge_probs",
    "notears_regularizers",
    "notears_sample_graph",
]

logger = TempcrlLogger.GetLogger()

ENCO_GAMMA_INIT = 4.0
ENCO_SPARSE = 0.02
NOTEARS_SPARSE = 0.002


def group_names(K: int) -> list[str]:
    return ["Z0"] + [f"C{i}" for i in range(1, K + 1)]


def _notears_mask(K: int) -> np.ndarray:
    mask = ~np.eye(K + 1, dtype=bool)
    mask[1:, 0] = False
    return mask


def _enco_mask(K: int) -> np.ndarray:
    mask = ~np.eye(K + 1, dtype=bool)
    mask[0, :] = False
    mask[:, 0] = False
    return mask


@dataclass
class NotearsParams(object):
    """
    Edge logits ``gamma`` of the NOTEARS learner. Entries outside
    :attr:`mask` (diagonal and edges into group 0) are fixed to probability
    zero; their stored logit is irrelevant.
    """

    gamma: ParamTensor
    mask: np.ndarray
    adam: AdamState = field(default_factory=AdamState)

    @classmethod
    def create(cls, K: int, init: float = 0.0) -> NotearsParams:
        return cls(ParamTensor.parameter(np.full((K + 1, K + 1), init)), _notears_mask(K))

    @property
    def K(self) -> int:
        return self.gamma.shape[0] - 1

    def params(self) -> ParamSet:
        return {"gamma": self.gamma}

    def edge_probs(self) -> np.ndarray:
        return scipy.special.expit(self.gamma.values) * self.mask


@dataclass
class EncoParams(object):
    """
    Edge existence ``gamma`` and antisymmetric orientation ``theta`` of the
    ENCO learner. Only edges between causal groups ``1..K`` are learned.
    """

    gamma: ParamTensor
    theta: ParamTensor
    mask: np.ndarray
    adam: AdamState = field(default_factory=AdamState)

    @classmethod
    def create(cls, K: int, gamma_init: float = ENCO_GAMMA_INIT) -> EncoParams:
        mask = _enco_mask(K)
        return cls(
            ParamTensor.parameter(np.where(mask, gamma_init, 0.0)),
            ParamTensor.parameter(np.zeros((K + 1, K + 1))),
            mask,
        )

    @property
    def K(self) -> int:
        return self.gamma.shape[0] - 1

    def params(self) -> ParamSet:
        return {"gamma": self.gamma, "theta": self.theta}

    def edge_probs(self) -> np.ndarray:
        return scipy.special.expit(self.gamma.values) * scipy.special.expit(self.theta.values) * self.mask

    def symmetrize(self) -> None:
        """
        Re-impose ``theta_ji = -theta_ij`` from the upper triangle.
        """
        upper = np.triu(self.theta.values, 1)
        self.theta.values[...] = upper - upper.T


@dataclass
class GraphLrSchedule(object):
    """
    Multiplier of the graph learning rate: 0 for the first ``freeze_steps``
    steps, then a linear ramp to 1 over ``warmup_steps``.
    """

    freeze_steps: int = 10000
    warmup_steps: int = 0

    def __call__(self, step: int) -> float:
        if step < self.freeze_steps:
            return 0.0

        if self.warmup_steps <= 0:
            return 1.0

        return min(1.0, (step - self.freeze_steps) / self.warmup_steps)


def notears_edge_probs(params: NotearsParams) -> np.ndarray:
    return params.edge_probs()


def enco_edge_probs(params: EncoParams) -> np.ndarray:
    return params.edge_probs()


def notears_sample_graph(
    params: NotearsParams, rng: Rng, batch: int | None = None, *, hard: bool = False, temperature: float = 1.0
) -> ParamTensor:
    """
    Two-category relaxed Bernoulli draw of every edge.

    The difference of the two Gumbel noises is logistic, so the relaxed
    sample is ``sigmoid((gamma + logistic) / temperature)``. With ``batch``
    the result has shape ``(batch, K + 1, K + 1)``, one graph per element.
    Fixed entries are exactly 0.
    """
    if temperature <= 0:
        raise ContractError(f"Temperature must be positive, got {temperature}")

    shape = params.gamma.shape if batch is None else (batch,) + params.gamma.shape
    noise = rng.logistic(size=shape)
    soft = ((params.gamma + noise) * (1.0 / temperature)).sigmoid() * params.mask
    if not hard:
        return soft

    return soft + const((soft.values > 0.5) * params.mask - soft.values)


def acyclicity(probs: ParamTensor | np.ndarray) -> ParamTensor:
    """
    ``tr(exp(P)) - K`` of a ``K x K`` nonnegative matrix; zero iff the
    support of ``P`` is acyclic.
    """
    probs = probs if isinstance(probs, ParamTensor) else const(probs)
    return apply("trace_expm", probs) - probs.shape[0]


def notears_regularizers(params: NotearsParams) -> tuple[ParamTensor, ParamTensor]:
    """
    Acyclicity and sparsity losses, both on the ``K x K`` causal block.
    """
    K = params.K
    probs = params.gamma.sigmoid() * params.mask
    causal = probs[1:, 1:]
    return acyclicity(causal), causal.sum() * (1.0 / (K * K))


def lambda_cycle(step: int, total: int) -> float:
    """
    Weight of the acyclicity loss, exponent linear from -6 to 4.
    """
    progress = min(max(step / total, 0.0), 1.0) if total > 0 else 1.0
    return math.exp(-6.0 + 10.0 * progress)


def enco_sample_graphs(params: EncoParams, L: int, rng: Rng) -> np.ndarray:
    """
    ``L`` binary adjacency samples. Existence is drawn per directed entry,
    orientation once per unordered pair, so no sample has a 2-cycle.
    """
    K1 = params.K + 1
    exists = rng.child("exists").uniform(size=(L, K1, K1)) < scipy.special.expit(params.gamma.values)
    forward = rng.child("orient").uniform(size=(L, K1, K1)) < scipy.special.expit(params.theta.values)
    upper = np.triu(np.ones((K1, K1), dtype=bool), 1)
    orient = np.where(upper, forward, np.swapaxes(~forward, -1, -2))
    return (exists & orient & params.mask).astype(np.float64)


def edge_nll_contrast(per_graph_nll: np.ndarray, graphs: np.ndarray) -> np.ndarray:
    """
    ``(B, K + 1, K + 1)`` difference between the mean nll of group ``j`` over
    samples with edge ``i -> j`` and over samples without it. Entries
    without samples on either side are 0.
    """
    nll = np.asarray(per_graph_nll, dtype=np.float64)
    graphs = np.asarray(graphs, dtype=np.float64)
    L = nll.shape[0]
    count_pos = graphs.sum(axis=0)
    count_neg = L - count_pos
    weighted_pos = np.einsum("lij,lnj->nij", graphs, nll)
    weighted_neg = np.einsum("lij,lnj->nij", 1.0 - graphs, nll)
    valid = (count_pos > 0) & (count_neg > 0)
    return np.where(
        valid,
        weighted_pos / np.maximum(count_pos, 1) - weighted_neg / np.maximum(count_neg, 1),
        0.0,
    )


def enco_gradients(
    params: EncoParams,
    per_graph_nll: np.ndarray,
    graphs: np.ndarray,
    targets: np.ndarray,
    lambda_sparse: float = ENCO_SPARSE,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Estimated gradients of ``gamma`` and ``theta``.

    :param per_graph_nll: ``(L, B, K + 1)`` negative log-likelihood of every
        group under every sampled graph.
    :param graphs: ``(L, K + 1, K + 1)`` sampled graphs.
    :param targets: ``(B, K)`` intervention targets.
    :return: Gradients of ``gamma`` and ``theta``, the latter per directed
        entry before antisymmetrization.
    :rtype: tuple[np.ndarray, np.ndarray]
    """
    nll = np.asarray(per_graph_nll, dtype=np.float64)
    graphs = np.asarray(graphs, dtype=np.float64)
    L, B, K1 = nll.shape
    if L < 2:
        raise ContractError(f"At least two graph samples are required, got {L}")

    if graphs.shape != (L, K1, K1):
        raise ContractError(f"Graph samples have shape {graphs.shape}, expected {(L, K1, K1)}")

    flags = np.zeros((B, K1))
    flags[:, 1:] = np.asarray(targets, dtype=np.float64).reshape(B, K1 - 1)

    diff = edge_nll_contrast(nll, graphs)

    not_target = 1.0 - flags[:, None, :]
    gamma_term = (not_target * (diff + lambda_sparse)).mean(axis=0)
    theta_term = (flags[:, :, None] * not_target * diff).mean(axis=0)

    sig_gamma = scipy.special.expit(params.gamma.values)
    sig_theta = scipy.special.expit(params.theta.values)
    grad_gamma = sig_theta * sig_gamma * (1.0 - sig_gamma) * gamma_term * params.mask
    grad_theta = sig_gamma * sig_theta * (1.0 - sig_theta) * theta_term * params.mask
    return grad_gamma, grad_theta


def enco_step(
    params: EncoParams,
    per_graph_nll: np.ndarray,
    graphs: np.ndarray,
    targets: np.ndarray,
    lambda_sparse: float = ENCO_SPARSE,
    *,
    lr: float,
    update_theta: bool = True,
) -> dict[str, np.ndarray]:
    """
    Adam update of ``gamma`` (and ``theta`` unless frozen) with the
    estimated gradients of :func:`enco_gradients`.

    :return: The applied gradients by parameter name.
    :rtype: dict[str, np.ndarray]
    """
    grad_gamma, grad_theta = enco_gradients(params, per_graph_nll, graphs, targets, lambda_sparse)
    grads = {"gamma": grad_gamma}
    if update_theta:
        grads["theta"] = grad_theta - grad_theta.T

    adam_step(params.params(), grads, params.adam, lr)
    params.symmetrize()
    return grads


def hard_graph(
    probs: np.ndarray | NotearsParams | EncoParams, threshold: float = 0.5, temporal: np.ndarray | None = None
) -> CausalGraph:
    """
    Threshold edge probabilities over causal groups ``1..K`` and delete the
    lowest-probability edge of every remaining cycle.
    """
    if isinstance(probs, (NotearsParams, EncoParams)):
        probs = probs.edge_probs()

    causal = np.asarray(probs, dtype=np.float64)[1:, 1:]
    K = causal.shape[0]
    adjacency = (causal > threshold).astype(np.int64)
    np.fill_diagonal(adjacency, 0)

    graph = nx.from_numpy_array(adjacency, create_using=nx.DiGraph)
    while True:
        try:
            cycle = nx.find_cycle(graph)
        except nx.NetworkXNoCycle:
            break

        i, j = min(((u, v) for u, v in cycle), key=lambda e: causal[e[0], e[1]])
        logger.debug(f"Removing edge C{i + 1} -> C{j + 1} to break a cycle")
        graph.remove_edge(i, j)
        adjacency[i, j] = 0

    return CausalGraph(adjacency, temporal if temporal is not None else np.zeros((K, K), dtype=np.int64))


def export_edge_probs(probs: np.ndarray, out_dir: str | Path, name: str = "learned_graph") -> dict[str, Any]:
    """
    Write ``<name>.json`` and ``<name>.dot`` with the edge-probability
    matrix over groups ``Z0, C1..CK``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    probs = np.asarray(probs, dtype=np.float64)
    names = group_names(probs.shape[0] - 1)
    doc = {"groups": names, "edge_probs": np.round(probs, 6).tolist()}

    with open(out / f"{name}.json", "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")

    (out / f"{name}.dot").write_text(dot_graph(probs > 0, names=names, probabilities=probs, name=name))
    return doc
