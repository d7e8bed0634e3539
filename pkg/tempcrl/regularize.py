from __future__ import annotations

import numpy as np

from ._private.logging import TempcrlLogger
from .diffcore import AdamState, ParamSet, ParamTensor, Rng, concat, const, init_linear

__all__ = [
    "MiEstimator",
    "TargetClassifier",
    "classifier_accuracy",
    "mi_logit_losses",
    "mi_losses",
    "mi_parent_schedule",
    "target_classifier_losses",
]

logger = TempcrlLogger.GetLogger()


def _as_batch(x: ParamTensor | np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    values = x.values if isinstance(x, ParamTensor) else np.asarray(x, dtype=np.float64)
    return np.broadcast_to(values, shape).copy()


def _bce_with_logits(logits: ParamTensor, labels: np.ndarray) -> ParamTensor:
    return logits.softplus() - logits * labels


class MiEstimator(object):
    """
    One 2-layer classifier per causal group telling apart
    ``(z_i^{t+1}, z^t, z_pa^{t+1})`` from the same triple with ``z_i^{t+1}``
    taken from another time step. Input width is ``3M``: group and parent
    latents are masked copies of ``z^{t+1}``.
    """

    def __init__(self, M: int, K: int, rng: Rng, hidden: int = 32) -> None:
        self.M: int = M
        self.K: int = K

        w1, b1 = init_linear(rng.child("hidden"), 3 * M, hidden, batch=(K,))
        w2, b2 = init_linear(rng.child("out"), hidden, 1, batch=(K,))
        self.w1: ParamTensor = ParamTensor.parameter(w1)
        self.b1: ParamTensor = ParamTensor.parameter(b1)
        self.w2: ParamTensor = ParamTensor.parameter(w2)
        self.b2: ParamTensor = ParamTensor.parameter(b2)
        self.adam: AdamState = AdamState()

    def params(self) -> ParamSet:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def logits(self, inputs: ParamTensor, group: int, *, frozen: bool = False) -> ParamTensor:
        """
        :param inputs: ``(n, 3M)``.
        :param group: Causal group ``1..K``.
        :param frozen: Use constant copies of the weights.
        :return: ``(n,)`` logits.
        """
        k = group - 1
        if frozen:
            w1, b1, w2, b2 = (const(p.values[k]) for p in (self.w1, self.b1, self.w2, self.b2))
        else:
            w1, b1, w2, b2 = self.w1[k], self.b1[k], self.w2[k], self.b2[k]

        h = (inputs @ w1 + b1).swish()
        return (h @ w2 + b2).reshape(inputs.shape[0])


def mi_logit_losses(e_pos: ParamTensor, e_neg: ParamTensor) -> tuple[ParamTensor, ParamTensor]:
    """
    Elementwise estimator loss ``-e_pos + log(exp(e_pos) + exp(e_neg))`` and
    latent loss ``-e_neg + log(exp(e_pos) + exp(e_neg))``.
    """
    n = e_pos.shape[0]
    lse = concat([e_pos.reshape(n, 1), e_neg.reshape(n, 1)], axis=-1).logsumexp(axis=-1)
    return lse - e_pos, lse - e_neg


def mi_parent_schedule(step: int, freeze_steps: int, total: int) -> float:
    """
    Inclusion probability of instantaneous parents in the estimator inputs:
    0 until ``freeze_steps``, then linear up to 1 at ``total``.
    """
    if step < freeze_steps:
        return 0.0

    if total <= freeze_steps:
        return 1.0

    return min(1.0, (step - freeze_steps) / (total - freeze_steps))


def mi_losses(
    estimator: MiEstimator,
    z_t: ParamTensor,
    z_t1: ParamTensor,
    targets: np.ndarray,
    assign_sample: ParamTensor | np.ndarray,
    graph_sample: ParamTensor | np.ndarray,
    rng: Rng,
    parent_fraction: float = 1.0,
) -> tuple[ParamTensor, ParamTensor]:
    """
    Estimator and latent losses averaged over groups and the elements in
    which the group was intervened on.

    The estimator loss only reaches the estimator weights, the latent loss
    only reaches ``z_t`` and ``z_t1``. Assignment and graph samples are used
    as constants; each graph edge is kept with probability
    ``parent_fraction``.
    """
    B, M = z_t1.shape
    K = estimator.K
    targets = np.asarray(targets, dtype=np.float64).reshape(B, K)
    assign = _as_batch(assign_sample, (B, M, K + 1))
    graph = _as_batch(graph_sample, (B, K + 1, K + 1))
    if parent_fraction < 1.0:
        graph = graph * (rng.child("parents").uniform(size=graph.shape) < parent_fraction)

    parents = assign @ graph

    z_t_fixed, z_t1_fixed = z_t.detach(), z_t1.detach()
    est_losses: list[ParamTensor] = []
    latent_losses: list[ParamTensor] = []
    for i in range(1, K + 1):
        idx = np.nonzero(targets[:, i - 1] > 0.5)[0]
        n = idx.size
        if n < 2:
            continue

        tau = (np.arange(n) + rng.child("tau", i).integers(1, n, size=n)) % n
        own = assign[idx, :, i]
        pa = parents[idx, :, i]

        def pairs(zt: ParamTensor, zt1: ParamTensor) -> tuple[ParamTensor, ParamTensor]:
            current, context = zt1[idx], zt[idx]
            pa_in = current * pa
            return (
                concat([current * own, context, pa_in], axis=-1),
                concat([current[tau] * own, context, pa_in], axis=-1),
            )

        pos, neg = pairs(z_t_fixed, z_t1_fixed)
        est_losses.append(mi_logit_losses(estimator.logits(pos, i), estimator.logits(neg, i))[0].mean())

        pos, neg = pairs(z_t, z_t1)
        e_pos, e_neg = estimator.logits(pos, i, frozen=True), estimator.logits(neg, i, frozen=True)
        latent_losses.append(mi_logit_losses(e_pos, e_neg)[1].mean())

    if not est_losses:
        logger.notice("No group has enough intervened samples for the MI estimator", batch=B)
        return const(0.0), const(0.0)

    scale = 1.0 / len(est_losses)
    return sum(est_losses[1:], est_losses[0]) * scale, sum(latent_losses[1:], latent_losses[0]) * scale


class TargetClassifier(object):
    """
    Shared 2-layer network predicting all ``K`` intervention targets from one
    latent group. Inputs: ``[z^{t+1} * a_g, a_g]`` with ``a_g`` the
    assignment column of group ``g``, so a head sees its own group only.
    """

    def __init__(self, M: int, K: int, rng: Rng, hidden: int = 32) -> None:
        self.M: int = M
        self.K: int = K

        w1, b1 = init_linear(rng.child("hidden"), 2 * M, hidden)
        w2, b2 = init_linear(rng.child("out"), hidden, K)
        self.w1: ParamTensor = ParamTensor.parameter(w1)
        self.b1: ParamTensor = ParamTensor.parameter(b1)
        self.w2: ParamTensor = ParamTensor.parameter(np.zeros_like(w2))
        self.b2: ParamTensor = ParamTensor.parameter(b2)
        self.adam: AdamState = AdamState()

    def params(self) -> ParamSet:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def logits(self, inputs: ParamTensor, *, frozen: bool = False) -> ParamTensor:
        weights = self.params().values()
        w1, b1, w2, b2 = (const(p) for p in weights) if frozen else weights
        h = (inputs @ w1 + b1).swish()
        return h @ w2 + b2

    def inputs(self, z_t1: ParamTensor, assign: np.ndarray) -> ParamTensor:
        """
        ``(B, K + 1, 2M)`` inputs, one row per group.
        """
        B, M = z_t1.shape
        columns = np.swapaxes(assign, 1, 2)
        return concat([z_t1.reshape(B, 1, M) * columns, const(columns)], axis=-1)


def target_classifier_losses(
    classifier: TargetClassifier,
    z_t1: ParamTensor,
    targets: np.ndarray,
    assign_sample: ParamTensor | np.ndarray,
) -> tuple[ParamTensor, ParamTensor]:
    """
    Classifier loss (binary cross-entropy of every group predicting every
    target, on detached latents) and latent loss (frozen classifier; group
    ``i`` should predict ``I_i`` and only the batch base rate of the other
    targets). Target entries of the latent loss are weighted by ``K``.
    """
    B, M = z_t1.shape
    K = classifier.K
    targets = np.asarray(targets, dtype=np.float64).reshape(B, K)
    assign = _as_batch(assign_sample, (B, M, K + 1))
    labels = np.broadcast_to(targets[:, None, :], (B, K + 1, K))

    cls_logits = classifier.logits(classifier.inputs(z_t1.detach(), assign))
    cls_loss = _bce_with_logits(cls_logits, labels).mean()

    own = np.zeros((K + 1, K), dtype=bool)
    own[1:, :] = np.eye(K, dtype=bool)
    latent_labels = np.where(own, labels, targets.mean(axis=0))
    weights = np.where(own, float(K), 1.0)

    latent_logits = classifier.logits(classifier.inputs(z_t1, assign), frozen=True)
    latent_loss = (_bce_with_logits(latent_logits, latent_labels) * weights).mean()
    return cls_loss, latent_loss


def classifier_accuracy(
    classifier: TargetClassifier,
    z_t1: np.ndarray,
    targets: np.ndarray,
    assign: np.ndarray,
) -> np.ndarray:
    """
    ``(K + 1, K)`` accuracy of every group head on every target.
    """
    z_t1 = np.asarray(z_t1, dtype=np.float64)
    B, M = z_t1.shape
    K = classifier.K
    batch_assign = _as_batch(assign, (B, M, K + 1))
    logits = classifier.logits(classifier.inputs(const(z_t1), batch_assign), frozen=True).values
    predictions = logits > 0.0
    return (predictions == (np.asarray(targets)[:, None, :] > 0.5)).mean(axis=0)
