from __future__ import annotations

import json
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import scipy.special
from sklearn.linear_model import LinearRegression
from sklearn.metrics import r2_score
from sklearn.preprocessing import StandardScaler

from ._private.errors import ContractError, TempcrlError
from ._private.logging import TempcrlLogger
from ._private.misc import validate_configuration
from ._private.types import R2Predictor, R2Split
from .diffcore import AdamState, ParamTensor, Rng, adam_step, const, init_linear, lr_at, value_and_grad
from .flows import FlowStack, flow_apply
from .graphlearn import (
    ENCO_SPARSE,
    EncoParams,
    NotearsParams,
    edge_nll_contrast,
    enco_sample_graphs,
    enco_step,
    hard_graph,
)
from .model import Assignment, EncoderModel, PriorNet, groups_of, prior_logprob
from .scm import CausalGraph, Trajectory
from .train import TrainResult, edge_probs

__all__ = [
    "METRICS_REQUIRED_KEYS",
    "METRICS_SCHEMA_VERSION",
    "EvalConfig",
    "GroupGraphFitter",
    "MetricsReport",
    "evaluate_oracle",
    "evaluate_run",
    "lemma1_check",
    "posthoc_graph",
    "prune_temporal",
    "r2_matrix",
    "r2_scores",
    "r2_summary",
    "shd",
    "summarize",
]

logger = TempcrlLogger.GetLogger()

METRICS_SCHEMA_VERSION = 1
METRICS_REQUIRED_KEYS = [
    "schema_version",
    "r2_matrix",
    "r2_diag",
    "r2_sep",
    "meta.seed",
    "meta.graph_method",
    "meta.predictor",
    "meta.split",
]
SUMMARY_METRICS = ["r2_diag", "r2_sep", "shd_instant", "shd_temporal"]


@dataclass
class EvalConfig(object):
    """
    Evaluation options.
    """

    predictor: str = "mlp"
    split: str = "heldout"
    heldout_fraction: float = 0.2
    mlp_hidden: int = 64
    mlp_steps: int = 2000
    mlp_batch: int = 512
    mlp_lr: float = 1e-3
    independent_samples: int = 20000
    posthoc_steps: int = 3000
    posthoc_batch: int = 256
    posthoc_samples: int = 50000
    prune_samples: int = 20000
    graph_samples: int = 8
    lambda_sparse: float = ENCO_SPARSE
    threshold: float = 0.5


@dataclass
class MetricsReport(object):
    """
    R² matrix of every latent group against every true factor, and SHD of
    the learned graph when the true graph is known.
    """

    r2_matrix: np.ndarray
    shd_instant: int | None = None
    shd_temporal: int | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def r2_diag(self) -> float:
        return r2_summary(self.r2_matrix)[0]

    @property
    def r2_sep(self) -> float:
        return r2_summary(self.r2_matrix)[1]

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": METRICS_SCHEMA_VERSION,
            "r2_matrix": np.asarray(self.r2_matrix).tolist(),
            "r2_diag": self.r2_diag,
            "r2_sep": self.r2_sep,
            "shd_instant": self.shd_instant,
            "shd_temporal": self.shd_temporal,
            "meta": self.meta,
        }

    def write(self, path: str | Path) -> None:
        doc = self.to_dict()
        validate_configuration(METRICS_REQUIRED_KEYS, doc, error_fmt='Metrics are missing "{key}"')
        with open(path, "w") as f:
            json.dump(doc, f, indent=2)
            f.write("\n")

    @classmethod
    def read(cls, path: str | Path) -> MetricsReport:
        """
        :raises TempcrlError: If the file can not be read.
        :raises ConfigError: If the document misses a required key.
        """
        try:
            with open(path) as f:
                doc = json.load(f)
        except (OSError, ValueError) as e:
            raise TempcrlError(f"Unable to read metrics from {path}: {e}") from e

        validate_configuration(METRICS_REQUIRED_KEYS, doc, error_fmt=f'Metrics file {path} is missing "{{key}}"')
        return cls(
            np.array(doc["r2_matrix"], dtype=np.float64), doc.get("shd_instant"), doc.get("shd_temporal"), doc["meta"]
        )


def r2_summary(matrix: np.ndarray) -> tuple[float, float]:
    """
    ``(diag, sep)`` of a ``(K + 1) x K`` R² matrix, entries clamped at 0.
    Row ``i`` (group ``i``) is matched with factor ``i``.
    """
    clamped = np.clip(np.asarray(matrix, dtype=np.float64)[1:], 0.0, 1.0)
    K = clamped.shape[1]
    diag = float(np.mean(np.diag(clamped)))
    if K < 2:
        return diag, 0.0

    off = np.where(np.eye(K, dtype=bool), -np.inf, clamped)
    return diag, float(np.mean(off.max(axis=1)))


def _fit_mlp(
    x_fit: np.ndarray, y_fit: np.ndarray, x_score: np.ndarray, config: EvalConfig, rng: Rng
) -> np.ndarray:
    x_scaler, y_scaler = StandardScaler().fit(x_fit), StandardScaler().fit(y_fit)
    x_fit, x_score, y_fit = x_scaler.transform(x_fit), x_scaler.transform(x_score), y_scaler.transform(y_fit)

    w1, b1 = init_linear(rng.child("hidden"), x_fit.shape[1], config.mlp_hidden)
    w2, b2 = init_linear(rng.child("out"), config.mlp_hidden, y_fit.shape[1])
    params = {name: ParamTensor.parameter(value) for name, value in (("w1", w1), ("b1", b1), ("w2", w2), ("b2", b2))}

    def forward(p: dict[str, ParamTensor], x: np.ndarray) -> ParamTensor:
        return (const(x) @ p["w1"] + p["b1"]).swish() @ p["w2"] + p["b2"]

    state = AdamState()
    batch = min(config.mlp_batch, x_fit.shape[0])
    for step in range(config.mlp_steps):
        idx = rng.child("batch", step).integers(0, x_fit.shape[0], size=batch)
        _, grads = value_and_grad(lambda p: ((forward(p, x_fit[idx]) - y_fit[idx]) ** 2).mean(), params)
        lr = lr_at(step, config.mlp_steps, config.mlp_lr, warmup=100, floor=config.mlp_lr / 20)
        adam_step(params, grads, state, lr)

    return y_scaler.inverse_transform(forward(params, x_score).values)


def r2_matrix(
    latents: np.ndarray,
    factors: np.ndarray,
    hard: np.ndarray,
    K: int,
    rng: Rng,
    *,
    predictor: R2Predictor = "mlp",
    fit_fraction: float = 0.8,
    config: EvalConfig | None = None,
) -> np.ndarray:
    """
    ``(K + 1) x K`` matrix: entry ``(i, j)`` is the R² of predicting factor
    ``j`` from the latents of group ``i``. Predictors are fitted on the
    first ``fit_fraction`` of the rows and scored on the rest. Empty groups
    get a row of zeros.
    """
    config = config if config is not None else EvalConfig()
    latents = np.asarray(latents, dtype=np.float64)
    factors = np.asarray(factors, dtype=np.float64)
    if latents.shape[0] != factors.shape[0]:
        raise ContractError(f"Latents have {latents.shape[0]} rows, factors have {factors.shape[0]}")

    split = int(round(latents.shape[0] * fit_fraction))
    if split < 2 or latents.shape[0] - split < 2:
        raise ContractError(f"Not enough samples to split {latents.shape[0]} rows at {fit_fraction}")

    matrix = np.zeros((K + 1, factors.shape[1]))
    for i, members in enumerate(groups_of(hard, K)):
        if not members:
            logger.notice(f"Latent group {i} is empty, its R² row is zero")
            continue

        x = latents[:, members]
        match predictor:
            case "linear":
                scaler = StandardScaler().fit(x[:split])
                model = LinearRegression().fit(scaler.transform(x[:split]), factors[:split])
                prediction = model.predict(scaler.transform(x[split:]))
            case "mlp":
                prediction = _fit_mlp(x[:split], factors[:split], x[split:], config, rng.child("group", i))
            case _:
                raise ContractError(f"Unknown R² predictor: {predictor}")

        matrix[i] = r2_score(factors[split:], prediction, multioutput="raw_values")

    return matrix


def r2_scores(
    model: EncoderModel,
    trajectory: Trajectory,
    rng: Rng,
    *,
    config: EvalConfig | None = None,
    entangler: FlowStack | None = None,
) -> np.ndarray:
    """
    R² matrix of the hard-assigned latent groups of ``model``.

    The ``heldout`` split scores on the last part of the trajectory. The
    ``independent`` split draws fresh factors from the distribution with
    every variable intervened on (standard normal) and observes them,
    padded with fresh nuisance coordinates, through ``entangler``.
    """
    config = config if config is not None else EvalConfig()
    split: R2Split = config.split  # type: ignore[assignment]
    match split:
        case "heldout":
            factors = trajectory.factors
            latents = model.encode(trajectory.observations)
        case "independent":
            if entangler is None:
                raise ContractError("The independent R² split requires the entangler")

            inputs = rng.child("independent").normal(size=(config.independent_samples, entangler.dim))
            factors = inputs[:, : trajectory.K]
            latents = model.encode(flow_apply(entangler, inputs))
        case _:
            raise ContractError(f"Unknown R² split: {split}")

    return r2_matrix(
        latents,
        factors,
        model.assignment.hard(),
        model.K,
        rng.child("r2"),
        predictor=config.predictor,  # type: ignore[arg-type]
        fit_fraction=1.0 - config.heldout_fraction,
        config=config,
    )


def shd(pred: CausalGraph, truth: CausalGraph) -> tuple[int, int]:
    """
    Structural Hamming distance.

    Instantaneous: one per unordered pair whose edge state (none, forward,
    backward) differs, so a reversed edge counts 1. Temporal: Hamming
    distance of the directed adjacency matrices.
    """
    if pred.K != truth.K:
        raise ContractError(f"Graphs have different sizes: {pred.K} and {truth.K}")

    a, b = pred.instant > 0, truth.instant > 0
    upper = np.triu(np.ones((pred.K, pred.K), dtype=bool), 1)
    differs = ((a != b) | (a.T != b.T)) & upper
    return int(differs.sum()), int(np.sum((pred.temporal > 0) != (truth.temporal > 0)))


class GroupGraphFitter(object):
    """
    Structure learning over fixed latent groups: prior networks of the
    model's form on top of an identity flow, trained jointly with ENCO
    edge parameters. If ``orientations`` are given, only edge existence is
    learned.
    """

    def __init__(
        self,
        M: int,
        K: int,
        hard: np.ndarray,
        rng: Rng,
        *,
        hidden: int = 32,
        orientations: np.ndarray | None = None,
        config: EvalConfig | None = None,
    ) -> None:
        self.config: EvalConfig = config if config is not None else EvalConfig()
        self.K: int = K
        self.assign: np.ndarray = np.eye(K + 1)[np.asarray(hard, dtype=np.int64)]
        self.model: EncoderModel = EncoderModel(
            FlowStack(M), Assignment.create(M, K), PriorNet(M, K, rng.child("prior"), hidden=hidden)
        )
        self.adam: AdamState = AdamState()
        self.graph: EncoParams = EncoParams.create(K, gamma_init=0.0)
        self.learn_orientation: bool = orientations is None
        if orientations is not None:
            self.graph.theta.values[...] = np.asarray(orientations, dtype=np.float64) * self.graph.mask
            self.graph.symmetrize()

    def _fit_prior(self, nll_fn: Any, lr: float) -> np.ndarray:
        (_, per_group), grads = value_and_grad(nll_fn, self.model.prior.params(), has_aux=True)
        adam_step(self.model.prior.params(), grads, self.adam, lr)
        return per_group

    def _pairs(self, z: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        z = np.asarray(z, dtype=np.float64)
        return z[:-1], z[1:], np.asarray(targets, dtype=np.float64)[1:]

    def fit_instant(
        self, z: np.ndarray, targets: np.ndarray, rng: Rng, *, lr: float = 1e-3, graph_lr: float = 5e-3
    ) -> np.ndarray:
        """
        Learn instantaneous edges between groups from consecutive rows of
        ``z`` and the targets of the later row.

        :return: Edge probabilities ``(K + 1) x (K + 1)``.
        """
        z_t, z_t1, flags = self._pairs(z, targets)
        cfg = self.config
        L, K1 = cfg.graph_samples, self.K + 1
        batch = min(cfg.posthoc_batch, z_t.shape[0])
        warmup = cfg.posthoc_steps // 10

        for step in range(cfg.posthoc_steps):
            r = rng.child("instant", step)
            idx = r.child("batch").integers(0, z_t.shape[0], size=batch)
            graphs = enco_sample_graphs(self.graph, L, r.child("graph"))

            def nll_fn(_: Any) -> tuple[ParamTensor, np.ndarray]:
                per_group = prior_logprob(
                    self.model,
                    z_t[idx],
                    z_t1[idx],
                    flags[idx],
                    self.assign,
                    graphs.reshape(L, 1, K1, K1),
                    check_acyclic=False,
                )
                return -per_group.sum(axis=-1).mean(), per_group.values

            per_group = self._fit_prior(nll_fn, lr)
            if step >= warmup:
                enco_step(
                    self.graph,
                    -per_group,
                    graphs,
                    flags[idx],
                    cfg.lambda_sparse,
                    lr=graph_lr,
                    update_theta=self.learn_orientation,
                )

        return self.graph.edge_probs()

    def fit_temporal(
        self,
        z: np.ndarray,
        targets: np.ndarray,
        instant: np.ndarray,
        rng: Rng,
        *,
        lr: float = 1e-3,
        graph_lr: float = 5e-3,
    ) -> np.ndarray:
        """
        Learn temporal edges between causal groups with the instantaneous
        graph fixed to ``instant`` (``(K + 1) x (K + 1)``). Group 0 keeps
        all temporal parents.

        :return: Temporal edge probabilities ``K x K``.
        """
        z_t, z_t1, flags = self._pairs(z, targets)
        cfg = self.config
        L, K1 = cfg.graph_samples, self.K + 1
        batch = min(cfg.posthoc_batch, z_t.shape[0])
        warmup = cfg.posthoc_steps // 10
        instant = np.asarray(instant, dtype=np.float64).reshape(1, K1, K1)

        learned = np.zeros((K1, K1), dtype=bool)
        learned[1:, 1:] = True
        gamma = ParamTensor.parameter(np.zeros((K1, K1)))
        state = AdamState()

        for step in range(cfg.posthoc_steps):
            r = rng.child("temporal", step)
            idx = r.child("batch").integers(0, z_t.shape[0], size=batch)
            drawn = r.child("graph").uniform(size=(L, K1, K1)) < scipy.special.expit(gamma.values)
            masks = np.where(learned, drawn, True).astype(np.float64)

            def nll_fn(_: Any) -> tuple[ParamTensor, np.ndarray]:
                per_group = prior_logprob(
                    self.model,
                    z_t[idx],
                    z_t1[idx],
                    flags[idx],
                    self.assign,
                    instant,
                    temporal_mask=masks.reshape(L, 1, K1, K1),
                    check_acyclic=False,
                )
                return -per_group.sum(axis=-1).mean(), per_group.values

            per_group = self._fit_prior(nll_fn, lr)
            if step >= warmup:
                diff = edge_nll_contrast(-per_group, masks)
                not_target = np.ones((batch, K1))
                not_target[:, 1:] = 1.0 - flags[idx]
                sig = scipy.special.expit(gamma.values)
                grad = sig * (1.0 - sig) * (not_target[:, None, :] * (diff + cfg.lambda_sparse)).mean(axis=0)
                adam_step({"gamma": gamma}, {"gamma": grad * learned}, state, graph_lr)

        return scipy.special.expit(gamma.values)[1:, 1:]

    def prune_instant(self, z: np.ndarray, targets: np.ndarray, graph: CausalGraph, probs: np.ndarray) -> CausalGraph:
        """
        Drop thresholded edges, least probable first, whose removal costs the
        child group less than ``lambda_sparse`` nats per sample. The child is
        scored on the last ``prune_samples`` pairs where it is not a target.
        """
        z_t, z_t1, flags = self._pairs(z, targets)
        count = min(self.config.prune_samples, z_t.shape[0])
        if count == 0:
            return graph

        z_t, z_t1, flags = z_t[-count:], z_t1[-count:], flags[-count:]
        K1 = self.K + 1
        current = np.zeros((K1, K1))
        current[1:, 1:] = graph.instant

        for i, j in sorted(zip(*np.nonzero(current)), key=lambda e: probs[e]):
            observed = flags[:, j - 1] == 0
            if not observed.any():
                continue

            without = current.copy()
            without[i, j] = 0.0
            per_group = prior_logprob(
                self.model, z_t, z_t1, flags, self.assign, np.stack([current, without]).reshape(2, 1, K1, K1)
            ).values
            gain = float(np.mean(per_group[0, observed, j] - per_group[1, observed, j]))
            if gain < self.config.lambda_sparse:
                logger.debug(f"Pruning edge C{i} -> C{j}, gain {gain:.4f} nats")
                current = without

        return CausalGraph(current[1:, 1:].astype(np.int64), graph.temporal)


def posthoc_graph(
    z: np.ndarray,
    targets: np.ndarray,
    hard: np.ndarray,
    K: int,
    rng: Rng,
    *,
    orientations: np.ndarray | None = None,
    config: EvalConfig | None = None,
) -> tuple[CausalGraph, GroupGraphFitter]:
    """
    Learn the instantaneous graph over the latent groups given by ``hard``,
    without access to the true graph.

    Edges above the threshold are kept unless removing them costs less
    likelihood than the sparsity weight; see
    :meth:`GroupGraphFitter.prune_instant`.

    :return: Learned graph and the fitter, whose prior networks are reused
        by :func:`prune_temporal`.
    """
    config = config if config is not None else EvalConfig()
    fitter = GroupGraphFitter(z.shape[1], K, hard, rng.child("fitter"), orientations=orientations, config=config)
    probs = fitter.fit_instant(z, targets, rng.child("fit"))
    return fitter.prune_instant(z, targets, hard_graph(probs, config.threshold), probs), fitter


def prune_temporal(
    fitter: GroupGraphFitter,
    z: np.ndarray,
    targets: np.ndarray,
    instant: CausalGraph,
    rng: Rng,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Keep temporal edges whose relearned existence probability exceeds the
    threshold.

    :return: Binary ``K x K`` temporal adjacency and its probabilities.
    """
    K = fitter.K
    full = np.zeros((K + 1, K + 1))
    full[1:, 1:] = instant.instant
    probs = fitter.fit_temporal(z, targets, full, rng.child("prune"))
    return (probs > fitter.config.threshold).astype(np.int64), probs


def _orientations(graph: NotearsParams | EncoParams | None) -> np.ndarray | None:
    if isinstance(graph, EncoParams):
        return graph.theta.values.copy()

    if isinstance(graph, NotearsParams):
        logits = graph.gamma.values * graph.mask
        return logits - logits.T

    return None


def _graph_metrics(
    z: np.ndarray,
    targets: np.ndarray,
    hard: np.ndarray,
    trajectory: Trajectory,
    rng: Rng,
    *,
    orientations: np.ndarray | None,
    config: EvalConfig,
) -> tuple[int | None, int | None, dict[str, np.ndarray]]:
    K = trajectory.K
    logger.phase("Evaluation: post-hoc graph")
    instant, fitter = posthoc_graph(
        z, targets, hard, K, rng.child("posthoc"), orientations=orientations, config=config
    )

    logger.phase("Evaluation: temporal pruning")
    temporal, temporal_probs = prune_temporal(fitter, z, targets, instant, rng.child("temporal"))
    learned = CausalGraph(instant.instant, temporal)

    shd_instant = shd_temporal = None
    if trajectory.graph is not None:
        shd_instant, shd_temporal = shd(learned, trajectory.graph)
    else:
        logger.notice("Dataset has no true graph, SHD is not computed")

    matrices = {
        "posthoc": fitter.graph.edge_probs(),
        "instant": learned.instant,
        "temporal": learned.temporal,
        "temporal_probs": temporal_probs,
    }
    return shd_instant, shd_temporal, matrices


def _log_report(report: MetricsReport) -> None:
    logger.info(
        "Metrics",
        extra={
            "data": {
                "r2_diag": report.r2_diag,
                "r2_sep": report.r2_sep,
                "shd_instant": report.shd_instant,
                "shd_temporal": report.shd_temporal,
            }
        },
    )


def evaluate_run(
    result: TrainResult,
    trajectory: Trajectory,
    *,
    seed: int = 0,
    config: EvalConfig | None = None,
    entangler: FlowStack | None = None,
) -> tuple[MetricsReport, dict[str, np.ndarray]]:
    """
    Full evaluation of a trained run: R², post-hoc instantaneous graph,
    temporal pruning and SHD against the true graph if it is known.

    :return: Report and learned matrices (``edge_probs``, ``posthoc``,
        ``instant``, ``temporal``, ``temporal_probs``) for export.
    """
    config = config if config is not None else EvalConfig()
    rng = Rng(seed).child("eval")
    model = result.model

    logger.phase("Evaluation: R² scores")
    matrix = r2_scores(model, trajectory, rng.child("r2"), config=config, entangler=entangler)

    count = min(config.posthoc_samples, trajectory.T)
    shd_instant, shd_temporal, matrices = _graph_metrics(
        model.encode(trajectory.observations[:count]),
        trajectory.targets[:count],
        model.assignment.hard(),
        trajectory,
        rng.child("graph"),
        orientations=_orientations(result.graph),
        config=config,
    )
    matrices["edge_probs"] = edge_probs(result.graph, model.K)

    meta = {
        "seed": seed,
        "graph_method": result.config.graph_method,
        "predictor": config.predictor,
        "split": config.split,
        "step": result.step,
        "K": model.K,
        "M": model.M,
    }
    report = MetricsReport(matrix, shd_instant, shd_temporal, meta)
    _log_report(report)
    return report, matrices


def evaluate_oracle(
    trajectory: Trajectory, *, seed: int = 0, config: EvalConfig | None = None
) -> tuple[MetricsReport, dict[str, np.ndarray]]:
    """
    Evaluate the true factors as if they were learned latents, one factor
    per group: R² of the factors themselves and graph discovery without
    representation learning.
    """
    config = config if config is not None else EvalConfig()
    rng = Rng(seed).child("oracle")
    K = trajectory.K
    hard = np.arange(1, K + 1)

    logger.phase("Evaluation: R² scores of the true factors")
    split = trajectory.T - int(round(trajectory.T * config.heldout_fraction))
    matrix = r2_matrix(
        trajectory.factors,
        trajectory.factors,
        hard,
        K,
        rng.child("r2"),
        predictor=config.predictor,  # type: ignore[arg-type]
        fit_fraction=split / trajectory.T,
        config=config,
    )

    count = min(config.posthoc_samples, trajectory.T)
    shd_instant, shd_temporal, matrices = _graph_metrics(
        trajectory.factors[:count],
        trajectory.targets[:count],
        hard,
        trajectory,
        rng.child("graph"),
        orientations=None,
        config=config,
    )

    meta = {"seed": seed, "graph_method": "oracle", "predictor": config.predictor, "split": "heldout", "K": K, "M": K}
    report = MetricsReport(matrix, shd_instant, shd_temporal, meta)
    _log_report(report)
    return report, matrices


def lemma1_check(rng: Rng, samples: int = 100000) -> tuple[float, float, float, float]:
    """
    Two independent variables with Gaussian mechanisms against the
    alternative representation ``(C1, C1 + C2)`` with edge ``C1 -> C2``.

    Every model is fitted by maximum likelihood: each mechanism is a
    Gaussian whose mean is linear in features of its temporal parents and
    its own intervention flag, plus the instantaneous parent where the
    model has one. The alternative map has unit Jacobian, so likelihoods
    compare directly.

    :return: Absolute log-likelihood gap between the true and the
        alternative model under soft interventions, ``|corr|`` of the
        alternative representation under a perfect intervention on ``C2``,
        the same for the true representation, and the log-likelihood the
        alternative loses without its instantaneous edge.
    :rtype: tuple[float, float, float, float]
    """

    def mu1(c: np.ndarray, intervened: np.ndarray) -> np.ndarray:
        return np.where(intervened, 1.0 - 0.5 * c, 0.7 * c)

    def mu2(c: np.ndarray, intervened: np.ndarray) -> np.ndarray:
        return np.where(intervened, -1.0 + 0.3 * c, np.tanh(2.0 * c))

    def features(
        c: np.ndarray, intervened: np.ndarray, observational: Callable[[np.ndarray], np.ndarray]
    ) -> np.ndarray:
        f = intervened.astype(np.float64)
        return np.stack([f, f * c, (1.0 - f) * observational(c)], axis=1)

    def fitted_ll(inputs: np.ndarray, target: np.ndarray) -> float:
        fit = LinearRegression(fit_intercept=False).fit(inputs, target)
        variance = float(np.mean((target - fit.predict(inputs)) ** 2))
        return -0.5 * (math.log(2 * math.pi * variance) + 1.0)

    def linear(c: np.ndarray) -> np.ndarray:
        return c

    def saturating(c: np.ndarray) -> np.ndarray:
        return np.tanh(2.0 * c)

    std1, std2 = math.sqrt(0.51), 0.5

    prev = rng.child("previous").normal(size=(samples, 2))
    flags = rng.child("targets").uniform(size=(samples, 2)) < 0.5
    noise = rng.child("noise").normal(size=(samples, 2))
    c1 = mu1(prev[:, 0], flags[:, 0]) + std1 * noise[:, 0]
    c2 = mu2(prev[:, 1], flags[:, 1]) + std2 * noise[:, 1]

    first = fitted_ll(features(prev[:, 0], flags[:, 0], linear), c1)
    true_ll = first + fitted_ll(features(prev[:, 1], flags[:, 1], saturating), c2)

    hat_c1, hat_c2 = c1, c1 + c2
    hat_prev1, hat_prev2 = prev[:, 0], prev[:, 0] + prev[:, 1]
    temporal = features(hat_prev2 - hat_prev1, flags[:, 1], saturating)
    first_alt = fitted_ll(features(hat_prev1, flags[:, 0], linear), hat_c1)
    alt_ll = first_alt + fitted_ll(np.column_stack([temporal, hat_c1]), hat_c2)
    no_edge_ll = first_alt + fitted_ll(np.column_stack([temporal, hat_prev1]), hat_c2)
    gap = abs(true_ll - alt_ll)

    perfect = rng.child("perfect")
    p1 = 0.7 * perfect.child("previous").normal(size=samples) + std1 * perfect.child("c1").normal(size=samples)
    p2 = perfect.child("c2").normal(size=samples)
    dependence_alt = float(abs(np.corrcoef(p1, p1 + p2)[0, 1]))
    dependence_true = float(abs(np.corrcoef(p1, p2)[0, 1]))
    return gap, dependence_alt, dependence_true, true_ll - no_edge_ll


def summarize(reports: list[MetricsReport], path: str | Path | None = None) -> pd.DataFrame:
    """
    Mean and standard deviation of every metric across seeds; written as
    CSV if ``path`` is given.
    """
    rows = [
        {"r2_diag": r.r2_diag, "r2_sep": r.r2_sep, "shd_instant": r.shd_instant, "shd_temporal": r.shd_temporal}
        for r in reports
    ]
    frame = pd.DataFrame(rows, columns=SUMMARY_METRICS, dtype=np.float64)
    summary = pd.DataFrame(
        {
            "metric": SUMMARY_METRICS,
            "mean": [frame[m].mean() for m in SUMMARY_METRICS],
            "std": [frame[m].std(ddof=0) for m in SUMMARY_METRICS],
            "count": [int(frame[m].count()) for m in SUMMARY_METRICS],
        }
    )
    if path is not None:
        summary.to_csv(path, index=False, float_format="%.6g")

    return summary


