from __future__ import annotations

import copy
from collections.abc import Iterator
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, TypeAlias

import numpy as np
import pandas as pd

from ._private.container import read_container, write_container
from ._private.errors import CheckpointError, ContractError, NumericFailureError
from ._private.logging import TempcrlLogger
from ._private.types import GraphMethod
from .diffcore import AdamState, ParamSet, ParamTensor, Rng, adam_step, const, lr_at, value_and_grad
from .flows import ActNorm, flow_from_spec
from .graphlearn import (
    ENCO_SPARSE,
    NOTEARS_SPARSE,
    EncoParams,
    GraphLrSchedule,
    NotearsParams,
    enco_sample_graphs,
    enco_step,
    lambda_cycle,
    notears_regularizers,
    notears_sample_graph,
)
from .model import Assignment, EncoderModel, PriorNet, encode_pair, prior_logprob, sample_assignment
from .regularize import MiEstimator, TargetClassifier, mi_losses, mi_parent_schedule, target_classifier_losses
from .scm import Trajectory

__all__ = [
    "CHECKPOINT_VERSION",
    "HISTORY_INTERVAL",
    "GraphParams",
    "TrainConfig",
    "TrainResult",
    "checkpoint_load",
    "checkpoint_save",
    "edge_probs",
    "train",
    "write_history",
]

logger = TempcrlLogger.GetLogger()

CHECKPOINT_VERSION = 2
HISTORY_INTERVAL = 100
LOSS_TERMS = ["nll", "logdet", "cycle", "sparse", "mi_est", "mi_latent", "cls", "cls_latent"]

GraphParams: TypeAlias = NotearsParams | EncoParams | None


@dataclass
class TrainConfig(object):
    """
    Training options. ``None`` values are resolved per graph method or from
    the number of steps, see :meth:`resolve`.
    """

    graph_method: str = "enco"
    batch_size: int = 512
    epochs: int = 50
    steps: int | None = None
    lr: float = 1e-3
    lr_warmup: int = 100
    lr_floor: float = 5e-5
    graph_lr: float = 5e-3
    graph_samples: int = 8
    graph_freeze_steps: int | None = None
    graph_warmup_steps: int | None = None
    lambda_sparse: float | None = None
    mi_weight: float = 10.0
    target_classifier_weight: float = 10.0
    flow_layers: int = 4
    hidden: int = 32
    temperature: float = 1.0
    actnorm_init_samples: int = 4096

    @property
    def method(self) -> GraphMethod:
        return GraphMethod(self.graph_method)

    def total_steps(self, T: int) -> int:
        if self.steps is not None:
            return self.steps

        return self.epochs * max((T - 1) // self.batch_size, 1)

    def resolve(self, total: int) -> TrainConfig:
        """
        Copy with all ``None`` defaults filled in.
        """
        freeze = self.graph_freeze_steps if self.graph_freeze_steps is not None else min(10000, total // 10)
        warmup = self.graph_warmup_steps if self.graph_warmup_steps is not None else freeze
        sparse = self.lambda_sparse
        if sparse is None:
            sparse = NOTEARS_SPARSE if self.method == GraphMethod.NOTEARS else ENCO_SPARSE

        return TrainConfig(
            **{
                **asdict(self),
                "steps": total,
                "graph_freeze_steps": freeze,
                "graph_warmup_steps": warmup,
                "lambda_sparse": sparse,
            }
        )

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> TrainConfig:
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class TrainResult(object):
    """
    Everything needed to evaluate or resume a run.
    """

    model: EncoderModel
    graph: GraphParams
    config: TrainConfig
    estimator: MiEstimator | None = None
    classifier: TargetClassifier | None = None
    adam: AdamState = field(default_factory=AdamState)
    step: int = 0
    history: list[dict[str, float]] = field(default_factory=list)

    @property
    def K(self) -> int:
        return self.model.K


def edge_probs(graph: GraphParams, K: int) -> np.ndarray:
    """
    ``(K + 1) x (K + 1)`` edge probabilities; all zero without a learner.
    """
    if graph is None:
        return np.zeros((K + 1, K + 1))

    return graph.edge_probs()


@contextmanager
def _term(name: str, step: int) -> Iterator[None]:
    try:
        yield
    except NumericFailureError as e:
        raise e.with_context(term=name, step=step) from e


def _initialize_actnorm(model: EncoderModel, sample: np.ndarray) -> None:
    h = np.asarray(sample, dtype=np.float64)
    for layer in model.encoder.layers:
        if isinstance(layer, ActNorm):
            layer.initialize(h)

        h = layer.forward(const(h))[0].values


def _create(config: TrainConfig, D: int, K: int, rng: Rng) -> TrainResult:
    model = EncoderModel.create(
        D, K, rng.child("model"), layers=config.flow_layers, hidden=config.hidden, temperature=config.temperature
    )

    graph: GraphParams = None
    match config.method:
        case GraphMethod.ENCO:
            graph = EncoParams.create(K)
        case GraphMethod.NOTEARS:
            graph = NotearsParams.create(K)

    estimator = None
    if config.method != GraphMethod.NONE and config.mi_weight > 0:
        estimator = MiEstimator(D, K, rng.child("mi"), hidden=config.hidden)

    classifier = None
    if config.target_classifier_weight > 0:
        classifier = TargetClassifier(D, K, rng.child("classifier"), hidden=config.hidden)

    return TrainResult(model, graph, config, estimator, classifier)


def _record(
    result: TrainResult, step: int, terms: dict[str, float], extra: dict[str, float]
) -> dict[str, float]:
    K = result.K
    probs = edge_probs(result.graph, K)
    causal = probs[1:, 1:]
    off_diagonal = ~np.eye(K, dtype=bool)

    row: dict[str, float] = {"step": step, **terms, **extra}
    row["edge_prob_mean"] = float(causal[off_diagonal].mean()) if K > 1 else 0.0
    for i in range(K):
        for j in range(K):
            if i != j:
                row[f"p_C{i + 1}_C{j + 1}"] = float(causal[i, j])

    return row


def train(
    config: TrainConfig,
    trajectory: Trajectory,
    *,
    seed: int = 0,
    resume: TrainResult | None = None,
) -> TrainResult:
    """
    Fit flow, assignment, prior, graph learner and regularizers on
    consecutive pairs of ``trajectory``.

    Every step draws ``batch_size`` pairs uniformly with replacement, one
    hard assignment sample per pair, and graph samples per the learner: one
    per pair (NOTEARS) or ``graph_samples`` shared ones (ENCO). The loss is
    the negative log-likelihood plus acyclicity and sparsity (NOTEARS), MI
    and target classifier terms. Graph parameters are frozen by
    :class:`GraphLrSchedule`.

    With ``resume`` training continues from a copy of that result; the
    passed object is left unchanged.

    :raises ContractError: If the trajectory is shorter than one batch.
    :raises NumericFailureError: With step and loss term, if any value
        becomes non-finite.
    """
    T, K, D = trajectory.T, trajectory.K, trajectory.D
    if T < config.batch_size + 1:
        raise ContractError(f"Trajectory has {T} steps, at least {config.batch_size + 1} are required")

    total = config.total_steps(T)
    config = config.resolve(total)
    root = Rng(seed)

    if resume is None:
        result = _create(config, D, K, root)
        sample_idx = root.child("actnorm").integers(0, T, size=min(config.actnorm_init_samples, T))
        _initialize_actnorm(result.model, trajectory.observations[sample_idx])
    else:
        if resume.K != K or resume.model.M != D:
            raise ContractError(f"Checkpoint has K={resume.K}, M={resume.model.M}; dataset has K={K}, D={D}")

        result = copy.deepcopy(resume)
        result.config = config

    schedule = GraphLrSchedule(config.graph_freeze_steps, config.graph_warmup_steps)
    method = config.method
    B = config.batch_size
    obs = trajectory.observations
    flags = trajectory.targets.astype(np.float64)

    logger.phase(f"Training ({method.value}, {total} steps)")
    for step in range(result.step, total):
        rng = root.child("train", step)
        idx = rng.child("batch").integers(0, T - 1, size=B)
        x_t, x_t1, targets = obs[idx], obs[idx + 1], flags[idx + 1]

        lr = lr_at(step, total, config.lr, config.lr_warmup, config.lr_floor)
        graph_mult = schedule(step)
        weight_cycle = lambda_cycle(step, total)
        parent_fraction = mi_parent_schedule(step, config.graph_freeze_steps, total)

        enco_graphs = None
        if isinstance(result.graph, EncoParams):
            enco_graphs = enco_sample_graphs(result.graph, config.graph_samples, rng.child("graph"))

        params: ParamSet = {f"model.{k}": v for k, v in result.model.params().items()}
        if isinstance(result.graph, NotearsParams):
            params["graph.gamma"] = result.graph.gamma

        if result.estimator is not None:
            params.update({f"mi.{k}": v for k, v in result.estimator.params().items()})

        if result.classifier is not None:
            params.update({f"cls.{k}": v for k, v in result.classifier.params().items()})

        def loss_fn(_: ParamSet) -> tuple[ParamTensor, dict[str, Any]]:
            terms: dict[str, ParamTensor] = {}
            aux: dict[str, Any] = {}

            with _term("encode", step):
                z_t, z_t1, logdet = encode_pair(result.model, x_t, x_t1)

            with _term("assignment", step):
                assign = sample_assignment(result.model.assignment, rng.child("assign"), B, hard=True)

            with _term("nll", step):
                if enco_graphs is not None:
                    graph = const(enco_graphs.reshape((config.graph_samples, 1, K + 1, K + 1)))
                    mi_graph: ParamTensor | np.ndarray = enco_graphs[0]
                elif isinstance(result.graph, NotearsParams):
                    graph = notears_sample_graph(result.graph, rng.child("graph"), B, hard=True)
                    mi_graph = graph.values
                else:
                    graph = const(np.zeros((K + 1, K + 1)))
                    mi_graph = graph.values

                per_group = prior_logprob(
                    result.model, z_t, z_t1, targets, assign, graph, check_acyclic=False
                )
                aux["per_group"] = per_group.values
                terms["logdet"] = logdet.mean()
                terms["nll"] = -(per_group.sum(axis=-1).mean() + terms["logdet"])

            loss = terms["nll"]
            if isinstance(result.graph, NotearsParams):
                with _term("cycle", step):
                    terms["cycle"], terms["sparse"] = notears_regularizers(result.graph)
                    loss = loss + terms["cycle"] * weight_cycle + terms["sparse"] * config.lambda_sparse

            if result.estimator is not None:
                with _term("mi", step):
                    terms["mi_est"], terms["mi_latent"] = mi_losses(
                        result.estimator,
                        z_t,
                        z_t1,
                        targets,
                        assign.values,
                        mi_graph,
                        rng.child("mi"),
                        parent_fraction,
                    )
                    loss = loss + terms["mi_est"] + terms["mi_latent"] * config.mi_weight

            if result.classifier is not None:
                with _term("cls", step):
                    terms["cls"], terms["cls_latent"] = target_classifier_losses(
                        result.classifier, z_t1, targets, assign.values
                    )
                    loss = loss + terms["cls"] + terms["cls_latent"] * config.target_classifier_weight

            aux["terms"] = {name: term.item() for name, term in terms.items()}
            return loss, aux

        (loss_value, aux), grads = value_and_grad(loss_fn, params, has_aux=True)

        with _term("update", step):
            model_params = result.model.params()
            adam_step(model_params, {k: grads[f"model.{k}"] for k in model_params}, result.adam, lr)

            if result.estimator is not None:
                mi_params = result.estimator.params()
                adam_step(mi_params, {k: grads[f"mi.{k}"] for k in mi_params}, result.estimator.adam, lr)

            if result.classifier is not None:
                cls_params = result.classifier.params()
                adam_step(cls_params, {k: grads[f"cls.{k}"] for k in cls_params}, result.classifier.adam, lr)

            if graph_mult > 0:
                if isinstance(result.graph, NotearsParams):
                    adam_step(
                        result.graph.params(),
                        {"gamma": grads["graph.gamma"]},
                        result.graph.adam,
                        config.graph_lr * graph_mult,
                    )
                elif isinstance(result.graph, EncoParams) and enco_graphs is not None:
                    enco_step(
                        result.graph,
                        -aux["per_group"],
                        enco_graphs,
                        targets,
                        config.lambda_sparse,
                        lr=config.graph_lr * graph_mult,
                    )

        result.step = step + 1
        if step % HISTORY_INTERVAL == 0:
            terms = {name: aux["terms"].get(name, 0.0) for name in LOSS_TERMS}
            extra = {
                "loss": loss_value,
                "lr": lr,
                "graph_lr_mult": graph_mult,
                "lambda_cycle": weight_cycle,
                "mi_parents": parent_fraction,
            }
            row = _record(result, step, terms, extra)
            result.history.append(row)
            logger.info(
                "Training progress",
                extra={
                    "data": {
                        "step": step,
                        "loss": loss_value,
                        "nll": terms["nll"],
                        "lr": lr,
                        "edge_prob_mean": row["edge_prob_mean"],
                    }
                },
            )

    return result


def write_history(history: list[dict[str, float]], path: str | Path) -> None:
    """
    Write the history rows as CSV, one row per recorded step.
    """
    pd.DataFrame(history).to_csv(path, index=False, float_format="%.17g")


def _adam_arrays(prefix: str, state: AdamState) -> list[tuple[str, np.ndarray]]:
    arrays = [(f"{prefix}.m.{k}", state.m[k]) for k in sorted(state.m)]
    arrays += [(f"{prefix}.v.{k}", state.v[k]) for k in sorted(state.v)]
    return arrays


def _load_adam(prefix: str, step: int, arrays: dict[str, np.ndarray]) -> AdamState:
    state = AdamState(step=step)
    for key, value in arrays.items():
        if key.startswith(f"{prefix}.m."):
            state.m[key[len(prefix) + 3 :]] = value
        elif key.startswith(f"{prefix}.v."):
            state.v[key[len(prefix) + 3 :]] = value

    return state


def _params_arrays(prefix: str, params: ParamSet) -> list[tuple[str, np.ndarray]]:
    return [(f"{prefix}.{k}", v.values) for k, v in params.items()]


def _restore(prefix: str, params: ParamSet, arrays: dict[str, np.ndarray]) -> None:
    for name, tensor in params.items():
        key = f"{prefix}.{name}"
        if key not in arrays:
            raise CheckpointError(f'Checkpoint array "{key}" is missing')

        if arrays[key].shape != tensor.shape:
            raise CheckpointError(f'Checkpoint array "{key}" has shape {arrays[key].shape}, expected {tensor.shape}')

        tensor.values[...] = arrays[key]


def checkpoint_save(result: TrainResult, path: str | Path) -> None:
    """
    Write model, graph learner, regularizers, optimizer states and the step
    counter to ``path``.
    """
    model = result.model
    header: dict[str, Any] = {
        "kind": "checkpoint",
        "version": CHECKPOINT_VERSION,
        "M": model.M,
        "K": model.K,
        "D": model.M,
        "step": result.step,
        "config": asdict(result.config),
        "encoder": model.encoder.spec(),
        "temperature": model.assignment.temperature,
        "hidden": model.prior.hidden,
        "graph": type(result.graph).__name__ if result.graph is not None else None,
        "adam_steps": {"model": result.adam.step},
    }

    arrays = _params_arrays("encoder", model.encoder.state())
    arrays.append(("assignment.logits", model.assignment.logits.values))
    arrays += _params_arrays("prior", model.prior.params())
    arrays += _adam_arrays("adam.model", result.adam)

    for prefix, component in (("graph", result.graph), ("mi", result.estimator), ("cls", result.classifier)):
        if component is None:
            continue

        arrays += _params_arrays(prefix, component.params())
        arrays += _adam_arrays(f"adam.{prefix}", component.adam)
        header["adam_steps"][prefix] = component.adam.step

    header["has_mi"] = result.estimator is not None
    header["has_cls"] = result.classifier is not None
    write_container(path, header, arrays)


def checkpoint_load(path: str | Path, *, K: int | None = None) -> TrainResult:
    """
    Read a checkpoint written by :func:`checkpoint_save`.

    :param K: Expected number of causal variables, if known.
    :raises CheckpointError: On a foreign file, another checkpoint version,
        truncation or a dimension mismatch.
    """
    header, arrays = read_container(path)
    if header.get("kind") != "checkpoint":
        raise CheckpointError(f"{path} is not a training checkpoint")

    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"Unsupported checkpoint version {header.get('version')}, expected {CHECKPOINT_VERSION}"
        )

    M, ckpt_k = int(header["M"]), int(header["K"])
    if K is not None and K != ckpt_k:
        raise CheckpointError(f"Checkpoint was trained with K={ckpt_k}, expected K={K}")

    hidden = int(header["hidden"])
    encoder = flow_from_spec(header["encoder"], arrays, prefix="encoder.")
    assignment = Assignment.create(M, ckpt_k, float(header["temperature"]))
    _restore("assignment", {"logits": assignment.logits}, arrays)
    prior = PriorNet(M, ckpt_k, Rng(0), hidden=hidden)
    _restore("prior", prior.params(), arrays)
    model = EncoderModel(encoder, assignment, prior)

    config = TrainConfig.from_dict(header["config"])
    adam_steps = header["adam_steps"]

    graph: GraphParams = None
    if header["graph"] == EncoParams.__name__:
        graph = EncoParams.create(ckpt_k)
    elif header["graph"] == NotearsParams.__name__:
        graph = NotearsParams.create(ckpt_k)

    estimator = MiEstimator(M, ckpt_k, Rng(0), hidden=hidden) if header["has_mi"] else None
    classifier = TargetClassifier(M, ckpt_k, Rng(0), hidden=hidden) if header["has_cls"] else None

    for prefix, component in (("graph", graph), ("mi", estimator), ("cls", classifier)):
        if component is None:
            continue

        _restore(prefix, component.params(), arrays)
        component.adam = _load_adam(f"adam.{prefix}", int(adam_steps[prefix]), arrays)

    return TrainResult(
        model,
        graph,
        config,
        estimator,
        classifier,
        _load_adam("adam.model", int(adam_steps["model"]), arrays),
        int(header["step"]),
    )
