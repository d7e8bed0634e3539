from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass

import networkx as nx
import numpy as np

from ._private.errors import VerificationExceptionGroup
from ._private.logging import TempcrlLogger
from ._private.misc import CheckStatus
from .diffcore import PRIMITIVES, ParamTensor, Rng, check_primitive, const, value_and_grad
from .evaluate import lemma1_check
from .flows import FlowStack, flow_apply, flow_inverse, make_encoder, make_entangler
from .graphlearn import acyclicity
from .regularize import MiEstimator, mi_logit_losses, mi_losses

__all__ = [
    "SUITES",
    "VerifyConfig",
    "raise_for_failures",
    "register_suite",
    "run_verification",
]

logger = TempcrlLogger.GetLogger()


@dataclass
class VerifyConfig(object):
    """
    Sizes and tolerances of the built-in checks.
    """

    gradient_trials: int = 100
    gradient_tolerance: float = 1e-4
    flow_dim: int = 8
    flow_points: int = 1000
    roundtrip_tolerance: float = 1e-6
    jacobian_dim: int = 4
    jacobian_points: int = 5
    logdet_tolerance: float = 1e-4
    lemma_samples: int = 100000


VerifySuite = Callable[[CheckStatus, Rng, VerifyConfig], None]

SUITES: dict[str, VerifySuite] = {}
"""Registered verification suites, run in registration order."""


def register_suite(name: str) -> Callable[[VerifySuite], VerifySuite]:
    def decorator(fn: VerifySuite) -> VerifySuite:
        if name in SUITES:
            raise ValueError(f"Suite {name} is already registered")

        SUITES[name] = fn
        return fn

    return decorator


def _expect(status: CheckStatus, name: str, ok: bool, detail: str) -> None:
    if ok:
        status.set_success(name, detail)
    else:
        status.set_failure(name, detail)


@register_suite("gradients")
def check_gradients(status: CheckStatus, rng: Rng, config: VerifyConfig) -> None:
    """
    Analytic gradient of every registered primitive against central finite
    differences on random inputs.
    """
    for name in sorted(PRIMITIVES):
        generator = rng.child(name).generator
        worst = max(check_primitive(name, generator) for _ in range(config.gradient_trials))
        _expect(status, f"gradient.{name}", worst < config.gradient_tolerance, f"relative error {worst:.3g}")


def _numeric_logdet(stack: FlowStack, x: np.ndarray, eps: float = 1e-5) -> float:
    jacobian = np.empty((x.size, x.size))
    for k in range(x.size):
        shift = np.zeros_like(x)
        shift[k] = eps
        upper = flow_apply(stack, (x + shift)[None, :])[0]
        lower = flow_apply(stack, (x - shift)[None, :])[0]
        jacobian[:, k] = (upper - lower) / (2 * eps)

    return float(np.linalg.slogdet(jacobian)[1])


def _perturbed_encoder(dim: int, rng: Rng) -> FlowStack:
    encoder = make_encoder(dim, rng.child("encoder"))
    for i, tensor in enumerate(encoder.params().values()):
        tensor.values += 0.1 * rng.child("perturb", i).normal(size=tensor.shape)

    return encoder


@register_suite("flows")
def check_flows(status: CheckStatus, rng: Rng, config: VerifyConfig) -> None:
    """
    Round trip of the entangler and a randomly perturbed encoder, and their
    log-determinant against the numerically assembled Jacobian.
    """
    dim = config.flow_dim
    stacks = {
        "entangler": make_entangler(dim, rng.child("entangler")),
        "encoder": _perturbed_encoder(dim, rng),
    }
    x = rng.child("points").normal(size=(config.flow_points, dim))
    for name, stack in stacks.items():
        error = float(np.max(np.abs(flow_inverse(stack, flow_apply(stack, x)) - x)))
        _expect(status, f"flow.roundtrip.{name}", error < config.roundtrip_tolerance, f"max error {error:.3g}")

    small = config.jacobian_dim
    stacks = {
        "entangler": make_entangler(small, rng.child("small-entangler")),
        "encoder": _perturbed_encoder(small, rng.child("small")),
    }
    points = rng.child("jacobian").normal(size=(config.jacobian_points, small))
    for name, stack in stacks.items():
        analytic = stack.forward(const(points))[1].values
        numeric = np.array([_numeric_logdet(stack, p) for p in points])
        error = float(np.max(np.abs(analytic - numeric)))
        _expect(status, f"flow.logdet.{name}", error < config.logdet_tolerance, f"max error {error:.3g}")


def _trace_expm_series(a: np.ndarray, terms: int = 30) -> float:
    total, power = 0.0, np.eye(a.shape[0])
    for k in range(terms):
        total += np.trace(power) / math.factorial(k)
        power = power @ a

    return total - a.shape[0]


@register_suite("acyclicity")
def check_acyclicity(status: CheckStatus, rng: Rng, config: VerifyConfig) -> None:
    """
    The acyclicity loss vanishes on exactly the acyclic binary graphs over
    three nodes, and matches the exponential series on a 2-cycle.
    """
    K = 3
    offdiag = [(i, j) for i in range(K) for j in range(K) if i != j]
    mismatches = []
    for code in range(2 ** len(offdiag)):
        adjacency = np.zeros((K, K))
        for bit, (i, j) in enumerate(offdiag):
            adjacency[i, j] = (code >> bit) & 1

        value = acyclicity(adjacency).item()
        acyclic = nx.is_directed_acyclic_graph(nx.from_numpy_array(adjacency, create_using=nx.DiGraph))
        if (abs(value) < 1e-12) != acyclic:
            mismatches.append(code)

    _expect(status, "acyclicity.binary", not mismatches, f"{len(mismatches)} of 64 graphs misclassified")

    cycle = np.array([[0.0, 1.0], [1.0, 0.0]])
    value = acyclicity(cycle).item()
    error = max(abs(value - _trace_expm_series(cycle)), abs(value - (2 * math.cosh(1.0) - 2)))
    _expect(status, "acyclicity.two_cycle", error < 1e-9, f"value {value:.12f}")


@register_suite("lemma1")
def check_lemma1(status: CheckStatus, rng: Rng, config: VerifyConfig) -> None:
    """
    Soft interventions do not tell the alternative representation apart,
    which needs its instantaneous edge to do so; a perfect intervention does.
    """
    gap, dependence_alt, dependence_true, gap_without_edge = lemma1_check(rng.child("lemma1"), config.lemma_samples)
    _expect(status, "lemma1.soft_gap", gap < 1e-3, f"gap {gap:.3g} nats")
    _expect(status, "lemma1.edge_required", gap_without_edge > 0.1, f"gap without edge {gap_without_edge:.3g} nats")
    _expect(
        status,
        "lemma1.perfect_alternative",
        abs(dependence_alt - 1 / math.sqrt(2)) < 0.02,
        f"|corr| {dependence_alt:.4f}",
    )
    _expect(status, "lemma1.perfect_true", dependence_true < 0.02, f"|corr| {dependence_true:.4f}")


@register_suite("mi")
def check_mi(status: CheckStatus, rng: Rng, config: VerifyConfig) -> None:
    """
    Equal estimator logits give both losses ``ln 2``; estimator and latent
    losses reach disjoint parameter sets.
    """
    logits = const(rng.child("logits").normal(size=16))
    est, latent = mi_logit_losses(logits, logits)
    error = float(max(np.max(np.abs(est.values - math.log(2))), np.max(np.abs(latent.values - math.log(2)))))
    _expect(status, "mi.ln2", error < 1e-12, f"max error {error:.3g}")

    M, K, B = 4, 2, 32
    estimator = MiEstimator(M, K, rng.child("estimator"))
    z_t = ParamTensor.parameter(rng.child("z_t").normal(size=(B, M)))
    z_t1 = ParamTensor.parameter(rng.child("z_t1").normal(size=(B, M)))
    targets = np.zeros((B, K))
    targets[: B // 2, 0] = 1.0
    targets[B // 2 :, 1] = 1.0
    assign = np.eye(K + 1)[np.array([0, 1, 2, 2])]
    graph = np.zeros((K + 1, K + 1))
    graph[1, 2] = 1.0

    params = {"z_t": z_t, "z_t1": z_t1, **{f"mi.{k}": v for k, v in estimator.params().items()}}

    def term(index: int) -> Callable[[dict[str, ParamTensor]], ParamTensor]:
        return lambda _: mi_losses(estimator, z_t, z_t1, targets, assign, graph, rng.child("mi"))[index]

    _, est_grads = value_and_grad(term(0), params)
    _, latent_grads = value_and_grad(term(1), params)

    leaked = [k for k in ("z_t", "z_t1") if np.any(est_grads[k])]
    leaked += [k for k in est_grads if k.startswith("mi.") and np.any(latent_grads[k])]
    reached = any(np.any(est_grads[k]) for k in est_grads if k.startswith("mi.")) and np.any(latent_grads["z_t1"])
    _expect(status, "mi.disjoint", not leaked and bool(reached), f"leaked: {', '.join(leaked) or '-'}")


def run_verification(
    seed: int = 0, suites: list[str] | None = None, config: VerifyConfig | None = None
) -> CheckStatus:
    """
    Run the selected suites (all by default). Exceptions raised by a suite
    are recorded as its failure.

    :raises ValueError: If an unknown suite is requested.
    """
    config = config if config is not None else VerifyConfig()
    names = suites if suites is not None else list(SUITES)
    unknown = [name for name in names if name not in SUITES]
    if unknown:
        raise ValueError(f"Unknown verification suites: {', '.join(unknown)}")

    status = CheckStatus()
    root = Rng(seed).child("verify")
    for name in names:
        logger.phase(f"Verify: {name}")
        try:
            SUITES[name](status, root.child(name), config)
        except Exception as e:
            status.set_failure(name, f"{e.__class__.__name__}: {e}")

    for name, state in status.states.items():
        line = f"{name}: {state} ({status.details[name]})"
        if state == "passed":
            logger.info(line)
        else:
            logger.error(line)

    return status


def raise_for_failures(status: CheckStatus) -> None:
    """
    :raises VerificationExceptionGroup: With one error per failed check.
    """
    failed = status.failed
    if failed:
        raise VerificationExceptionGroup(
            f"{len(failed)} verification checks failed",
            [AssertionError(f"{name}: {status.details[name]}") for name in failed],
        )
