from __future__ import annotations

import numpy as np
import pytest
import scipy.stats

from tempcrl._private.errors import ContractError
from tempcrl.diffcore import ParamTensor, Rng, value_and_grad
from tempcrl.flows import make_encoder
from tempcrl.model import (
    Assignment,
    EncoderModel,
    PriorNet,
    groups_of,
    prior_logprob,
    sample_assignment,
    total_loglik,
)

HARD = np.array([0, 1, 1, 2])


@pytest.fixture
def model() -> EncoderModel:
    return EncoderModel.create(4, 2, Rng(0), layers=1, hidden=8)


@pytest.fixture
def random_prior_model(model: EncoderModel) -> EncoderModel:
    for i, tensor in enumerate(model.prior.params().values()):
        tensor.values[...] = 0.5 * Rng(1).child("prior", i).normal(size=tensor.shape)

    return model


def test_model__groups_of():
    assert groups_of(HARD, 2) == [[0], [1, 2], [3]]
    assert groups_of(np.array([1, 1]), 2) == [[], [0, 1], []]


def test_model__Assignment():
    assignment = Assignment.create(4, 2)
    assignment.logits.values[np.arange(4), HARD] = 1.0

    assert assignment.M == 4
    assert assignment.K == 2
    assert np.array_equal(assignment.hard(), HARD)
    assert np.array_equal(assignment.one_hot(), np.eye(3)[HARD])


def test_model__sample_assignment():
    assignment = Assignment.create(4, 2)

    single = sample_assignment(assignment, Rng(0), hard=True)
    batch = sample_assignment(assignment, Rng(0), batch=5)

    assert single.shape == (4, 3)
    assert np.allclose(single.values.sum(axis=-1), 1.0)
    assert batch.shape == (5, 4, 3)
    assert np.allclose(batch.values.sum(axis=-1), 1.0)


def test_model__EncoderModel__dim_mismatch():
    with pytest.raises(ContractError, match="latent dimension"):
        EncoderModel(make_encoder(3, Rng(0)), Assignment.create(4, 2), PriorNet(4, 2, Rng(1)))


def test_model__EncoderModel__params(model: EncoderModel):
    params = model.params()

    assert "assignment.logits" in params
    assert "prior.w1" in params
    assert any(name.startswith("encoder.") for name in params)


def test_model__prior_logprob__standard_normal_at_init(model: EncoderModel):
    rng = Rng(2)
    z_t, z_t1 = rng.child("z_t").normal(size=(5, 4)), rng.child("z_t1").normal(size=(5, 4))

    per_group = prior_logprob(model, z_t, z_t1, np.zeros((5, 2)), np.eye(3)[HARD], np.zeros((3, 3)))

    assert per_group.shape == (5, 3)
    assert np.allclose(per_group.values.sum(axis=-1), scipy.stats.norm.logpdf(z_t1).sum(axis=-1))
    assert np.allclose(per_group.values[:, 1], scipy.stats.norm.logpdf(z_t1[:, 1:3]).sum(axis=-1))


def test_model__prior_logprob__shapes(random_prior_model: EncoderModel):
    rng = Rng(2)
    z_t, z_t1 = rng.child("z_t").normal(size=(5, 4)), rng.child("z_t1").normal(size=(5, 4))
    assign = np.eye(3)[HARD]

    single = prior_logprob(random_prior_model, z_t[0], z_t1[0], np.zeros(2), assign, np.zeros((3, 3)))
    several = prior_logprob(random_prior_model, z_t, z_t1, np.zeros((5, 2)), assign, np.zeros((6, 1, 3, 3)))
    batched = prior_logprob(random_prior_model, z_t, z_t1, np.zeros((5, 2)), assign, np.zeros((5, 3, 3)))

    assert single.shape == (3,)
    assert several.shape == (6, 5, 3)
    assert batched.shape == (5, 3)


def test_model__prior_logprob__cycle(model: EncoderModel):
    graph = np.zeros((3, 3))
    graph[1, 2] = graph[2, 1] = 1.0

    with pytest.raises(ContractError, match="cycle"):
        prior_logprob(model, np.zeros((1, 4)), np.zeros((1, 4)), np.zeros((1, 2)), np.eye(3)[HARD], graph)


def group_gradients(model: EncoderModel, targets: np.ndarray, group: int) -> tuple[np.ndarray, np.ndarray]:
    rng = Rng(3)
    params = {
        "z_t": ParamTensor.parameter(rng.child("z_t").normal(size=(6, 4))),
        "z_t1": ParamTensor.parameter(rng.child("z_t1").normal(size=(6, 4))),
    }
    graph = np.zeros((3, 3))
    graph[2, 1] = 1.0

    def loss(p: dict[str, ParamTensor]) -> ParamTensor:
        return prior_logprob(model, p["z_t"], p["z_t1"], targets, np.eye(3)[HARD], graph)[:, group].sum()

    _, grads = value_and_grad(loss, params)
    return grads["z_t"], grads["z_t1"]


def test_model__prior_logprob__intervened_group(random_prior_model: EncoderModel):
    targets = np.zeros((6, 2))
    targets[:, 0] = 1.0

    grad_t, grad_t1 = group_gradients(random_prior_model, targets, group=1)

    assert np.all(grad_t == 0.0)
    assert np.all(grad_t1[:, [0, 3]] == 0.0)
    assert np.any(grad_t1[:, [1, 2]] != 0.0)


def test_model__prior_logprob__observational_group(random_prior_model: EncoderModel):
    grad_t, grad_t1 = group_gradients(random_prior_model, np.zeros((6, 2)), group=1)

    assert np.any(grad_t != 0.0)
    assert np.any(grad_t1[:, 3] != 0.0)
    assert np.all(grad_t1[:, 0] == 0.0)


def test_model__prior_logprob__temporal_mask(random_prior_model: EncoderModel):
    temporal = np.zeros((3, 3))
    rng = Rng(3)
    params = {"z_t": ParamTensor.parameter(rng.child("z_t").normal(size=(6, 4)))}
    z_t1 = rng.child("z_t1").normal(size=(6, 4))

    def loss(p: dict[str, ParamTensor]) -> ParamTensor:
        return prior_logprob(
            random_prior_model,
            p["z_t"],
            z_t1,
            np.zeros((6, 2)),
            np.eye(3)[HARD],
            np.zeros((3, 3)),
            temporal_mask=temporal,
        )[:, 1].sum()

    _, grads = value_and_grad(loss, params)

    assert np.all(grads["z_t"] == 0.0)


def test_model__total_loglik__identity_encoder(model: EncoderModel):
    rng = Rng(4)
    x_t, x_t1 = rng.child("x_t").normal(size=(5, 4)), rng.child("x_t1").normal(size=(5, 4))

    value = total_loglik(model, x_t, x_t1, np.zeros((5, 2)), np.eye(3)[HARD], np.zeros((3, 3)))

    assert value.item() == pytest.approx(scipy.stats.norm.logpdf(x_t1).sum(axis=-1).mean())
