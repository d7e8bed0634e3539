from __future__ import annotations

import numpy as np
import pytest
from pytest_mock import MockerFixture

from tempcrl._private.errors import ContractError, InvalidDistributionError, NumericFailureError
from tempcrl.diffcore import (
    PRIMITIVES,
    AdamState,
    ParamTensor,
    Rng,
    adam_step,
    apply,
    backprop,
    check_primitive,
    const,
    gumbel_softmax,
    lr_at,
    value_and_grad,
)


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_diffcore__check_primitive(name):
    generator = Rng(0).child(name).generator
    worst = max(check_primitive(name, generator) for _ in range(5))

    assert worst < 1e-4


def test_diffcore__check_primitive__wrong_backward(mocker: MockerFixture):
    primitive = PRIMITIVES["tanh"]
    backward = primitive.backward
    mocker.patch.object(
        primitive,
        "backward",
        side_effect=lambda *args, **kwargs: tuple(-g for g in backward(*args, **kwargs)),
    )

    assert check_primitive("tanh", Rng(0).generator) > 0.5


def test_diffcore__value_and_grad():
    w = ParamTensor.parameter([[1.0, 2.0], [3.0, 4.0]])
    x = const([[1.0, -1.0]])

    value, grads = value_and_grad(lambda p: ((x @ p["w"]) ** 2).sum(), {"w": w})

    assert value == pytest.approx(8.0)
    assert np.allclose(grads["w"], [[-4.0, -4.0], [4.0, 4.0]])
    assert np.all(w.grad == 0)


def test_diffcore__value_and_grad__has_aux():
    w = ParamTensor.parameter([1.0, 2.0])

    (value, aux), grads = value_and_grad(lambda p: ((p["w"] * p["w"]).sum(), "aux"), {"w": w}, has_aux=True)

    assert value == pytest.approx(5.0)
    assert aux == "aux"
    assert np.allclose(grads["w"], [2.0, 4.0])


def test_diffcore__value_and_grad__unused_parameter():
    w = ParamTensor.parameter([1.0, 2.0])
    unused = ParamTensor.parameter([[3.0]])

    _, grads = value_and_grad(lambda p: p["w"].sum(), {"w": w, "unused": unused})

    assert np.array_equal(grads["unused"], np.zeros((1, 1)))


def test_diffcore__backprop__non_scalar():
    w = ParamTensor.parameter([1.0, 2.0])

    with pytest.raises(ContractError, match="scalar"):
        backprop(w * 2.0, [w])


def test_diffcore__apply__non_finite():
    with pytest.raises(NumericFailureError) as e:
        apply("log", const([1.0, -1.0]))

    assert e.value.primitive == "log"
    assert "log" in str(e.value)


def test_diffcore__NumericFailureError__with_context():
    error = NumericFailureError("exp", detail="overflow").with_context(term="nll", step=12)

    assert error.primitive == "exp"
    assert error.term == "nll"
    assert error.step == 12
    assert "Step: 12" in str(error)


def test_diffcore__gumbel_softmax__masked():
    logits = np.array([[0.0, -np.inf, 1.0], [2.0, -np.inf, -1.0]])

    sample = gumbel_softmax(logits, 0.5, Rng(0))

    assert np.allclose(sample.values.sum(axis=-1), 1.0)
    assert np.all(sample.values[:, 1] == 0.0)


def test_diffcore__gumbel_softmax__hard():
    logits = ParamTensor.parameter(np.zeros((16, 4)))

    sample = gumbel_softmax(logits, 1.0, Rng(0), hard=True)
    _, grads = value_and_grad(lambda p: (sample * const(np.arange(4.0))).sum(), {"logits": logits})

    assert np.allclose(np.sort(sample.values, axis=-1), [0.0, 0.0, 0.0, 1.0])
    assert np.allclose(sample.values.sum(axis=-1), 1.0)
    assert np.any(grads["logits"] != 0)


def test_diffcore__gumbel_softmax__frequencies():
    probs = np.array([0.1, 0.2, 0.3, 0.4])
    logits = np.tile(np.log(probs), (100000, 1))

    sample = gumbel_softmax(logits, 1.0, Rng(0), hard=True)

    assert np.allclose(sample.values.mean(axis=0), probs, atol=0.01)


def test_diffcore__gumbel_softmax__low_temperature():
    sample = gumbel_softmax(np.zeros((2000, 3)), 0.01, Rng(0))
    largest = sample.values.max(axis=-1)

    assert np.median(largest) > 0.999
    assert np.mean(largest > 0.99) > 0.9
    assert np.allclose(np.bincount(sample.values.argmax(axis=-1), minlength=3) / 2000, 1 / 3, atol=0.04)


@pytest.mark.parametrize(
    "logits, temperature, error",
    [
        (np.array([[-np.inf, -np.inf]]), 1.0, InvalidDistributionError),
        (np.array([[0.0, np.nan]]), 1.0, ContractError),
        (np.array([[0.0, np.inf]]), 1.0, ContractError),
        (np.array([[0.0, 1.0]]), 0.0, ContractError),
    ],
    ids=["all-masked", "nan", "positive-inf", "zero-temperature"],
)
def test_diffcore__gumbel_softmax__invalid(logits, temperature, error):
    with pytest.raises(error):
        gumbel_softmax(logits, temperature, Rng(0))


def test_diffcore__Rng__streams():
    root = Rng(3)

    assert np.array_equal(root.child("a").normal(size=5), Rng(3).child("a").normal(size=5))
    assert not np.array_equal(root.child("a").normal(size=5), root.child("b").normal(size=5))
    assert not np.array_equal(root.child("a", 0).normal(size=5), root.child("a", 1).normal(size=5))
    assert not np.array_equal(root.child("a").normal(size=5), Rng(4).child("a").normal(size=5))


def test_diffcore__Rng__child_independent_of_consumers():
    first = Rng(1)
    expected = first.child("target").uniform(size=3)

    second = Rng(1)
    second.child("other").normal(size=100)
    second.normal(size=100)

    assert np.array_equal(second.child("target").uniform(size=3), expected)


def test_diffcore__adam_step():
    params = {"w": ParamTensor.parameter([1.0, -1.0]), "frozen": ParamTensor.parameter([5.0])}
    state = AdamState()

    adam_step(params, {"w": np.array([0.5, -2.0])}, state, lr=0.1)

    assert np.allclose(params["w"].values, [0.9, -0.9])
    assert np.array_equal(params["frozen"].values, [5.0])
    assert state.step == 1


def test_diffcore__adam_step__converges():
    params = {"x": ParamTensor.parameter([0.0])}
    state = AdamState()

    for _ in range(5000):
        _, grads = value_and_grad(lambda p: ((p["x"] - 5.0) ** 2).sum(), params)
        adam_step(params, grads, state, lr=1e-2)

    assert abs(params["x"].values[0] - 5.0) < 1e-2


def test_diffcore__adam_step__non_finite():
    params = {"w": ParamTensor.parameter([1.0, -1.0])}
    state = AdamState()

    with pytest.raises(NumericFailureError, match="adam_step"):
        adam_step(params, {"w": np.array([0.5, np.nan])}, state, lr=0.1)

    assert np.array_equal(params["w"].values, [1.0, -1.0])
    assert state.step == 0
    assert not state.m


@pytest.mark.parametrize(
    "step, expected",
    [
        (0, 0.0),
        (50, 5e-4),
        (100, 1e-3),
        (550, 5e-5 + 0.5 * (1e-3 - 5e-5)),
        (1000, 5e-5),
        (2000, 5e-5),
    ],
    ids=["start", "warmup", "peak", "half", "end", "after-end"],
)
def test_diffcore__lr_at(step, expected):
    assert lr_at(step, 1000, base=1e-3, warmup=100, floor=5e-5) == pytest.approx(expected)
