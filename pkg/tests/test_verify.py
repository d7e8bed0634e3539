from __future__ import annotations

import pytest
from pytest_mock import MockerFixture

from tempcrl._private.errors import VerificationExceptionGroup
from tempcrl._private.misc import CheckStatus
from tempcrl.diffcore import PRIMITIVES
from tempcrl.verify import SUITES, VerifyConfig, raise_for_failures, register_suite, run_verification

FAST = VerifyConfig(gradient_trials=3, flow_dim=4, flow_points=100, jacobian_dim=3, jacobian_points=2)


@pytest.mark.parametrize(
    "suite, checks",
    [
        ("acyclicity", ["acyclicity.binary", "acyclicity.two_cycle"]),
        ("mi", ["mi.ln2", "mi.disjoint"]),
        (
            "lemma1",
            ["lemma1.soft_gap", "lemma1.edge_required", "lemma1.perfect_alternative", "lemma1.perfect_true"],
        ),
        (
            "flows",
            ["flow.roundtrip.entangler", "flow.roundtrip.encoder", "flow.logdet.entangler", "flow.logdet.encoder"],
        ),
    ],
)
def test_verify__run_verification(suite, checks):
    status = run_verification(seed=0, suites=[suite], config=FAST)

    assert sorted(status.states) == sorted(checks)
    assert status.failed == []


def test_verify__run_verification__gradients():
    status = run_verification(seed=0, suites=["gradients"], config=FAST)

    assert sorted(status.states) == sorted(f"gradient.{name}" for name in PRIMITIVES)
    assert status.failed == []


def test_verify__run_verification__wrong_backward(mocker: MockerFixture):
    primitive = PRIMITIVES["tanh"]
    backward = primitive.backward
    mocker.patch.object(
        primitive,
        "backward",
        side_effect=lambda *args, **kwargs: tuple(-g for g in backward(*args, **kwargs)),
    )

    status = run_verification(seed=0, suites=["gradients"], config=FAST)

    assert status.failed == ["gradient.tanh"]


def test_verify__run_verification__suite_exception(mocker: MockerFixture):
    def broken(status, rng, config):
        raise RuntimeError("boom")

    mocker.patch.dict(SUITES, {"broken": broken})

    status = run_verification(suites=["acyclicity", "broken"], config=FAST)

    assert status.failed == ["broken"]
    assert status.details["broken"] == "RuntimeError: boom"
    assert status.check_success("acyclicity.binary")


def test_verify__run_verification__unknown_suite():
    with pytest.raises(ValueError, match="Unknown verification suites: nope"):
        run_verification(suites=["nope"])


def test_verify__register_suite__duplicate():
    with pytest.raises(ValueError, match="already registered"):
        register_suite("flows")(lambda status, rng, config: None)


def test_verify__raise_for_failures():
    status = CheckStatus()
    status.set_success("a")
    status.set_failure("b", "too large")
    status.set_failure("c")

    with pytest.raises(VerificationExceptionGroup) as e:
        raise_for_failures(status)

    assert len(e.value.exceptions) == 2
    assert str(e.value.exceptions[0]) == "b: too large"


def test_verify__raise_for_failures__passed():
    status = CheckStatus()
    status.set_success("a")

    raise_for_failures(status)
