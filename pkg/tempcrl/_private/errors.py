from __future__ import annotations

import textwrap


class TempcrlError(Exception):
    """
    Base class for all errors raised by tempcrl.
    """

    ...


class NumericFailureError(TempcrlError):
    """
    A computation produced a non-finite value.
    """

    def __init__(self, primitive: str, *, term: str | None = None, step: int | None = None, detail: str = "") -> None:
        self.primitive: str = primitive
        """
        Name of the first registered primitive that produced a non-finite value.
        """

        self.term: str | None = term
        """
        Loss term that was being computed, if known.
        """

        self.step: int | None = step
        """
        Training step, if known.
        """

        self.detail: str = detail

        super().__init__(self._message())

    def with_context(self, *, term: str | None = None, step: int | None = None) -> NumericFailureError:
        """
        Return a copy of this error with loss term and step filled in.
        """
        return NumericFailureError(
            self.primitive,
            term=term if term is not None else self.term,
            step=step if step is not None else self.step,
            detail=self.detail,
        )

    def _message(self) -> str:
        return textwrap.dedent(
            f"""
            Numeric failure in primitive "{self.primitive}":
              Term: {self.term if self.term is not None else "-"}
              Step: {self.step if self.step is not None else "-"}
              Detail: {self.detail or "-"}
            """
        ).strip()


class InvalidDistributionError(TempcrlError, ValueError):
    """
    A categorical distribution has no finite logit.
    """

    ...


class ContractError(TempcrlError, ValueError):
    """
    Operation was called with arguments that violate its pre-conditions.
    """

    ...


class CalibrationError(TempcrlError):
    """
    Mechanism calibration produced a degenerate variance.
    """

    ...


class CheckpointError(TempcrlError):
    """
    Checkpoint file can not be read or does not match the expected model.
    """

    ...


class ConfigError(TempcrlError, ValueError):
    """
    Invalid experiment configuration.
    """

    ...


class VerificationExceptionGroup(ExceptionGroup):
    """
    One or more built-in verification checks failed.
    """

    ...
