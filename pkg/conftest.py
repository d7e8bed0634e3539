from __future__ import annotations

import subprocess

import pytest
from pytest_mock import MockerFixture

from tempcrl._private.logging import TempcrlLogger


@pytest.fixture(autouse=True)
def disallow_worker_processes(mocker: MockerFixture):
    """
    Raise RuntimeError if a test tries to spawn a per-seed worker process.
    """
    mocker.patch.object(
        subprocess,
        "run",
        side_effect=RuntimeError("Test attempted to spawn a worker process"),
    )


@pytest.fixture(autouse=True)
def reset_logger():
    """
    Remove the handler installed by the command line entry point.
    """
    yield
    TempcrlLogger.GetLogger().teardown()
