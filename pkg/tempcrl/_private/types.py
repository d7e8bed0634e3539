from __future__ import annotations

from enum import Enum
from typing import Literal, TypeAlias


class GraphMethod(Enum):
    """
    Instantaneous graph learner used during training.
    """

    ENCO = "enco"
    NOTEARS = "notears"
    NONE = "none"


GraphKind: TypeAlias = Literal["random", "chain", "full", "empty"]
R2Predictor: TypeAlias = Literal["mlp", "linear"]
R2Split: TypeAlias = Literal["heldout", "independent"]
CheckOutcome: TypeAlias = Literal["passed", "failed"]
