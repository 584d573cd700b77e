"""Learning strategies compared by the experiments."""
import enum
from typing import Optional

from fedsched.core.distill import DistillVariant

__all__ = ["LearningStrategy"]


@enum.unique
class LearningStrategy(enum.Enum):
    """Mechanisms enabled on top of local actor-critic training.

    Each strategy exercises every mechanism of the previous one:
    `local-only` trains alone, `fl-only` adds federated barriers,
    `fl-basic-kd` adds ungated distillation and `fl-complete-kd` replaces it
    with compatibility-weighted distillation.
    """

    LOCAL_ONLY = "local-only"
    FL_ONLY = "fl-only"
    FL_BASIC_KD = "fl-basic-kd"
    FL_COMPLETE_KD = "fl-complete-kd"

    @property
    def federates(self) -> bool:
        """True if shared zones are aggregated."""
        return self is not LearningStrategy.LOCAL_ONLY

    @property
    def distill_variant(self) -> Optional[DistillVariant]:
        """Distillation flavor, `None` when the strategy does not distill."""
        match self:
            case LearningStrategy.FL_BASIC_KD:
                return DistillVariant.BASIC

            case LearningStrategy.FL_COMPLETE_KD:
                return DistillVariant.COMPLETE

            case _:
                return None
