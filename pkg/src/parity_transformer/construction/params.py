"""Construction constants."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

from ..backend import PrecisionConfig
from ..errors import InvalidInputError

# Largest alpha on the calibration grid for which some c is feasible.
ALPHA_MAX = 0.6


def smallest_even_above(x: float) -> int:
    M = math.floor(x) + 1
    return M + (M % 2)


@dataclass(frozen=True)
class ConstructionParams:
    """alpha, c, the number M of split strings and the certified minimum length.

    ``certified=False`` lifts the ``alpha <= ALPHA_MAX`` check so that
    deliberately bad constants can be studied.
    """

    alpha: float
    c: float
    M: int
    n_min: int
    precision: PrecisionConfig = field(default_factory=PrecisionConfig)
    certified: bool = True

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise InvalidInputError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0 < self.c < 1:
            raise InvalidInputError(f"c must lie in (0, 1), got {self.c}")
        if not isinstance(self.M, int) or self.M < 2 or self.M % 2:
            raise InvalidInputError(f"M must be a positive even integer, got {self.M}")
        if not self.M > 2 / self.c:
            raise InvalidInputError(f"M={self.M} must exceed 2/c={2 / self.c:.4g}")
        if not isinstance(self.n_min, int) or self.n_min < 1:
            raise InvalidInputError(f"n_min must be a positive integer, got {self.n_min}")
        if self.certified and self.alpha > ALPHA_MAX:
            raise InvalidInputError(f"alpha={self.alpha} exceeds the calibrated maximum {ALPHA_MAX}")
        object.__setattr__(self, "precision", PrecisionConfig.parse(self.precision))

    @classmethod
    def from_alpha_c(cls, alpha, c, n_min, precision="double", certified=True) -> ConstructionParams:
        return cls(alpha, c, smallest_even_above(2 / c), n_min, PrecisionConfig.parse(precision), certified)

    @property
    def delta(self) -> float:
        return math.log(self.alpha)

    def replace(self, **changes) -> ConstructionParams:
        data = {**asdict(self), "precision": self.precision, **changes}
        return ConstructionParams(**data)

    def to_dict(self):
        return {"alpha": self.alpha, "c": self.c, "M": self.M, "n_min": self.n_min, "precision": str(self.precision)}

    @classmethod
    def from_dict(cls, data, certified=True) -> ConstructionParams:
        return cls(
            float(data["alpha"]), float(data["c"]), int(data["M"]), int(data["n_min"]),
            PrecisionConfig.parse(data.get("precision", "double")), certified,
        )
