"""Result record shared by the estimators."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

ESTIMATORS = ("naive", "conditional-exact", "conditional-IS", "tilted-IS")


@dataclass(frozen=True)
class EstimateResult:
    """Monte Carlo tail estimate with its standard error.

    ``flags`` holds short machine-readable markers (``low-ess``,
    ``inner-failures`` ...); a non-empty tuple means the estimate should be
    treated as unreliable.
    """

    p_hat: float
    stderr: float
    replicas: int
    estimator: str
    seed: int
    wall_time: float = 0.0
    flags: tuple[str, ...] = ()
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator tag {self.estimator!r}")
        if not 0.0 <= self.p_hat <= 1.0:
            raise ValueError(f"p_hat = {self.p_hat} outside [0, 1]")
        if not self.stderr >= 0:
            raise ValueError("stderr must be >= 0")

    @property
    def log_p_hat(self) -> float:
        return math.log(self.p_hat) if self.p_hat > 0 else -math.inf

    @property
    def flagged(self) -> bool:
        return bool(self.flags)
