"""Parameter planning: a range bound from an extreme-value noise model, and
predicted communication cost.

This is planning arithmetic, so it uses floats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .core import DerivedParams, FixedValue, ProtocolConfig, derive_params
from .encoding import POINT, VALUE
from .errors import InvalidModel

FAMILIES = ("gumbel_range", "frechet_range")

# one point record carrying an explicit value
RECORD_BITS = 8 * (1 + POINT.size + VALUE.size)


@dataclass(frozen=True)
class NoiseModel:
    family: str
    location: float = 0.0
    scale: float = 1.0
    alpha: float | None = None

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise InvalidModel(f"unknown family {self.family!r}")
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise InvalidModel("scale must be positive and finite")
        if not math.isfinite(self.location):
            raise InvalidModel("location must be finite")
        if self.family == "frechet_range":
            if self.alpha is None or not self.alpha > 0:
                raise InvalidModel("frechet_range needs alpha > 0")

    def quantile(self, p: float, *, upper_tail: float | None = None) -> float:
        """Standardised quantile; pass ``upper_tail = 1 - p`` to keep precision."""
        q = upper_tail if upper_tail is not None else 1.0 - p
        if not 0 < q < 1:
            raise InvalidModel(f"tail probability must lie in (0, 1), got {q}")
        # -ln(p) computed from the tail so p = 1 - 2**-60 is not rounded to 1
        neg_log_p = -math.log1p(-q)
        if self.family == "gumbel_range":
            return -math.log(neg_log_p)
        return neg_log_p ** (-1.0 / self.alpha)


def derive_delta(model: NoiseModel, lambda_bits: int | None = None, *, tail_prob: float | None = None) -> float:
    """Range bound exceeded with probability ``2**-lambda_bits`` (or ``tail_prob``)."""
    if (lambda_bits is None) == (tail_prob is None):
        raise InvalidModel("give exactly one of lambda_bits and tail_prob")
    if lambda_bits is not None:
        if lambda_bits < 1:
            raise InvalidModel("lambda_bits must be at least 1")
        tail = math.ldexp(1.0, -lambda_bits)
    else:
        tail = tail_prob
    return model.location + model.scale * model.quantile(1.0 - tail, upper_tail=tail)


@dataclass(frozen=True)
class ComplexityEstimate:
    bits_per_round: float
    rounds: int
    total_bits: float
    active_checkpoints: float


def estimate_complexity(cfg: ProtocolConfig, params: DerivedParams | None = None,
                        delta_runtime: FixedValue | str | float | None = None,
                        c: float = 1.0, record_bits: int = RECORD_BITS) -> ComplexityEstimate:
    """Predicted cost per round, ``c * n**2 * min(delta/rho0, n * l_max) * record_bits``."""
    params = params or derive_params(cfg)
    if delta_runtime is None:
        delta = float(cfg.delta_max)
    elif isinstance(delta_runtime, (str, FixedValue)):
        delta = float(FixedValue.of(delta_runtime))
    else:
        delta = float(delta_runtime)
    if delta > float(cfg.delta_max):
        raise InvalidModel(f"runtime range {delta} exceeds delta_max {cfg.delta_max}")
    active = max(1.0, min(delta / float(cfg.rho0), cfg.n * max(1, params.l_max)))
    per_round = c * cfg.n ** 2 * active * record_bits
    return ComplexityEstimate(per_round, params.r_max, per_round * params.r_max, active)
