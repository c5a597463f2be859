"""Shared value types, exact arithmetic and protocol parameters."""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation, localcontext
from fractions import Fraction
from typing import NamedTuple, Union

from .errors import ConfigError, OutOfRange

# All aggregation happens over exact rationals.
Rational = Fraction

Number = Union[int, Fraction, "FixedValue"]


def _strip_twos(numer: int, scale_exp: int) -> tuple[int, int]:
    if numer == 0:
        return 0, 0
    while scale_exp > 0 and numer & 1 == 0:
        numer >>= 1
        scale_exp -= 1
    return numer, scale_exp


@dataclass(frozen=True, order=False)
class FixedValue:
    """Exact dyadic number ``numer / 2**scale_exp``.

    Instances are always canonical: ``numer`` is odd unless ``scale_exp`` is
    zero, so equal values compare and hash equal.
    """

    numer: int
    scale_exp: int = 0

    def __post_init__(self) -> None:
        if self.scale_exp < 0:
            raise ValueError("scale_exp must be non-negative")
        numer, scale = _strip_twos(int(self.numer), int(self.scale_exp))
        object.__setattr__(self, "numer", numer)
        object.__setattr__(self, "scale_exp", scale)

    # -- construction -----------------------------------------------------
    @classmethod
    def of(cls, value: Number | str) -> "FixedValue":
        if isinstance(value, FixedValue):
            return value
        if isinstance(value, str):
            return cls.from_decimal(value)
        if isinstance(value, int):
            return cls(value, 0)
        if isinstance(value, Fraction):
            return cls.from_fraction(value)
        raise TypeError(f"cannot build FixedValue from {type(value).__name__}")

    @classmethod
    def from_fraction(cls, value: Fraction) -> "FixedValue":
        den = value.denominator
        if den & (den - 1):
            raise ValueError(f"{value} is not dyadic")
        return cls(value.numerator, den.bit_length() - 1)

    @classmethod
    def from_decimal(cls, text: str, quantize_exp: int | None = None) -> "FixedValue":
        """Parse an exact decimal string.

        Non-dyadic decimals (``"0.1"``) are rejected unless ``quantize_exp`` is
        given, in which case the value is rounded half-up onto the grid
        ``2**-quantize_exp``.
        """
        try:
            dec = Decimal(text.strip())
        except InvalidOperation as exc:
            raise ValueError(f"not a decimal number: {text!r}") from exc
        if not dec.is_finite():
            raise ValueError(f"not a finite number: {text!r}")
        frac = Fraction(dec)
        try:
            return cls.from_fraction(frac)
        except ValueError:
            if quantize_exp is None:
                raise
        scaled = frac * (1 << quantize_exp)
        return cls(math.floor(scaled + Fraction(1, 2)), quantize_exp)

    # -- conversion ---------------------------------------------------------
    def to_fraction(self) -> Fraction:
        return Fraction(self.numer, 1 << self.scale_exp)

    def to_units(self, scale_exp: int) -> int:
        """Numerator over ``2**scale_exp``; the value must fit that grid."""
        if self.scale_exp > scale_exp:
            raise ValueError(f"{self} is finer than 2^-{scale_exp}")
        return self.numer << (scale_exp - self.scale_exp)

    def as_pair(self) -> tuple[int, int]:
        return self.numer, self.scale_exp

    def __float__(self) -> float:
        return self.numer / (1 << self.scale_exp)

    def __str__(self) -> str:
        return format_decimal(self.to_fraction())

    def __repr__(self) -> str:
        return f"FixedValue({self})"

    # -- arithmetic ---------------------------------------------------------
    def _aligned(self, other: "FixedValue") -> tuple[int, int, int]:
        scale = max(self.scale_exp, other.scale_exp)
        return (
            self.numer << (scale - self.scale_exp),
            other.numer << (scale - other.scale_exp),
            scale,
        )

    def __add__(self, other: Number) -> "FixedValue":
        other = FixedValue.of(other)
        a, b, scale = self._aligned(other)
        return FixedValue(a + b, scale)

    __radd__ = __add__

    def __sub__(self, other: Number) -> "FixedValue":
        other = FixedValue.of(other)
        a, b, scale = self._aligned(other)
        return FixedValue(a - b, scale)

    def __rsub__(self, other: Number) -> "FixedValue":
        return FixedValue.of(other) - self

    def __neg__(self) -> "FixedValue":
        return FixedValue(-self.numer, self.scale_exp)

    def __mul__(self, other: int) -> "FixedValue":
        if isinstance(other, FixedValue):
            return FixedValue(self.numer * other.numer, self.scale_exp + other.scale_exp)
        if isinstance(other, int):
            return FixedValue(self.numer * other, self.scale_exp)
        return NotImplemented

    __rmul__ = __mul__

    def half(self) -> "FixedValue":
        return FixedValue(self.numer, self.scale_exp + 1)

    def midpoint(self, other: Number) -> "FixedValue":
        return (self + other).half()

    # -- ordering -----------------------------------------------------------
    def _cmp_key(self, other: object) -> tuple[int, int] | None:
        if isinstance(other, int):
            other = FixedValue(other)
        elif isinstance(other, Fraction):
            return (self.numer * other.denominator, other.numerator << self.scale_exp)
        if not isinstance(other, FixedValue):
            return None
        a, b, _ = self._aligned(other)
        return a, b

    def __lt__(self, other: object) -> bool:
        key = self._cmp_key(other)
        if key is None:
            return NotImplemented
        return key[0] < key[1]

    def __le__(self, other: object) -> bool:
        key = self._cmp_key(other)
        if key is None:
            return NotImplemented
        return key[0] <= key[1]

    def __gt__(self, other: object) -> bool:
        key = self._cmp_key(other)
        if key is None:
            return NotImplemented
        return key[0] > key[1]

    def __ge__(self, other: object) -> bool:
        key = self._cmp_key(other)
        if key is None:
            return NotImplemented
        return key[0] >= key[1]

    def __eq__(self, other: object) -> bool:
        if isinstance(other, FixedValue):
            return self.numer == other.numer and self.scale_exp == other.scale_exp
        key = self._cmp_key(other)
        if key is None:
            return NotImplemented
        return key[0] == key[1]

    def __hash__(self) -> int:
        return hash(self.to_fraction())


def format_decimal(value: Fraction, digits: int = 12) -> str:
    """Decimal text rounded to ``digits`` significant digits, trailing zeros dropped."""
    with localcontext() as ctx:
        ctx.prec = digits
        dec = Decimal(value.numerator) / Decimal(value.denominator)
    text = format(dec, "f")
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    return "0" if text in ("-0", "") else text


class CheckpointId(NamedTuple):
    """One BinAA instance: checkpoint ``k * rho_level`` at ``level``."""

    level: int
    k: int


@dataclass(frozen=True)
class ProtocolConfig:
    n: int
    t: int
    s_bound: FixedValue
    e_bound: FixedValue
    rho0: FixedValue
    delta_max: FixedValue
    epsilon: FixedValue
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("s_bound", "e_bound", "rho0", "delta_max", "epsilon"):
            object.__setattr__(self, name, FixedValue.of(getattr(self, name)))
        if self.t < 0 or self.n < 3 * self.t + 1:
            raise ConfigError(f"need n >= 3t+1, got n={self.n}, t={self.t}")
        if self.n > 0xFFFF:
            raise ConfigError("node ids must fit in 16 bits")
        if not (FixedValue(0) < self.rho0 <= self.delta_max):
            raise ConfigError("need 0 < rho0 <= delta_max")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if not self.s_bound < self.e_bound:
            raise ConfigError("need s_bound < e_bound")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    @classmethod
    def create(
        cls,
        n: int,
        s_bound: Number | str,
        e_bound: Number | str,
        rho0: Number | str,
        delta_max: Number | str,
        epsilon: Number | str,
        t: int | None = None,
        seed: int = 0,
    ) -> "ProtocolConfig":
        """Build a config, rounding ``delta_max`` up to ``rho0 * 2**l``."""
        rho0 = FixedValue.of(rho0)
        if rho0 <= 0:
            raise ConfigError("rho0 must be positive")
        delta = round_delta_up(rho0, FixedValue.of(delta_max))
        if t is None:
            t = (n - 1) // 3
        return cls(
            n=n,
            t=t,
            s_bound=FixedValue.of(s_bound),
            e_bound=FixedValue.of(e_bound),
            rho0=rho0,
            delta_max=delta,
            epsilon=FixedValue.of(epsilon),
            seed=seed,
        )

    def rho(self, level: int) -> FixedValue:
        return self.rho0 * (1 << level)


def round_delta_up(rho0: FixedValue, delta_max: FixedValue) -> FixedValue:
    ratio = delta_max.to_fraction() / rho0.to_fraction()
    levels = 0
    while (1 << levels) < ratio:
        levels += 1
    return rho0 * (1 << levels)


@dataclass(frozen=True)
class DerivedParams:
    l_max: int
    eps_prime: Fraction
    r_max: int


def _ceil_log2(x: Fraction) -> int:
    """Smallest r >= 0 with 2**r >= x."""
    r = 0
    while (1 << r) < x:
        r += 1
    return r


def derive_params(cfg: ProtocolConfig) -> DerivedParams:
    ratio = cfg.delta_max.to_fraction() / cfg.rho0.to_fraction()
    if ratio.denominator != 1 or ratio.numerator & (ratio.numerator - 1):
        raise ConfigError(f"delta_max/rho0 = {ratio} is not a power of two")
    l_max = ratio.numerator.bit_length() - 1
    eps_prime = cfg.epsilon.to_fraction() / (
        4 * cfg.delta_max.to_fraction() * max(1, l_max) * cfg.n
    )
    r_max = _ceil_log2(1 / eps_prime)
    return DerivedParams(l_max=l_max, eps_prime=eps_prime, r_max=r_max)


def level_k_range(cfg: ProtocolConfig, level: int) -> tuple[int, int]:
    """Inclusive index range of checkpoints inside [s, e] at ``level``."""
    rho = cfg.rho(level).to_fraction()
    lo = math.ceil(cfg.s_bound.to_fraction() / rho)
    hi = math.floor(cfg.e_bound.to_fraction() / rho)
    return lo, hi


def all_checkpoints(cfg: ProtocolConfig, l_max: int) -> list[CheckpointId]:
    out = []
    for level in range(l_max + 1):
        lo, hi = level_k_range(cfg, level)
        out.extend(CheckpointId(level, k) for k in range(lo, hi + 1))
    return out


def checkpoint_value(cfg: ProtocolConfig, cp: CheckpointId) -> FixedValue:
    return cfg.rho(cp.level) * cp.k


def checkpoints_for_input(v: Number | str, level: int, cfg: ProtocolConfig) -> set[CheckpointId]:
    """The checkpoints at ``level`` that receive binary input 1 from ``v``.

    These are ``floor(v/rho)`` and its right neighbour, clipped to [s, e].
    A value sitting exactly on a checkpoint therefore picks that checkpoint and
    the next one up.
    """
    v = FixedValue.of(v)
    if not cfg.s_bound <= v <= cfg.e_bound:
        raise OutOfRange(f"input {v} outside [{cfg.s_bound}, {cfg.e_bound}]")
    rho = cfg.rho(level).to_fraction()
    lo, hi = level_k_range(cfg, level)
    base = math.floor(v.to_fraction() / rho)
    return {CheckpointId(level, k) for k in (base, base + 1) if lo <= k <= hi}
