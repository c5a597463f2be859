"""Oracle finalization: snap agreed outputs to the epsilon grid and certify.

Honest outputs are within epsilon of each other, so their grid values cover at
most two adjacent multiples of epsilon and at least one of them collects t+1
matching attestations.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

from .core import FixedValue
from .errors import ConflictingCertificates

TAG_BYTES = 32
# node:u16 + value (i64 numer, u8 scale) + tag
ATTESTATION_BYTES = 2 + 9 + TAG_BYTES


def round_to_grid(o_i: Fraction | FixedValue, epsilon: FixedValue) -> FixedValue:
    """Nearest multiple of ``epsilon``; exact halves round toward +inf."""
    value = o_i.to_fraction() if isinstance(o_i, FixedValue) else Fraction(o_i)
    eps = epsilon.to_fraction()
    if eps <= 0:
        raise ValueError("epsilon must be positive")
    k = math.floor(value / eps + Fraction(1, 2))
    return epsilon * k


def attestation_tag(node: int, grid_value: FixedValue, seed: int) -> bytes:
    # Stand-in for a signature: only the simulator, which knows the true
    # sender of every message, ever mints these.
    text = f"{node}:{grid_value.numer}:{grid_value.scale_exp}:{seed}"
    return hashlib.sha256(text.encode()).digest()


@dataclass(frozen=True)
class Attestation:
    node: int
    grid_value: FixedValue
    tag: bytes

    nbytes = ATTESTATION_BYTES

    @classmethod
    def make(cls, node: int, grid_value: FixedValue, seed: int) -> "Attestation":
        return cls(node, grid_value, attestation_tag(node, grid_value, seed))


@dataclass(frozen=True)
class Certificate:
    grid_value: FixedValue
    attestors: frozenset[int]

    def to_json(self) -> dict:
        return {
            "grid_value": str(self.grid_value),
            "grid_value_exact": list(self.grid_value.as_pair()),
            "attestors": sorted(self.attestors),
        }


class Certifier:
    """Collects attestations until some value has t+1 distinct attestors."""

    def __init__(self, t: int, seed: int, epsilon: FixedValue | None = None) -> None:
        self.t = t
        self.seed = seed
        self.epsilon = epsilon
        self.support: dict[FixedValue, set[int]] = {}
        self.rejected = 0
        self.certificate: Certificate | None = None

    def add(self, sender: int, att: Attestation) -> Certificate | None:
        """Returns the certificate the first time one forms."""
        if att.node != sender or att.tag != attestation_tag(att.node, att.grid_value, self.seed):
            self.rejected += 1
            return None
        if self.epsilon is not None and (att.grid_value.to_fraction() / self.epsilon.to_fraction()).denominator != 1:
            self.rejected += 1
            return None
        nodes = self.support.setdefault(att.grid_value, set())
        nodes.add(att.node)
        if self.certificate is None and len(nodes) >= self.t + 1:
            self.certificate = Certificate(att.grid_value, frozenset(nodes))
            return self.certificate
        return None


def certify(attestations: Iterable[tuple[int, Attestation]], t: int, seed: int) -> Certificate:
    """First value reaching t+1 matching attestations in stream order."""
    certifier = Certifier(t, seed)
    for sender, att in attestations:
        cert = certifier.add(sender, att)
        if cert is not None:
            return cert
    raise ValueError("no value collected t+1 attestations")


def check_certificates(certificates: Iterable[Certificate], epsilon: FixedValue) -> None:
    """Certified values must sit on at most two adjacent grid points."""
    values = sorted({c.grid_value for c in certificates})
    if len(values) > 2 or (len(values) == 2 and values[1] - values[0] != epsilon):
        raise ConflictingCertificates(f"certificates on {', '.join(map(str, values))}")


def grid_span_ok(grid_values: Iterable[FixedValue], epsilon: FixedValue) -> bool:
    values = sorted(set(grid_values))
    return len(values) <= 1 or (len(values) == 2 and values[1] - values[0] == epsilon)
