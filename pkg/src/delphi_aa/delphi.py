"""Multi-level checkpoint approximate agreement for real-valued inputs.

Every level ``l`` places checkpoints ``k * rho0 * 2**l`` across the domain and
runs one BinAA instance per checkpoint. A node feeds 1 into the two
checkpoints next to its input at each level and 0 everywhere else. After all
instances finish, each level is summarised by a weighted average of its
checkpoints, and levels are combined with weights
``w'_0 = w_0**2`` and ``w'_l = w_l * |w_l - w_(l-1)|``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

from .binaa import ECHO1, ECHO2, VAL, BinAA
from .core import (
    CheckpointId,
    DerivedParams,
    FixedValue,
    ProtocolConfig,
    checkpoints_for_input,
    derive_params,
    level_k_range,
)
from .encoding import COMPACT, PLAIN, MovementTracker, WireBatch, encode_batch
from .errors import MalformedBatch, OutOfRange, ZeroDenominator


@dataclass(frozen=True)
class LevelAggregate:
    level: int
    rep_value: Fraction
    rep_weight: Fraction
    is_fallback: bool = False


def aggregate_level(
    weights: Mapping[int, Fraction],
    level: int,
    own_input: FixedValue | Fraction,
    eps_prime: Fraction,
    rho: FixedValue | Fraction,
) -> LevelAggregate:
    """Weighted checkpoint average of one level, or the own-input fallback."""
    rho = rho.to_fraction() if isinstance(rho, FixedValue) else Fraction(rho)
    total = Fraction(0)
    moment = Fraction(0)
    top = Fraction(0)
    for k, w in weights.items():
        if w > 0:
            total += w
            moment += w * k * rho
            if w > top:
                top = w
    if total == 0:
        own = own_input.to_fraction() if isinstance(own_input, FixedValue) else Fraction(own_input)
        return LevelAggregate(level, own, Fraction(eps_prime), True)
    return LevelAggregate(level, moment / total, top, False)


def cross_level_weights(levels: Sequence[LevelAggregate]) -> list[Fraction]:
    weights = []
    prev = None
    for agg in levels:
        w = agg.rep_weight
        weights.append(w * w if prev is None else w * abs(w - prev))
        prev = w
    return weights


def cross_level_aggregate(levels: Sequence[LevelAggregate]) -> Fraction:
    if [agg.level for agg in levels] != list(range(len(levels))):
        raise ValueError("levels must be ordered 0..l_max without gaps")
    weights = cross_level_weights(levels)
    total = sum(weights, Fraction(0))
    if total == 0:
        raise ZeroDenominator("all cross-level weights are zero")
    return sum((w * agg.rep_value for w, agg in zip(weights, levels)), Fraction(0)) / total


def _kind_class(kind: int) -> int:
    return 1 if kind == ECHO2 else 0


class DelphiInstance:
    """One node's protocol state across all checkpoints of all levels."""

    def __init__(
        self,
        node_id: int,
        cfg: ProtocolConfig,
        params: DerivedParams | None = None,
        encoding: str = COMPACT,
    ) -> None:
        if encoding not in (PLAIN, COMPACT):
            raise ValueError(f"unknown encoding {encoding!r}")
        self.node_id = node_id
        self.cfg = cfg
        self.params = params or derive_params(cfg)
        self.encoding = encoding
        self.layout = {lvl: level_k_range(cfg, lvl) for lvl in range(self.params.l_max + 1)}
        self.own_input: FixedValue | None = None
        self.states: dict[CheckpointId, BinAA] = {}
        self.tracker = MovementTracker(self.params.r_max)
        self.output: Fraction | None = None
        self.levels: list[LevelAggregate] = []
        self.cross_weights: list[Fraction] = []
        self.unknown_checkpoints = 0
        self._done = 0
        self._flushes = 0

    @property
    def finished(self) -> bool:
        return self.output is not None

    @property
    def equivocations(self) -> int:
        return sum(s.equivocations for s in self.states.values())

    def start(self, value: FixedValue | str | int) -> WireBatch:
        return self._flush(self.start_messages(value))

    def start_messages(self, value: FixedValue | str | int) -> list[tuple]:
        """Start every instance; returns the unencoded round-1 messages."""
        value = FixedValue.of(value)
        cfg, p = self.cfg, self.params
        if not cfg.s_bound <= value <= cfg.e_bound:
            raise OutOfRange(f"input {value} outside [{cfg.s_bound}, {cfg.e_bound}]")
        self.own_input = value
        delta = self.encoding == COMPACT
        out: list = []
        for level in range(p.l_max + 1):
            ones = checkpoints_for_input(value, level, cfg)
            lo, hi = self.layout[level]
            for k in range(lo, hi + 1):
                cp = CheckpointId(level, k)
                st = BinAA(cp, cfg.n, cfg.t, p.r_max, self.node_id, delta)
                self.states[cp] = st
                mine: list = []
                st.start(1 if cp in ones else 0, mine)
                out.extend((level, k, kind, rnd, payload) for kind, rnd, payload in mine)
        return out

    def _flush(self, out: list) -> WireBatch:
        self._flushes += 1
        return encode_batch(out, self.node_id, self.params.r_max, self.encoding, self.layout, self._flushes)

    def encode(self, out: list) -> WireBatch:
        return self._flush(out)

    def _resolve(self, batch: WireBatch) -> list[tuple]:
        sender = batch.sender
        msgs = sorted(batch.messages(), key=lambda m: (m[0], m[1], m[3], _kind_class(m[2]), m[4]))
        resolved = []
        tracker = self.tracker
        states = self.states
        for level, k, kind, rnd, payload in msgs:
            if (level, k) not in states:
                self.unknown_checkpoints += 1
                continue
            if kind == VAL:
                for r2, value in tracker.movement(sender, level, k, rnd, payload):
                    resolved.append((level, k, r2, 0, value, ECHO1))
                continue
            if kind == ECHO1 and rnd == 1:
                for r2, value in tracker.anchor(sender, level, k, payload):
                    resolved.append((level, k, r2, 0, value, ECHO1))
            resolved.append((level, k, rnd, _kind_class(kind), payload, kind))
        resolved.sort()
        return resolved

    def step(self, batch: WireBatch) -> WireBatch | None:
        """Dispatch one incoming batch; returns the bundled replies, if any."""
        out = self.step_messages(batch)
        return self._flush(out) if out else None

    def step_messages(self, batch: WireBatch) -> list[tuple]:
        if self.own_input is None:
            raise RuntimeError("start() must run before step()")
        if batch.sender == self.node_id:
            return []
        if batch.scale_exp != self.params.r_max:
            raise MalformedBatch(f"batch grid 2^-{batch.scale_exp} != 2^-{self.params.r_max}")
        sender = batch.sender
        states = self.states
        out: list = []
        for level, k, rnd, _, value, kind in self._resolve(batch):
            st = states[(level, k)]
            mine: list = []
            was_done = st.done
            st.handle(kind, rnd, value, sender, mine)
            st.advance(mine)
            if st.done and not was_done:
                self._done += 1
            if mine:
                out.extend((level, k, kd, r, pl) for kd, r, pl in mine)
        if self.output is None and self._done == len(states):
            self._aggregate()
        return out

    def _aggregate(self) -> None:
        cfg, p = self.cfg, self.params
        one = 1 << p.r_max
        levels = []
        for level in range(p.l_max + 1):
            lo, hi = self.layout[level]
            weights = {k: Fraction(self.states[(level, k)].value, one) for k in range(lo, hi + 1)}
            levels.append(aggregate_level(weights, level, self.own_input, p.eps_prime, cfg.rho(level)))
        self.levels = levels
        self.cross_weights = cross_level_weights(levels)
        self.output = cross_level_aggregate(levels)

    def weights(self, level: int) -> dict[int, Fraction]:
        one = 1 << self.params.r_max
        lo, hi = self.layout[level]
        return {k: Fraction(self.states[(level, k)].value, one) for k in range(lo, hi + 1)}


def delphi_start(v_i, cfg: ProtocolConfig, node_id: int = 0, encoding: str = COMPACT) -> tuple[DelphiInstance, WireBatch]:
    inst = DelphiInstance(node_id, cfg, encoding=encoding)
    return inst, inst.start(v_i)


def delphi_step(instance: DelphiInstance, batch: WireBatch | None) -> tuple[DelphiInstance, WireBatch | None]:
    if batch is None or not batch.records:
        return instance, None
    return instance, instance.step(batch)
