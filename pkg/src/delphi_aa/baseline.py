"""Witness-technique approximate agreement over Bracha reliable broadcast.

This is the comparison baseline. Each round every node reliably broadcasts
its value, reports the first ``n - t`` values it delivered, and waits for
``n - t`` witnesses (peers whose reports it has fully delivered) before
applying ``Reduce``. A preliminary estimation phase fixes the round count.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Sequence

from .core import FixedValue, ProtocolConfig
from .encoding import HEADER_BYTES
from .errors import ConfigError, NonTermination, TooFewValues
from .simnet import (
    DEFAULT_MAX_EVENTS,
    AdversarySpec,
    Network,
    RunReport,
    agreement_distance,
    parse_input,
    validity_relaxation,
)

INIT, ECHO, READY, REPORT = 1, 2, 3, 4
VALUE, REPORTSET = 0, 1
ESTIMATION = 0

VALUE_BYTES = 9  # i64 numer + u8 scale, as on the Delphi wire
# kind u8, phase u16, purpose u8, broadcaster u16
RECORD_BYTES = 6


def reduce_values(values: Iterable[Fraction | FixedValue | int], t: int) -> Fraction:
    """Trim ``t`` values off each end of the sorted multiset; midpoint of the rest."""
    vals = sorted(v.to_fraction() if isinstance(v, FixedValue) else Fraction(v) for v in values)
    if len(vals) <= 2 * t:
        raise TooFewValues(f"need more than {2 * t} values, got {len(vals)}")
    kept = vals[t:len(vals) - t]
    return (kept[0] + kept[-1]) / 2


def rounds_for_range(spread: Fraction, epsilon: Fraction | FixedValue) -> int:
    """ceil(log2(spread / epsilon)), and 0 once the spread is within epsilon."""
    eps = epsilon.to_fraction() if isinstance(epsilon, FixedValue) else Fraction(epsilon)
    ratio = Fraction(spread) / eps
    r = 0
    while (1 << r) < ratio:
        r += 1
    return r


def _payload_bytes(purpose: int, payload: Any) -> int:
    if purpose == VALUE:
        return VALUE_BYTES
    return 2 + len(payload) * (2 + VALUE_BYTES)


@dataclass(frozen=True)
class WitnessMsg:
    kind: int
    phase: int
    purpose: int
    broadcaster: int
    payload: Any  # Fraction, or a tuple of (sender, Fraction) pairs

    @property
    def nbytes(self) -> int:
        return HEADER_BYTES + RECORD_BYTES + _payload_bytes(self.purpose, self.payload)


# -- Bracha reliable broadcast -------------------------------------------------

@dataclass
class RBCState:
    broadcaster: int
    tag: tuple[int, int]
    n: int
    t: int
    echoes: dict[Any, set[int]] = field(default_factory=dict)
    readies: dict[Any, set[int]] = field(default_factory=dict)
    echoed: bool = False
    readied: bool = False
    delivered: Any = None

    @property
    def echo_quorum(self) -> int:
        # 2t+1 when n = 3t+1; the general form keeps two quorums overlapping
        # in an honest node for any n > 3t.
        return (self.n + self.t + 2) // 2


def bracha_handle(state: RBCState, msg: WitnessMsg, sender: int) -> tuple[RBCState, list[WitnessMsg]]:
    """One RBC transition. Duplicates and stray INITs are ignored."""
    out: list[WitnessMsg] = []
    phase, purpose = state.tag
    value = msg.payload

    def emit(kind: int) -> None:
        out.append(WitnessMsg(kind, phase, purpose, state.broadcaster, value))

    if msg.kind == INIT:
        if sender == state.broadcaster and not state.echoed:
            state.echoed = True
            emit(ECHO)
    elif msg.kind == ECHO:
        votes = state.echoes.setdefault(value, set())
        votes.add(sender)
        if len(votes) >= state.echo_quorum and not state.readied:
            state.readied = True
            emit(READY)
    elif msg.kind == READY:
        votes = state.readies.setdefault(value, set())
        votes.add(sender)
        if len(votes) >= state.t + 1 and not state.readied:
            state.readied = True
            emit(READY)
        if len(votes) >= 2 * state.t + 1 and state.delivered is None:
            state.delivered = value
    return state, out


# -- witness nodes ------------------------------------------------------------------

@dataclass
class _Phase:
    delivered: list[tuple[int, Any]] = field(default_factory=list)
    reported: bool = False
    reports: dict[int, frozenset] = field(default_factory=dict)
    witnesses: set[int] = field(default_factory=set)
    report_sets: dict[int, tuple] = field(default_factory=dict)


class WitnessNode:
    """Honest witness-technique node; ``rounds`` is None for the estimation phase."""

    def __init__(self, node: int, n: int, t: int, value: Fraction, epsilon: Fraction,
                 rounds: int | None) -> None:
        self.node = node
        self.n = n
        self.t = t
        self.value = value
        self.epsilon = epsilon
        self.rounds = rounds
        self.phase = ESTIMATION if rounds is None else 1
        self.rbc: dict[tuple[int, int, int], RBCState] = {}
        self.phases: dict[int, _Phase] = {}
        self.announced: set[tuple[int, int, int]] = set()
        self.history: list[Fraction] = [value]
        self.output: Fraction | None = None
        self.estimate: int | None = None

    # one broadcast value per (phase, purpose) from this node
    def _broadcast(self, purpose: int, payload: Any) -> list[tuple[int | None, WitnessMsg]]:
        msg = WitnessMsg(INIT, self.phase, purpose, self.node, payload)
        return [(None, msg)] + self._self_deliver(msg)

    def _self_deliver(self, msg: WitnessMsg) -> list[tuple[int | None, WitnessMsg]]:
        return self.receive(self.node, msg)

    def start(self):
        if self.rounds == 0:
            self.output = self.value
            return []
        return self._broadcast(VALUE, self.value)

    def _ph(self, phase: int) -> _Phase:
        ph = self.phases.get(phase)
        if ph is None:
            ph = self.phases[phase] = _Phase()
        return ph

    def receive(self, src: int, msg: WitnessMsg):
        out: list = []
        if msg.kind == REPORT:
            if msg.phase >= 1 and src == msg.broadcaster:
                ph = self._ph(msg.phase)
                if src not in ph.reports:
                    ph.reports[src] = frozenset(msg.payload)
                    out += self._progress()
            return out
        key = (msg.phase, msg.purpose, msg.broadcaster)
        st = self.rbc.get(key)
        if st is None:
            st = self.rbc[key] = RBCState(msg.broadcaster, (msg.phase, msg.purpose), self.n, self.t)
        _, sends = bracha_handle(st, msg, src)
        for m in sends:
            out.append((None, m))
            out += self.receive(self.node, m)
        if st.delivered is not None and key not in self.announced:
            self.announced.add(key)
            out += self._on_deliver(msg.phase, msg.purpose, msg.broadcaster, st.delivered)
        return out

    def _on_deliver(self, phase: int, purpose: int, who: int, payload: Any):
        ph = self._ph(phase)
        out: list = []
        if purpose == VALUE:
            ph.delivered.append((who, payload))
            if len(ph.delivered) == self.n - self.t and not ph.reported and phase == self.phase:
                out += self._report(ph)
        elif phase == ESTIMATION:
            ph.reports[who] = frozenset(payload)
            ph.report_sets[who] = payload
        out += self._progress()
        return out

    def _report(self, ph: _Phase):
        ph.reported = True
        first = tuple(ph.delivered[: self.n - self.t])
        if self.phase == ESTIMATION:
            return self._broadcast(REPORTSET, first)
        msg = WitnessMsg(REPORT, self.phase, REPORTSET, self.node, first)
        ph.reports[self.node] = frozenset(first)
        return [(None, msg)]

    def _progress(self):
        out: list = []
        while self.output is None and self.estimate is None:
            ph = self._ph(self.phase)
            if not ph.reported and len(ph.delivered) >= self.n - self.t:
                out += self._report(ph)
            have = set(ph.delivered)
            for j, rep in ph.reports.items():
                if j not in ph.witnesses and len(rep & have) >= self.n - self.t:
                    ph.witnesses.add(j)
            if len(ph.witnesses) < self.n - self.t:
                break
            values = [v for _, v in ph.delivered]
            if self.phase == ESTIMATION:
                for k in sorted(ph.witnesses):
                    values.append(reduce_values((v for _, v in ph.report_sets[k]), self.t))
                self.value = reduce_values(values, self.t)
                self.estimate = rounds_for_range(max(values) - min(values), self.epsilon)
                self.history = [self.value]
                break
            self.value = reduce_values(values, self.t)
            self.history.append(self.value)
            if self.phase >= self.rounds:
                self.output = self.value
                break
            self.phase += 1
            out += self._broadcast(VALUE, self.value)
        return out


class _Silent:
    def start(self):
        return []

    def receive(self, src, msg):
        return []


class _EquivocatingWitness(WitnessNode):
    """Splits every own INIT between two values; otherwise follows the protocol."""

    def __init__(self, *args, low: Fraction, high: Fraction, **kwargs) -> None:
        super().__init__(*args, **kwargs)
        self.low = low
        self.high = high

    def _broadcast(self, purpose, payload):
        if purpose != VALUE:
            return super()._broadcast(purpose, payload)
        out = []
        for d in range(self.n):
            if d != self.node:
                out.append((d, WitnessMsg(INIT, self.phase, VALUE, self.node, self.low if d % 2 else self.high)))
        return out


class _NoisyWitness(WitnessNode):
    def __init__(self, *args, rng: random.Random, low: Fraction, high: Fraction, **kwargs) -> None:
        super().__init__(*args, **kwargs)
        self.rng = rng
        self.low = low
        self.high = high

    def _broadcast(self, purpose, payload):
        if purpose == VALUE:
            steps = 64
            payload = self.low + (self.high - self.low) * Fraction(self.rng.randint(0, steps), steps)
        return super()._broadcast(purpose, payload)


def _build(cfg: ProtocolConfig, adversary: AdversarySpec, values: Sequence[Fraction], rounds: int | None, seed: int):
    s, e = cfg.s_bound.to_fraction(), cfg.e_bound.to_fraction()
    eps = cfg.epsilon.to_fraction()
    procs = []
    for node in range(cfg.n):
        if node not in adversary.byzantine:
            procs.append(WitnessNode(node, cfg.n, cfg.t, values[node], eps, rounds))
            continue
        behavior = adversary.behavior_of(node)
        if behavior == "silent":
            procs.append(_Silent())
        elif behavior == "extreme_low":
            procs.append(WitnessNode(node, cfg.n, cfg.t, s, eps, rounds))
        elif behavior == "extreme_high":
            procs.append(WitnessNode(node, cfg.n, cfg.t, e, eps, rounds))
        elif behavior == "equivocator":
            procs.append(_EquivocatingWitness(node, cfg.n, cfg.t, values[node], eps, rounds, low=s, high=e))
        else:
            rng = random.Random(f"wnoise-{seed}-{node}-{rounds}")
            procs.append(_NoisyWitness(node, cfg.n, cfg.t, values[node], eps, rounds, rng=rng, low=s, high=e))
    return procs


@dataclass
class WitnessTrace:
    estimates: dict[int, int]
    histories: dict[int, list[Fraction]]
    start_values: dict[int, Fraction]


def _run_phase(cfg, adversary, values, rounds, seed, tag, max_events):
    net = Network(cfg.n, adversary.make_scheduler(cfg.n), random.Random(f"{tag}-{seed}"), max_events)
    procs = _build(cfg, adversary, values, rounds, seed)
    net.run(procs)
    return net, procs


def estimate_rounds(cfg: ProtocolConfig, adversary: AdversarySpec, inputs: Sequence[Fraction],
                    max_events: int = DEFAULT_MAX_EVENTS) -> tuple[dict[int, int], dict[int, Fraction], Network]:
    """Run the estimation phase; per honest node (rounds, updated value)."""
    net, procs = _run_phase(cfg, adversary, inputs, None, cfg.seed, "west", max_events)
    honest = [i for i in range(cfg.n) if i not in adversary.byzantine]
    stalled = [i for i in honest if procs[i].estimate is None]
    if stalled:
        raise NonTermination(f"estimation stalled at {stalled}")
    return {i: procs[i].estimate for i in honest}, {i: procs[i].value for i in honest}, net


def witness_protocol_run(cfg: ProtocolConfig, adversary: AdversarySpec, values: Sequence[Fraction],
                         rounds: int, max_events: int = DEFAULT_MAX_EVENTS) -> tuple[dict[int, WitnessNode], Network]:
    if rounds < 0:
        raise ConfigError("rounds must be non-negative")
    net, procs = _run_phase(cfg, adversary, values, rounds, cfg.seed, "wrun", max_events)
    honest = {i: procs[i] for i in range(cfg.n) if i not in adversary.byzantine}
    stalled = [i for i, p in honest.items() if p.output is None]
    if stalled:
        raise NonTermination(f"witness rounds stalled at {stalled}")
    return honest, net


def run_witness(cfg: ProtocolConfig, adversary: AdversarySpec, inputs: Sequence[FixedValue | str | int],
                *, rounds: int | None = None, max_events: int = DEFAULT_MAX_EVENTS,
                keep_trace: bool = False) -> RunReport:
    """Estimation (unless ``rounds`` is given) followed by the witness rounds.

    Every honest node must run the same number of rounds or late nodes lose
    their ``n - t`` quorum, so the run uses the largest honest estimate.
    """
    if len(inputs) != cfg.n:
        raise ConfigError(f"expected {cfg.n} inputs, got {len(inputs)}")
    adversary.validate(cfg)
    fixed = [parse_input(v) for v in inputs]
    values = [v.to_fraction() for v in fixed]
    honest_ids = [i for i in range(cfg.n) if i not in adversary.byzantine]
    msgs = nbytes = 0
    estimates: dict[int, int] = {}
    start = list(values)
    if rounds is None:
        estimates, updated, net = estimate_rounds(cfg, adversary, values, max_events)
        msgs, nbytes = net.messages_sent, net.bytes_sent
        rounds = max(estimates.values())
        for i, v in updated.items():
            start[i] = v
    honest, net = witness_protocol_run(cfg, adversary, start, rounds, max_events)
    outputs = {i: p.output for i, p in honest.items()}
    honest_inputs = {i: fixed[i] for i in honest_ids}
    report = RunReport(
        protocol="witness",
        n=cfg.n,
        t=cfg.t,
        rho0=cfg.rho0,
        delta_max=cfg.delta_max,
        epsilon=cfg.epsilon,
        seed=cfg.seed,
        scheduler=adversary.scheduler,
        behavior=adversary.behavior_name if adversary.byzantine else "none",
        encoding="rbc",
        honest_inputs=honest_inputs,
        outputs=outputs,
        rounds_used=rounds,
        messages_sent=msgs + net.messages_sent,
        bytes_sent=nbytes + net.bytes_sent,
        agreement_distance=agreement_distance(outputs.values()),
        validity_relaxation=validity_relaxation(outputs.values(), honest_inputs.values()),
    )
    if keep_trace:
        report.trace = WitnessTrace(estimates, {i: p.history for i, p in honest.items()},
                                    {i: start[i] for i in honest_ids})
    return report


def halving_violations(trace: WitnessTrace) -> list[str]:
    """Rounds where the honest range failed to halve."""
    hist = list(trace.histories.values())
    out = []
    for r in range(1, min(len(h) for h in hist)):
        before = [h[r - 1] for h in hist]
        after = [h[r] for h in hist]
        if max(after) - min(after) > (max(before) - min(before)) / 2:
            out.append(f"round {r}: {max(after) - min(after)} > half of {max(before) - min(before)}")
    return out


__all__ = [
    "RBCState",
    "WitnessMsg",
    "WitnessNode",
    "bracha_handle",
    "estimate_rounds",
    "halving_violations",
    "reduce_values",
    "rounds_for_range",
    "run_witness",
    "witness_protocol_run",
]
