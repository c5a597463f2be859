"""Deterministic discrete-event network for running protocols under attack.

Time is logical. Every send draws an integer delay from the scheduler; links
are FIFO, nothing is dropped, and the loop runs until no event is pending.
All randomness comes from generators seeded by the run seed, so a run is a
pure function of (config, adversary, inputs, seed).
"""

from __future__ import annotations

import csv
import heapq
import io
import json
import random
from importlib import resources
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Protocol, Sequence

from .binaa import ECHO1, ECHO2, VAL
from .core import DerivedParams, FixedValue, ProtocolConfig, derive_params, format_decimal
from .delphi import DelphiInstance
from .encoding import COMPACT, WireBatch, encode_batch
from .errors import ConfigError, NonTermination
from .finalize import Attestation, Certificate, Certifier, check_certificates, round_to_grid

BEHAVIORS = ("silent", "equivocator", "extreme_low", "extreme_high", "random_noise")
SCHEDULERS = ("uniform_random", "targeted_delay", "skew")

CSV_COLUMNS = (
    "n", "t", "rho0", "delta_max", "epsilon", "seed", "scheduler", "behavior",
    "rounds_used", "messages_sent", "bytes_sent", "agreement_distance",
    "validity_relaxation", "equivocations",
)

DEFAULT_MAX_EVENTS = 10**8
# decimal inputs such as "10.37" are snapped to this binary grid
INPUT_QUANTUM_EXP = 24


def parse_input(value: FixedValue | Fraction | str | int) -> FixedValue:
    if isinstance(value, str):
        return FixedValue.from_decimal(value, INPUT_QUANTUM_EXP)
    if isinstance(value, Fraction) and value.denominator & (value.denominator - 1):
        return FixedValue(round(value * (1 << INPUT_QUANTUM_EXP)), INPUT_QUANTUM_EXP)
    return FixedValue.of(value)


# -- schedulers --------------------------------------------------------------

@dataclass(frozen=True)
class UniformRandom:
    max_delay: int = 20
    name = "uniform_random"

    def delay(self, src: int, dst: int, rng: random.Random) -> int:
        return rng.randint(1, self.max_delay)


@dataclass(frozen=True)
class TargetedDelay:
    """Slows the listed links by ``factor``; defaults to every link of node 0."""

    links: frozenset[tuple[int, int]] | None = None
    factor: int = 10
    max_delay: int = 20
    name = "targeted_delay"

    def delay(self, src: int, dst: int, rng: random.Random) -> int:
        base = rng.randint(1, self.max_delay)
        if self.links is None:
            slow = src == 0 or dst == 0
        else:
            slow = (src, dst) in self.links
        return base * self.factor if slow else base


@dataclass(frozen=True)
class Skew:
    """Adds ``lag`` to every message crossing the partition boundary."""

    partition: frozenset[int] | None = None
    lag: int = 60
    max_delay: int = 20
    name = "skew"

    def delay(self, src: int, dst: int, rng: random.Random) -> int:
        base = rng.randint(1, self.max_delay)
        part = self.partition
        if part is None:
            # first half of the ids; fixed per run through the node count
            return base
        return base + self.lag if (src in part) != (dst in part) else base


def make_scheduler(name: str, n: int, **kwargs: Any):
    if name == "uniform_random":
        return UniformRandom(**kwargs)
    if name == "targeted_delay":
        return TargetedDelay(**kwargs)
    if name == "skew":
        kwargs.setdefault("partition", frozenset(range(n // 2)))
        return Skew(**kwargs)
    raise ConfigError(f"unknown scheduler {name!r}")


@dataclass(frozen=True)
class AdversarySpec:
    byzantine: frozenset[int] = frozenset()
    behavior: str | tuple[tuple[int, str], ...] = "silent"
    scheduler: str = "uniform_random"
    scheduler_args: tuple[tuple[str, Any], ...] = ()

    @classmethod
    def standard(cls, n: int, t: int, behavior: str = "silent", scheduler: str = "uniform_random",
                 faulty: int | None = None, **scheduler_args: Any) -> "AdversarySpec":
        """Corrupt the ``faulty`` (default ``t``) highest node ids."""
        count = t if faulty is None else faulty
        return cls(frozenset(range(n - count, n)), behavior, scheduler, tuple(sorted(scheduler_args.items())))

    def behavior_of(self, node: int) -> str:
        if isinstance(self.behavior, str):
            return self.behavior
        return dict(self.behavior)[node]

    @property
    def behavior_name(self) -> str:
        if isinstance(self.behavior, str):
            return self.behavior
        return "+".join(sorted({b for _, b in self.behavior}))

    def validate(self, cfg: ProtocolConfig) -> None:
        if len(self.byzantine) > cfg.t:
            raise ConfigError(f"{len(self.byzantine)} byzantine nodes exceed t={cfg.t}")
        if any(not 0 <= b < cfg.n for b in self.byzantine):
            raise ConfigError("byzantine id out of range")
        for node in self.byzantine:
            if self.behavior_of(node) not in BEHAVIORS:
                raise ConfigError(f"unknown behavior {self.behavior_of(node)!r}")
        if self.scheduler not in SCHEDULERS:
            raise ConfigError(f"unknown scheduler {self.scheduler!r}")

    def make_scheduler(self, n: int):
        return make_scheduler(self.scheduler, n, **dict(self.scheduler_args))


# -- event loop ----------------------------------------------------------------

class Process(Protocol):
    def start(self) -> list[tuple[int | None, Any]]: ...

    def receive(self, src: int, payload: Any) -> list[tuple[int | None, Any]]: ...


@dataclass(order=True)
class Event:
    deliver_time: int
    seq: int
    src: int = field(compare=False)
    dst: int = field(compare=False)
    payload: Any = field(compare=False)


class Network:
    """FIFO point-to-point links with scheduler-chosen delays.

    A send to ``None`` goes to every other node. ``seq`` is global and
    increasing, so equal delivery times on one link keep send order.
    """

    def __init__(self, n: int, scheduler, rng: random.Random, max_events: int = DEFAULT_MAX_EVENTS) -> None:
        self.n = n
        self.scheduler = scheduler
        self.rng = rng
        self.max_events = max_events
        self.now = 0
        self.seq = 0
        self.queue: list[tuple[int, int, int, int, Any]] = []
        self.link_clock: dict[tuple[int, int], int] = {}
        self.messages_sent = 0
        self.bytes_sent = 0
        self.bytes_by_sender = [0] * n
        self.delivered = 0

    def send(self, src: int, sends: Iterable[tuple[int | None, Any]]) -> None:
        for dst, payload in sends:
            targets = range(self.n) if dst is None else (dst,)
            size = payload.nbytes
            for d in targets:
                if d == src:
                    continue
                at = self.now + self.scheduler.delay(src, d, self.rng)
                link = (src, d)
                last = self.link_clock.get(link, 0)
                if at < last:
                    at = last
                self.link_clock[link] = at
                self.seq += 1
                heapq.heappush(self.queue, (at, self.seq, src, d, payload))
                self.messages_sent += 1
                self.bytes_sent += size
                self.bytes_by_sender[src] += size

    def run(self, processes: Sequence[Process]) -> None:
        for node, proc in enumerate(processes):
            self.send(node, proc.start())
        queue = self.queue
        while queue:
            at, _, src, dst, payload = heapq.heappop(queue)
            self.now = at
            self.delivered += 1
            if self.delivered > self.max_events:
                raise NonTermination(f"event ceiling {self.max_events} exceeded at time {at}")
            sends = processes[dst].receive(src, payload)
            if sends:
                self.send(dst, sends)


# -- processes -------------------------------------------------------------------

class HonestDelphi:
    def __init__(self, node: int, cfg: ProtocolConfig, value: FixedValue, encoding: str, params=None) -> None:
        self.node = node
        self.value = value
        self.instance = DelphiInstance(node, cfg, params, encoding)

    def start(self):
        return [(None, self.instance.start(self.value))]

    def receive(self, src, payload):
        out = self.instance.step(payload)
        return [(None, out)] if out is not None else []


class SilentNode:
    def start(self):
        return []

    def receive(self, src, payload):
        return []


class EquivocatorNode:
    """Runs the protocol honestly but mirrors every value for half the peers.

    Peers with even ids see the real stream; the others see ``1 - v`` for every
    echoed value and the negated movement for every VAL, so each half receives
    a self-consistent but conflicting view.
    """

    def __init__(self, node: int, cfg: ProtocolConfig, value: FixedValue, encoding: str, params=None) -> None:
        self.node = node
        self.value = value
        self.instance = DelphiInstance(node, cfg, params, encoding)
        self.one = 1 << self.instance.params.r_max
        self.n = cfg.n

    def _mirror(self, msgs):
        one = self.one
        return [(lv, k, kind, r, -p if kind == VAL else one - p) for lv, k, kind, r, p in msgs]

    def _emit(self, msgs):
        if not msgs:
            return []
        inst = self.instance
        real = inst.encode(msgs)
        fake = inst.encode(self._mirror(msgs))
        return [(d, real if d % 2 == 0 else fake) for d in range(self.n) if d != self.node]

    def start(self):
        return self._emit(self.instance.start_messages(self.value))

    def receive(self, src, payload):
        return self._emit(self.instance.step_messages(payload))


class NoiseNode:
    """Sends well-formed random echoes in reaction to honest traffic."""

    def __init__(self, node: int, cfg: ProtocolConfig, honest: frozenset[int], rng: random.Random,
                 encoding: str, params=None, rate: float = 0.3) -> None:
        self.node = node
        self.cfg = cfg
        self.params = params or derive_params(cfg)
        self.honest = honest
        self.rng = rng
        self.rate = rate
        self.encoding = encoding
        self.budget = 10 * self.params.r_max + 10
        probe = DelphiInstance(node, cfg, self.params, encoding)
        self.layout = probe.layout
        self.checkpoints = [(lv, k) for lv, (lo, hi) in sorted(self.layout.items()) for k in range(lo, hi + 1)]

    def _noise(self):
        rng = self.rng
        r_max = self.params.r_max
        msgs = []
        for _ in range(rng.randint(1, 6)):
            lv, k = rng.choice(self.checkpoints)
            rnd = rng.randint(1, r_max)
            kind = ECHO1 if rng.random() < 0.6 else ECHO2
            depth = rnd - 1
            value = rng.randint(0, 1 << depth) << (r_max - depth)
            msgs.append((lv, k, kind, rnd, value))
        batch = encode_batch(msgs, self.node, r_max, self.encoding, self.layout)
        peers = [d for d in range(self.cfg.n) if d != self.node]
        chosen = [d for d in peers if rng.random() < 0.5] or [rng.choice(peers)]
        return [(d, batch) for d in chosen]

    def start(self):
        self.budget -= 1
        return self._noise()

    def receive(self, src, payload):
        if src not in self.honest or self.budget <= 0 or self.rng.random() >= self.rate:
            return []
        self.budget -= 1
        return self._noise()


def byzantine_emit(process, n: int, node: int, src: int | None = None, payload=None) -> list[tuple[int, WireBatch]]:
    """Point-to-point emissions of a Byzantine process for one trigger.

    With ``src`` unset this is the start-up emission; otherwise the reaction
    to ``payload`` arriving from ``src``.
    """
    sends = process.start() if src is None else process.receive(src, payload)
    out = []
    for dst, batch in sends:
        if dst is None:
            out.extend((d, batch) for d in range(n) if d != node)
        else:
            out.append((dst, batch))
    return out


# -- reports -----------------------------------------------------------------------

def _frac(x: Fraction | None) -> Any:
    if x is None:
        return None
    return {"exact": f"{x.numerator}/{x.denominator}", "decimal": format_decimal(x)}


@dataclass
class RunReport:
    protocol: str
    n: int
    t: int
    rho0: FixedValue | None
    delta_max: FixedValue | None
    epsilon: FixedValue
    seed: int
    scheduler: str
    behavior: str
    encoding: str
    honest_inputs: dict[int, FixedValue]
    outputs: dict[int, Fraction]
    rounds_used: int
    messages_sent: int
    bytes_sent: int
    agreement_distance: Fraction
    validity_relaxation: Fraction
    per_level_weights: dict[tuple[int, int], Fraction] = field(default_factory=dict)
    equivocations: int = 0
    certificate: Certificate | None = None
    finalize_messages: int = 0
    finalize_bytes: int = 0
    trace: Any = field(default=None, repr=False, compare=False)

    @property
    def honest_range(self) -> Fraction:
        vals = [v.to_fraction() for v in self.honest_inputs.values()]
        return max(vals) - min(vals)

    @property
    def bytes_per_round(self) -> Fraction:
        return Fraction(self.bytes_sent, max(1, self.rounds_used))

    def to_json(self) -> dict:
        return {
            "protocol": self.protocol,
            "n": self.n,
            "t": self.t,
            "rho0": str(self.rho0) if self.rho0 is not None else None,
            "delta_max": str(self.delta_max) if self.delta_max is not None else None,
            "epsilon": str(self.epsilon),
            "seed": self.seed,
            "scheduler": self.scheduler,
            "behavior": self.behavior,
            "encoding": self.encoding,
            "honest_inputs": {str(k): str(v) for k, v in sorted(self.honest_inputs.items())},
            "outputs": {str(k): _frac(v) for k, v in sorted(self.outputs.items())},
            "rounds_used": self.rounds_used,
            "messages_sent": self.messages_sent,
            "bytes_sent": self.bytes_sent,
            "agreement_distance": _frac(self.agreement_distance),
            "validity_relaxation": _frac(self.validity_relaxation),
            "per_level_weights": [
                {"node": node, "level": lv, "weight": _frac(w)}
                for (node, lv), w in sorted(self.per_level_weights.items())
            ],
            "equivocations": self.equivocations,
            "certificate": self.certificate.to_json() if self.certificate else None,
            "finalize_messages": self.finalize_messages,
            "finalize_bytes": self.finalize_bytes,
        }

    def to_json_text(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    def csv_row(self) -> list[str]:
        return [
            str(self.n), str(self.t), str(self.rho0 or ""), str(self.delta_max or ""), str(self.epsilon),
            str(self.seed), self.scheduler, self.behavior, str(self.rounds_used), str(self.messages_sent),
            str(self.bytes_sent), format_decimal(self.agreement_distance),
            format_decimal(self.validity_relaxation), str(self.equivocations),
        ]


def report_schema() -> dict:
    """The JSON schema every :meth:`RunReport.to_json` document satisfies."""
    return json.loads(resources.files(__package__).joinpath("report.schema.json").read_text())


def reports_to_csv(reports: Iterable[RunReport], header: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header:
        writer.writerow(CSV_COLUMNS)
    for rep in reports:
        writer.writerow(rep.csv_row())
    return buf.getvalue()


def agreement_distance(outputs: Iterable[Fraction]) -> Fraction:
    vals = list(outputs)
    return max(vals) - min(vals) if vals else Fraction(0)


def validity_relaxation(outputs: Iterable[Fraction], inputs: Iterable[FixedValue | Fraction]) -> Fraction:
    ins = [v.to_fraction() if isinstance(v, FixedValue) else Fraction(v) for v in inputs]
    lo, hi = min(ins), max(ins)
    worst = Fraction(0)
    for o in outputs:
        worst = max(worst, lo - o, o - hi)
    return worst


# -- delphi runs -------------------------------------------------------------------

@dataclass
class DelphiTrace:
    """Per-node protocol state kept after a run for invariant checks."""

    cfg: ProtocolConfig
    params: Any
    honest: dict[int, DelphiInstance]
    certificates: list[Certificate]
    grid_values: dict[int, FixedValue]
    delivered: int


def build_processes(cfg: ProtocolConfig, adversary: AdversarySpec, inputs: Sequence[FixedValue],
                    encoding: str, params, seed: int) -> list:
    honest = frozenset(range(cfg.n)) - adversary.byzantine
    procs: list = []
    for node in range(cfg.n):
        value = inputs[node]
        if node not in adversary.byzantine:
            procs.append(HonestDelphi(node, cfg, value, encoding, params))
            continue
        behavior = adversary.behavior_of(node)
        if behavior == "silent":
            procs.append(SilentNode())
        elif behavior == "extreme_low":
            procs.append(HonestDelphi(node, cfg, cfg.s_bound, encoding, params))
        elif behavior == "extreme_high":
            procs.append(HonestDelphi(node, cfg, cfg.e_bound, encoding, params))
        elif behavior == "equivocator":
            clipped = min(max(value, cfg.s_bound), cfg.e_bound)
            procs.append(EquivocatorNode(node, cfg, clipped, encoding, params))
        else:
            rng = random.Random(f"noise-{seed}-{node}")
            procs.append(NoiseNode(node, cfg, honest, rng, encoding, params))
    return procs


def run_simulation(
    cfg: ProtocolConfig,
    adversary: AdversarySpec,
    inputs: Sequence[FixedValue | str | int],
    *,
    encoding: str = COMPACT,
    max_events: int = DEFAULT_MAX_EVENTS,
    finalize: bool = True,
    keep_trace: bool = False,
    params: DerivedParams | None = None,
) -> RunReport:
    """Run Delphi (and finalization) once and measure it.

    ``params`` overrides the derived round count; only fault-injection
    experiments should need it.
    """
    if len(inputs) != cfg.n:
        raise ConfigError(f"expected {cfg.n} inputs, got {len(inputs)}")
    adversary.validate(cfg)
    inputs = [parse_input(v) for v in inputs]
    params = params or derive_params(cfg)
    seed = cfg.seed
    scheduler = adversary.make_scheduler(cfg.n)
    net = Network(cfg.n, scheduler, random.Random(f"sched-{seed}"), max_events)
    procs = build_processes(cfg, adversary, inputs, encoding, params, seed)
    net.run(procs)

    honest = {i: procs[i].instance for i in range(cfg.n) if i not in adversary.byzantine}
    stalled = sorted(i for i, inst in honest.items() if inst.output is None)
    if stalled:
        raise NonTermination(f"honest nodes {stalled} never produced an output (seed {seed})")
    outputs = {i: inst.output for i, inst in honest.items()}
    honest_inputs = {i: inputs[i] for i in honest}

    per_level = {(i, lv): w for i, inst in honest.items() for lv, w in enumerate(inst.cross_weights)}
    equivocations = sum(inst.equivocations for inst in honest.values())

    certificate = None
    certs: list[Certificate] = []
    grid: dict[int, FixedValue] = {}
    fin_msgs = fin_bytes = 0
    if finalize:
        certificate, certs, grid, fin_msgs, fin_bytes = run_finalization(
            cfg, adversary, outputs, procs, seed, max_events)

    report = RunReport(
        protocol="delphi",
        n=cfg.n,
        t=cfg.t,
        rho0=cfg.rho0,
        delta_max=cfg.delta_max,
        epsilon=cfg.epsilon,
        seed=seed,
        scheduler=adversary.scheduler,
        behavior=adversary.behavior_name if adversary.byzantine else "none",
        encoding=encoding,
        honest_inputs=honest_inputs,
        outputs=outputs,
        rounds_used=params.r_max,
        messages_sent=net.messages_sent,
        bytes_sent=net.bytes_sent,
        agreement_distance=agreement_distance(outputs.values()),
        validity_relaxation=validity_relaxation(outputs.values(), honest_inputs.values()),
        per_level_weights=per_level,
        equivocations=equivocations,
        certificate=certificate,
        finalize_messages=fin_msgs,
        finalize_bytes=fin_bytes,
    )
    if keep_trace:
        report.trace = DelphiTrace(cfg, params, honest, certs, grid, net.delivered)
    return report


# -- finalization phase -----------------------------------------------------------

class _Attester:
    def __init__(self, node: int, n: int, t: int, seed: int, epsilon: FixedValue,
                 sends: list[tuple[int | None, Attestation]], honest: bool) -> None:
        self.node = node
        self.sends = sends
        self.certifier = Certifier(t, seed, epsilon) if honest else None
        self.formed_at: int | None = None

    def start(self):
        return self.sends

    def receive(self, src, payload):
        if self.certifier is not None and self.certifier.certificate is None:
            self.certifier.add(src, payload)
        return []


def _byzantine_attestations(behavior: str, node: int, cfg: ProtocolConfig, proc, seed: int,
                            rng: random.Random) -> list[tuple[int | None, Attestation]]:
    eps = cfg.epsilon
    if behavior == "silent":
        return []
    if behavior == "extreme_low":
        return [(None, Attestation.make(node, round_to_grid(cfg.s_bound.to_fraction(), eps), seed))]
    if behavior == "extreme_high":
        return [(None, Attestation.make(node, round_to_grid(cfg.e_bound.to_fraction(), eps), seed))]
    if behavior == "equivocator":
        out = proc.instance.output
        base = round_to_grid(out if out is not None else proc.value.to_fraction(), eps)
        return [(d, Attestation.make(node, base + eps if d % 2 else base - eps, seed))
                for d in range(cfg.n) if d != node]
    lo = round_to_grid(cfg.s_bound.to_fraction(), eps)
    span = int((cfg.e_bound - cfg.s_bound).to_fraction() / eps.to_fraction())
    return [(d, Attestation.make(node, lo + eps * rng.randint(0, span), seed))
            for d in range(cfg.n) if d != node]


def run_finalization(cfg: ProtocolConfig, adversary: AdversarySpec, outputs: dict[int, Fraction],
                     procs: Sequence, seed: int, max_events: int = DEFAULT_MAX_EVENTS):
    """Broadcast grid attestations and collect certificates.

    Each honest node forms the first certificate it sees; the one formed
    earliest (ties by node id) is the run's certificate, as if submitted to
    an ordering ledger.
    """
    rng = random.Random(f"attest-{seed}")
    attesters: list[_Attester] = []
    grid: dict[int, FixedValue] = {}
    for node in range(cfg.n):
        if node in outputs:
            g = round_to_grid(outputs[node], cfg.epsilon)
            grid[node] = g
            att = Attestation.make(node, g, seed)
            a = _Attester(node, cfg.n, cfg.t, seed, cfg.epsilon, [(None, att)], True)
            a.certifier.add(node, att)
        else:
            sends = _byzantine_attestations(adversary.behavior_of(node), node, cfg, procs[node], seed, rng)
            a = _Attester(node, cfg.n, cfg.t, seed, cfg.epsilon, sends, False)
        attesters.append(a)

    net = Network(cfg.n, adversary.make_scheduler(cfg.n), random.Random(f"fin-{seed}"), max_events)

    class _Timed:
        def __init__(self, inner: _Attester):
            self.inner = inner

        def start(self):
            return self.inner.start()

        def receive(self, src, payload):
            cert_before = self.inner.certifier.certificate if self.inner.certifier else None
            self.inner.receive(src, payload)
            if self.inner.certifier and cert_before is None and self.inner.certifier.certificate is not None:
                self.inner.formed_at = net.now
            return []

    net.run([_Timed(a) for a in attesters])
    formed = [(a.formed_at if a.formed_at is not None else 0, a.node, a.certifier.certificate)
              for a in attesters if a.certifier is not None and a.certifier.certificate is not None]
    # a node whose own attestation already completes t+1 (t = 0) forms at time 0
    formed.sort(key=lambda x: (x[0], x[1]))
    certs = [c for _, _, c in formed]
    if certs:
        check_certificates(certs, cfg.epsilon)
    winner = certs[0] if certs else None
    return winner, certs, grid, net.messages_sent, net.bytes_sent
