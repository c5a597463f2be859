"""Exact invariant checks over finished simulation runs.

Each check returns a list of :class:`Violation`; an empty list means the
property held. Everything compares exact rationals, so tolerances are zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations

from .finalize import grid_span_ok
from .simnet import DelphiTrace, RunReport


@dataclass(frozen=True)
class Violation:
    prop: str
    seed: int
    detail: str

    def __str__(self) -> str:
        return f"{self.prop} (seed {self.seed}): {self.detail}"


def validity_bound(report: RunReport) -> Fraction:
    """Allowed overshoot: max(rho0, honest input range)."""
    return max(report.rho0.to_fraction(), report.honest_range)


def check_termination(report: RunReport) -> list[Violation]:
    missing = [i for i, o in report.outputs.items() if o is None]
    if missing or not report.outputs:
        return [Violation("termination", report.seed, f"no output at {missing}")]
    return []


def check_agreement(report: RunReport) -> list[Violation]:
    eps = report.epsilon.to_fraction()
    if report.agreement_distance >= eps:
        return [Violation("agreement", report.seed, f"distance {report.agreement_distance} >= {eps}")]
    return []


def check_validity(report: RunReport, bound: Fraction | None = None) -> list[Violation]:
    bound = validity_bound(report) if bound is None else bound
    if report.validity_relaxation > bound:
        return [Violation("validity", report.seed, f"relaxation {report.validity_relaxation} > {bound}")]
    return []


def check_weak_bv(trace: DelphiTrace, seed: int) -> list[Violation]:
    """Pairwise intersecting round outputs that only hold honest round values."""
    out = []
    nodes = list(trace.honest.values())
    for cp in nodes[0].states:
        histories = [inst.states[cp] for inst in nodes]
        rounds = max(len(st.bv_history) for st in histories)
        for r in range(rounds):
            honest_vals = {st.value_history[r] for st in histories if len(st.value_history) > r}
            sets = [set(st.bv_history[r]) for st in histories if len(st.bv_history) > r]
            for s in sets:
                if not s <= honest_vals:
                    out.append(Violation("weak-bv justification", seed,
                                         f"{cp} round {r + 1}: {sorted(s - honest_vals)} not honest"))
            for a, b in combinations(sets, 2):
                if not a & b:
                    out.append(Violation("weak-bv uniformity", seed, f"{cp} round {r + 1}: {a} and {b}"))
    return out


def check_halving(trace: DelphiTrace, seed: int) -> list[Violation]:
    """After round r the honest values of every instance span at most 2**-r."""
    out = []
    nodes = list(trace.honest.values())
    r_max = trace.params.r_max
    for cp in nodes[0].states:
        for r in range(1, r_max + 1):
            vals = [inst.states[cp].value_history[r] for inst in nodes]
            if max(vals) - min(vals) > (1 << (r_max - r)):
                span = Fraction(max(vals) - min(vals), 1 << r_max)
                out.append(Violation("halving", seed, f"{cp} after round {r}: range {span}"))
    return out


def check_weight_sum(trace: DelphiTrace, seed: int) -> list[Violation]:
    out = []
    for node, inst in trace.honest.items():
        total = sum(inst.cross_weights, Fraction(0))
        if total < Fraction(1, 2):
            out.append(Violation("weight-sum", seed, f"node {node}: sum {total} < 1/2"))
    return out


def check_weight_closeness(trace: DelphiTrace, seed: int) -> list[Violation]:
    out = []
    bound = 5 * trace.params.eps_prime
    items = list(trace.honest.items())
    for (i, a), (j, b) in combinations(items, 2):
        for lv, (wa, wb) in enumerate(zip(a.cross_weights, b.cross_weights)):
            if abs(wa - wb) > bound:
                out.append(Violation("weight-closeness", seed, f"level {lv}, nodes {i},{j}: |{wa} - {wb}| > {bound}"))
    return out


def saturated_level(delta: Fraction, rho0: Fraction) -> int:
    """Lowest level whose separator is at least the honest range."""
    if delta <= rho0:
        return 0
    return _ceil_log2(delta / rho0)


def _ceil_log2(x: Fraction) -> int:
    r = 0
    while (1 << r) < x:
        r += 1
    return r


def check_dead_levels(report: RunReport, trace: DelphiTrace) -> list[Violation]:
    """Levels above saturation carry zero cross-level weight (fault-free runs)."""
    phi = saturated_level(report.honest_range, report.rho0.to_fraction())
    out = []
    for node, inst in trace.honest.items():
        for lv, w in enumerate(inst.cross_weights):
            if lv > phi and w != 0:
                out.append(Violation("dead-levels", report.seed, f"node {node} level {lv} > {phi}: weight {w}"))
    return out


def check_finalization(report: RunReport, trace: DelphiTrace) -> list[Violation]:
    out = []
    if not grid_span_ok(trace.grid_values.values(), report.epsilon):
        vals = sorted(set(trace.grid_values.values()))
        out.append(Violation("finalization span", report.seed, f"grid values {', '.join(map(str, vals))}"))
    if report.certificate is None:
        out.append(Violation("finalization certificate", report.seed, "no certificate formed"))
    elif len(report.certificate.attestors) < report.t + 1:
        out.append(Violation("finalization certificate", report.seed, "too few attestors"))
    return out


def check_run(report: RunReport, fault_free: bool | None = None) -> list[Violation]:
    """Every invariant applicable to one run carrying a trace."""
    trace = report.trace
    if trace is None:
        raise ValueError("run_simulation(..., keep_trace=True) is required")
    if fault_free is None:
        fault_free = report.behavior == "none"
    seed = report.seed
    out = check_termination(report) + check_agreement(report) + check_validity(report)
    out += check_weak_bv(trace, seed)
    out += check_halving(trace, seed)
    out += check_weight_sum(trace, seed)
    out += check_weight_closeness(trace, seed)
    if fault_free:
        out += check_dead_levels(report, trace)
    out += check_finalization(report, trace)
    return out
