import dataclasses
from fractions import Fraction

from delphi_aa.checks import (
    check_agreement,
    check_dead_levels,
    check_halving,
    check_run,
    check_termination,
    check_validity,
    check_weak_bv,
    check_weight_sum,
    saturated_level,
)
from delphi_aa.core import ProtocolConfig
from delphi_aa.simnet import AdversarySpec, run_simulation

F = Fraction


def honest_report(**kw):
    cfg = ProtocolConfig.create(4, "0", "32", "1", "16", "1", seed=2)
    return run_simulation(cfg, AdversarySpec(), ["9", "9.5", "10", "11"], keep_trace=True, **kw)


def test_clean_run_has_no_violations():
    assert check_run(honest_report()) == []


def test_saturated_level():
    assert saturated_level(F(0), F(1)) == 0
    assert saturated_level(F(1), F(1)) == 0
    assert saturated_level(F(3, 2), F(1)) == 1
    assert saturated_level(F(4), F(1)) == 2
    assert saturated_level(F(5), F(1)) == 3


def test_detectors_fire_on_tampered_reports():
    rep = honest_report()
    assert check_agreement(dataclasses.replace(rep, agreement_distance=F(1)))
    assert check_validity(dataclasses.replace(rep, validity_relaxation=F(5)))
    assert check_termination(dataclasses.replace(rep, outputs={0: None, 1: F(1)}))


def test_detectors_fire_on_tampered_traces():
    rep = honest_report()
    trace = rep.trace
    inst = trace.honest[0]
    cp = next(iter(inst.states))
    st = inst.states[cp]
    one = 1 << trace.params.r_max
    st.value_history[-1] = one if st.value_history[-1] == 0 else 0
    assert check_halving(trace, rep.seed)
    st.bv_history[0] = (object(),)
    assert check_weak_bv(trace, rep.seed)
    inst.cross_weights = [F(0)] * len(inst.cross_weights)
    assert check_weight_sum(trace, rep.seed)


def test_dead_level_detector():
    rep = honest_report()
    inst = rep.trace.honest[1]
    inst.cross_weights = list(inst.cross_weights[:-1]) + [F(1, 3)]
    assert check_dead_levels(rep, rep.trace)
