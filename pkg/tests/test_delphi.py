import math
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from delphi_aa.core import CheckpointId, FixedValue, ProtocolConfig, derive_params, level_k_range
from delphi_aa.delphi import (
    DelphiInstance,
    LevelAggregate,
    aggregate_level,
    cross_level_aggregate,
    cross_level_weights,
    delphi_start,
    delphi_step,
)
from delphi_aa.encoding import COMPACT, PLAIN, WireBatch, encode_batch
from delphi_aa.errors import MalformedBatch, OutOfRange, ZeroDenominator
from delphi_aa.simnet import AdversarySpec, run_simulation

F = Fraction


def test_aggregate_weighted_mean():
    agg = aggregate_level({5: F(1, 4), 6: F(1)}, 0, FixedValue(0), F(1, 100), F(2))
    assert agg.rep_value == F(58, 5)
    assert agg.rep_weight == 1 and not agg.is_fallback


def test_aggregate_ignores_zero_weights():
    agg = aggregate_level({1: F(0), 2: F(1, 2), 3: F(0)}, 1, FixedValue(0), F(1, 100), F(4))
    assert agg.rep_value == 8 and agg.rep_weight == F(1, 2)


def test_aggregate_fallback_to_own_input():
    agg = aggregate_level({1: F(0), 2: F(0)}, 2, FixedValue.of("3.5"), F(1, 64), F(8))
    assert agg == LevelAggregate(2, F(7, 2), F(1, 64), True)


def test_cross_level_weights():
    levels = [LevelAggregate(i, F(0), w) for i, w in enumerate([F(1, 2), F(1, 4), F(1)])]
    assert cross_level_weights(levels) == [F(1, 4), F(1, 16), F(3, 4)]


def test_cross_level_aggregate_drops_the_unchanged_level():
    levels = [
        LevelAggregate(0, F(10), F(0)),
        LevelAggregate(1, F(12), F(1, 2)),
        LevelAggregate(2, F(16), F(1)),
    ]
    # weights 0, 1/4, 1/2
    assert cross_level_aggregate(levels) == (F(12) / 4 + F(16) / 2) / F(3, 4)


def test_cross_level_aggregate_zero_denominator():
    levels = [LevelAggregate(0, F(3), F(0)), LevelAggregate(1, F(5), F(0))]
    with pytest.raises(ZeroDenominator):
        cross_level_aggregate(levels)


def test_cross_level_aggregate_needs_contiguous_levels():
    with pytest.raises(ValueError):
        cross_level_aggregate([LevelAggregate(1, F(3), F(1))])


def cfg(n=4, s="0", e="32", rho0="2", delta="8", eps="1", seed=0):
    return ProtocolConfig.create(n, s, e, rho0, delta, eps, seed=seed)


def initial_ones(inst):
    return {cp for cp, st_ in inst.states.items() if st_.value_history[0] == 1 << inst.params.r_max}


class TestStart:
    def test_two_ones_per_level(self):
        inst = DelphiInstance(0, cfg())
        inst.start("10.5")
        ones = initial_ones(inst)
        # rho = 2, 4, 8 -> floor(10.5/rho) and its right neighbour
        assert ones == {CheckpointId(0, 5), CheckpointId(0, 6), CheckpointId(1, 2), CheckpointId(1, 3),
                        CheckpointId(2, 1), CheckpointId(2, 2)}

    def test_all_checkpoints_in_domain_started(self):
        c = cfg()
        inst = DelphiInstance(0, c)
        inst.start(3)
        p = derive_params(c)
        expected = sum(hi - lo + 1 for lo, hi in (level_k_range(c, lv) for lv in range(p.l_max + 1)))
        assert len(inst.states) == expected == 17 + 9 + 5

    def test_upper_boundary_is_clipped(self):
        inst = DelphiInstance(0, cfg())
        inst.start(32)
        assert initial_ones(inst) == {CheckpointId(0, 16), CheckpointId(1, 8), CheckpointId(2, 4)}

    def test_lower_boundary(self):
        inst = DelphiInstance(0, cfg())
        inst.start(0)
        assert CheckpointId(0, 0) in initial_ones(inst) and CheckpointId(0, 1) in initial_ones(inst)

    def test_out_of_domain(self):
        with pytest.raises(OutOfRange):
            DelphiInstance(0, cfg()).start(33)

    def test_nearby_inputs_share_checkpoints(self):
        # floor(v / 2) is 5 for all four inputs, so every node feeds 1 to k = 5 and 6
        for v in ("10", "10.5", "11", "11.5"):
            inst = DelphiInstance(0, cfg())
            inst.start(v)
            level0 = {cp.k for cp in initial_ones(inst) if cp.level == 0}
            assert level0 == {5, 6}

    @given(st.fractions(min_value=0, max_value=32))
    def test_each_level_gets_adjacent_ones(self, x):
        v = FixedValue.from_decimal(str(float(x)), quantize_exp=10)
        if v > 32:
            return
        c = cfg()
        inst = DelphiInstance(0, c)
        inst.start(v)
        ones = initial_ones(inst)
        for level in range(3):
            ks = sorted(cp.k for cp in ones if cp.level == level)
            rho = 2 << level
            assert 1 <= len(ks) <= 2 and ks[-1] - ks[0] == len(ks) - 1
            assert ks[0] * rho <= v.to_fraction() <= (ks[0] + 1) * rho


class TestStep:
    def test_empty_batch_changes_nothing(self):
        inst, _ = delphi_start("5", cfg())
        before = {cp: list(s.value_history) for cp, s in inst.states.items()}
        same, out = delphi_step(inst, WireBatch(1, 0, [], inst.params.r_max))
        assert same is inst and out is None
        assert {cp: list(s.value_history) for cp, s in inst.states.items()} == before
        assert delphi_step(inst, None) == (inst, None)

    def test_scale_mismatch_rejected(self):
        inst, _ = delphi_start("5", cfg())
        bad = encode_batch([(0, 1, 1, 1, 0)], 1, inst.params.r_max + 1)
        with pytest.raises(MalformedBatch):
            inst.step(bad)

    def test_unknown_checkpoints_are_counted_not_fatal(self):
        inst, _ = delphi_start("5", cfg())
        inst.step(encode_batch([(0, 99, 1, 1, 0)], 1, inst.params.r_max, PLAIN))
        assert inst.unknown_checkpoints == 1

    def test_own_batches_ignored(self):
        inst, batch = delphi_start("5", cfg())
        assert inst.step_messages(batch) == []

    def test_step_before_start(self):
        inst = DelphiInstance(0, cfg())
        with pytest.raises(RuntimeError):
            inst.step(WireBatch(1, 0, [], inst.params.r_max))


def drive(c, inputs, encoding=COMPACT, order=None):
    """Fault-free, FIFO full-mesh delivery of batches."""
    insts = []
    queue = []
    for i, v in enumerate(inputs):
        inst, batch = delphi_start(v, c, node_id=i, encoding=encoding)
        insts.append(inst)
        queue.extend((j, batch) for j in range(len(inputs)) if j != i)
    while queue:
        dst, batch = queue.pop(0 if order is None else order(queue))
        _, reply = delphi_step(insts[dst], batch)
        if reply is not None:
            queue.extend((j, reply) for j in range(len(inputs)) if j != dst)
    return insts


@pytest.mark.parametrize("encoding", [COMPACT, PLAIN])
def test_end_to_end_within_bounds(encoding):
    c = cfg()
    inputs = ["10", "10.5", "11", "11.5"]
    insts = drive(c, inputs, encoding)
    outs = [i.output for i in insts]
    assert all(o is not None for o in outs)
    assert max(outs) - min(outs) < 1
    assert min(outs) >= 10 - 2 and max(outs) <= F(23, 2) + 2


def test_unanimous_input_is_reproduced_within_rho0():
    c = cfg()
    insts = drive(c, ["13"] * 4)
    for inst in insts:
        assert abs(inst.output - 13) <= 2


def test_plain_and_compact_match():
    c = cfg(eps="0.5")
    a = drive(c, ["3", "7.25", "9", "4"], COMPACT)
    b = drive(c, ["3", "7.25", "9", "4"], PLAIN)
    assert [x.output for x in a] == [x.output for x in b]


@pytest.mark.parametrize("seed", range(5))
def test_simulated_spread_inputs(seed):
    c = cfg(n=7, eps="0.5", seed=seed, delta="16")
    rep = run_simulation(c, AdversarySpec.standard(7, 2, "silent"), ["4", "6", "9.5", "12", "12", "1", "1"])
    eps = c.epsilon.to_fraction()
    assert rep.agreement_distance < eps
    assert rep.validity_relaxation <= max(F(2), rep.honest_range)


def test_symmetric_weights():
    agg = aggregate_level({5: F(1), 6: F(1)}, 0, FixedValue(0), F(1, 100), F(2))
    assert agg.rep_value == 11 and agg.rep_weight == 1


@pytest.mark.parametrize("encoding", [COMPACT, PLAIN])
def test_four_node_honest_example(encoding):
    c = ProtocolConfig.create(4, "0", "32", "2", "16", "2")
    insts = drive(c, ["10", "10.5", "11", "11.5"], encoding)
    outs = [i.output for i in insts]
    assert max(outs) - min(outs) < 2
    slack = max(F(2), F(3, 2))
    assert all(10 - slack <= o <= F(23, 2) + slack for o in outs)
