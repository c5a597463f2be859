import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from delphi_aa.baseline import (
    ECHO,
    INIT,
    READY,
    VALUE,
    RBCState,
    WitnessMsg,
    bracha_handle,
    halving_violations,
    reduce_values,
    rounds_for_range,
    run_witness,
)
from delphi_aa.core import ProtocolConfig
from delphi_aa.errors import TooFewValues
from delphi_aa.simnet import AdversarySpec

F = Fraction


class TestReduce:
    def test_trims_and_takes_midpoint(self):
        assert reduce_values([9, 1, 5, 3, 7], 1) == 5
        assert reduce_values([0, 0, 0, 100], 1) == 0
        assert reduce_values([1, 2, 4, 8, 100, -50, 3], 2) == 3

    def test_no_trimming(self):
        assert reduce_values([F(1, 2), 3], 0) == F(7, 4)

    def test_too_few(self):
        with pytest.raises(TooFewValues):
            reduce_values([1, 2], 1)


def test_rounds_for_range():
    assert rounds_for_range(F(8), F(1)) == 3
    assert rounds_for_range(F(0), F(1)) == 0
    assert rounds_for_range(F(1, 2), F(1)) == 0
    assert rounds_for_range(F(100), F(2)) == 6


def run_rbc(n, t, broadcaster_values, byzantine, rng):
    """Bracha broadcast from node 0 under a random schedule.

    ``broadcaster_values[d]`` is the INIT value sent to ``d``. Byzantine nodes
    other than the broadcaster stay silent.
    """
    states = {i: RBCState(0, (1, VALUE), n, t) for i in range(n) if i not in byzantine}
    pool = [(0, d, WitnessMsg(INIT, 1, VALUE, 0, v)) for d, v in broadcaster_values.items() if d in states]
    if 0 in byzantine:
        # a faulty broadcaster also echoes and readies both values to everyone
        for v in set(broadcaster_values.values()):
            for d in states:
                pool.append((0, d, WitnessMsg(ECHO, 1, VALUE, 0, v)))
                pool.append((0, d, WitnessMsg(READY, 1, VALUE, 0, v)))
    while pool:
        src, dst, msg = pool.pop(rng.randrange(len(pool)))
        _, out = bracha_handle(states[dst], msg, src)
        for m in out:
            for d in states:
                pool.append((dst, d, m))
    return {i: s.delivered for i, s in states.items()}


@given(st.integers(0, 2**32), st.sampled_from([(4, 1), (7, 2), (5, 1)]))
def test_bracha_honest_broadcaster(seed, nt):
    n, t = nt
    byz = set(range(n - t, n))
    got = run_rbc(n, t, {d: F(3) for d in range(n)}, byz, random.Random(seed))
    assert set(got.values()) == {F(3)}


@given(st.integers(0, 2**32), st.sampled_from([(4, 1), (7, 2), (10, 3)]))
@settings(max_examples=100)
def test_bracha_equivocating_broadcaster(seed, nt):
    n, t = nt
    byz = {0} | set(range(n - t + 1, n))
    rng = random.Random(seed)
    split = {d: F(1) if rng.random() < 0.5 else F(2) for d in range(1, n)}
    got = run_rbc(n, t, split, byz, rng)
    delivered = {v for v in got.values() if v is not None}
    assert len(delivered) <= 1
    # totality: one honest delivery means all honest nodes deliver
    if delivered:
        assert None not in got.values()


def cfg(n=4, eps="1", seed=0):
    return ProtocolConfig.create(n, "0", "64", "2", "64", eps, seed=seed)


def test_equal_inputs_need_no_rounds():
    rep = run_witness(cfg(), AdversarySpec(), ["5"] * 4, keep_trace=True)
    assert rep.rounds_used == 0
    assert set(rep.outputs.values()) == {5}
    assert rep.protocol == "witness" and rep.encoding == "rbc"


@pytest.mark.parametrize("behavior", ["silent", "equivocator", "extreme_low", "extreme_high", "random_noise"])
@pytest.mark.parametrize("n", [4, 7])
def test_witness_runs_meet_their_guarantees(behavior, n):
    t = (n - 1) // 3
    for seed in range(4):
        rng = random.Random(seed)
        inputs = [str(rng.randint(0, 256) / 4) for _ in range(n)]
        rep = run_witness(cfg(n, "0.5", seed), AdversarySpec.standard(n, t, behavior), inputs, keep_trace=True)
        assert rep.agreement_distance <= F(1, 2)
        assert rep.validity_relaxation == 0  # outputs stay inside the honest range
        assert halving_violations(rep.trace) == []


def test_fixed_rounds_skip_estimation():
    a = run_witness(cfg(), AdversarySpec(), ["0", "8", "16", "24"], rounds=5)
    assert a.rounds_used == 5 and a.agreement_distance <= F(24, 32)
