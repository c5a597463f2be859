from fractions import Fraction

import pytest

from delphi_aa.core import FixedValue, ProtocolConfig
from delphi_aa.errors import ConflictingCertificates
from delphi_aa.finalize import (
    ATTESTATION_BYTES,
    Attestation,
    Certificate,
    Certifier,
    certify,
    check_certificates,
    grid_span_ok,
    round_to_grid,
)
from delphi_aa.simnet import AdversarySpec, run_finalization, run_simulation

F = Fraction
TWO = FixedValue(2)


def test_round_to_grid():
    assert round_to_grid(F(113, 10), TWO) == 12
    assert round_to_grid(F(11), TWO) == 12  # tie goes up
    assert round_to_grid(F(-1), TWO) == 0
    assert round_to_grid(F(-3), TWO) == -2
    assert round_to_grid(F(14), TWO) == 14
    assert round_to_grid(F(5, 16), FixedValue(1, 3)) == FixedValue(3, 3)


def test_attestation_size():
    assert ATTESTATION_BYTES == 43
    assert len(Attestation.make(1, TWO, 0).tag) == 32


def test_certify_all_agree():
    atts = [(i, Attestation.make(i, FixedValue(12), 5)) for i in range(4)]
    cert = certify(atts, 1, 5)
    assert cert.grid_value == 12 and cert.attestors == frozenset({0, 1})


def test_first_value_to_reach_quorum_wins():
    stream = [
        (0, Attestation.make(0, FixedValue(10), 0)),
        (2, Attestation.make(2, FixedValue(12), 0)),
        (3, Attestation.make(3, FixedValue(12), 0)),
        (1, Attestation.make(1, FixedValue(10), 0)),
    ]
    assert certify(stream, 1, 0).grid_value == 12


def test_lone_far_value_never_certifies():
    c = Certifier(1, 0)
    assert c.add(3, Attestation.make(3, FixedValue(1000), 0)) is None
    assert c.add(3, Attestation.make(3, FixedValue(1000), 0)) is None  # repeats do not add support
    assert c.certificate is None


def test_forged_or_relayed_attestations_rejected():
    c = Certifier(1, 0)
    c.add(3, Attestation.make(1, FixedValue(4), 0))  # relayed under another id
    c.add(1, Attestation(1, FixedValue(4), b"\x00" * 32))
    assert c.rejected == 2


def test_off_grid_attestation_rejected():
    c = Certifier(1, 0, TWO)
    c.add(0, Attestation.make(0, FixedValue(3), 0))
    assert c.rejected == 1


def test_no_certificate():
    with pytest.raises(ValueError):
        certify([(0, Attestation.make(0, TWO, 0))], 1, 0)


def test_conflicting_certificates():
    a = Certificate(FixedValue(10), frozenset({0, 1}))
    b = Certificate(FixedValue(12), frozenset({2, 3}))
    far = Certificate(FixedValue(16), frozenset({2, 3}))
    check_certificates([a, b], TWO)
    with pytest.raises(ConflictingCertificates):
        check_certificates([a, far], TWO)
    with pytest.raises(ConflictingCertificates):
        check_certificates([a, b, Certificate(FixedValue(14), frozenset({1, 2}))], TWO)


def test_grid_span():
    assert grid_span_ok([FixedValue(4)] * 3, TWO)
    assert grid_span_ok([FixedValue(4), FixedValue(6)], TWO)
    assert not grid_span_ok([FixedValue(4), FixedValue(8)], TWO)


def test_straddling_outputs_certify_one_neighbour():
    cfg = ProtocolConfig.create(4, "0", "32", "2", "8", "2")
    outputs = {0: F(51, 5), 1: F(52, 5), 2: F(11), 3: F(57, 5)}
    for seed in range(20):
        winner, certs, grid, msgs, nbytes = run_finalization(
            cfg, AdversarySpec(), outputs, [None] * 4, seed)
        assert set(grid.values()) == {FixedValue(10), FixedValue(12)}
        assert winner.grid_value in (10, 12) and len(winner.attestors) >= 2
        assert msgs == 12 and nbytes == 12 * ATTESTATION_BYTES


@pytest.mark.parametrize("behavior", ["silent", "equivocator", "extreme_low", "extreme_high", "random_noise"])
def test_certificate_close_to_honest_outputs(behavior):
    cfg = ProtocolConfig.create(7, "0", "32", "2", "8", "1", seed=3)
    rep = run_simulation(cfg, AdversarySpec.standard(7, 2, behavior), ["3", "4", "5", "5.5", "6", "0", "32"],
                         keep_trace=True)
    cert = rep.certificate
    assert cert is not None and len(cert.attestors) >= 3
    for o in rep.outputs.values():
        assert abs(cert.grid_value.to_fraction() - o) <= F(3, 2)
