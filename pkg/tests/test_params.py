import math

import pytest

from delphi_aa.core import ProtocolConfig, derive_params
from delphi_aa.errors import InvalidModel
from delphi_aa.params import RECORD_BITS, NoiseModel, derive_delta, estimate_complexity
from delphi_aa.simnet import AdversarySpec, run_simulation

GUMBEL = NoiseModel("gumbel_range")
FRECHET = NoiseModel("frechet_range", scale=29.3, alpha=4.41)


def test_gumbel_at_thirty_bits():
    # -ln(-ln(1 - q)) = -ln(q + q^2/2 + ...) = -ln q - q/2 + O(q^2)
    q = 2.0**-30
    oracle = -math.log(q) - q / 2
    got = derive_delta(GUMBEL, 30)
    assert got == pytest.approx(oracle, abs=1e-9)
    assert abs(got - 20.79) <= 0.01


def test_gumbel_location_and_scale():
    m = NoiseModel("gumbel_range", location=3.0, scale=2.0)
    assert derive_delta(m, 30) == pytest.approx(3.0 + 2.0 * derive_delta(GUMBEL, 30))


def test_frechet_tail_quantile():
    # (-ln(1 - q))^(-1/alpha) with -ln(1 - q) = q to first order
    got = derive_delta(FRECHET, tail_prob=1e-10)
    assert got == pytest.approx(29.3 * 1e-10 ** (-1 / 4.41), rel=1e-8)
    # far above the reference figure of 2000 used for this fit
    assert got > 2000


@pytest.mark.parametrize("model", [GUMBEL, FRECHET])
def test_monotone_in_lambda(model):
    vals = [derive_delta(model, lam) for lam in range(1, 64)]
    assert all(a < b for a, b in zip(vals, vals[1:]))


def test_monotone_in_scale():
    small = NoiseModel("frechet_range", scale=1.0, alpha=2.0)
    big = NoiseModel("frechet_range", scale=2.0, alpha=2.0)
    assert derive_delta(small, 20) < derive_delta(big, 20)


def test_growth_rates():
    # Frechet grows by 2**(lam/alpha): +alpha bits doubles the bound
    alpha = 4.0
    m = NoiseModel("frechet_range", alpha=alpha)
    for lam in (20, 30, 40):
        assert derive_delta(m, lam + int(alpha)) / derive_delta(m, lam) == pytest.approx(2.0, rel=1e-5)
    # Gumbel grows linearly: one more bit adds ln 2
    for lam in (20, 30, 40):
        assert derive_delta(GUMBEL, lam + 1) - derive_delta(GUMBEL, lam) == pytest.approx(math.log(2), abs=1e-6)


def test_invalid_models():
    with pytest.raises(InvalidModel):
        NoiseModel("normal")
    with pytest.raises(InvalidModel):
        NoiseModel("gumbel_range", scale=0)
    with pytest.raises(InvalidModel):
        NoiseModel("frechet_range")
    with pytest.raises(InvalidModel):
        derive_delta(GUMBEL, 0)
    with pytest.raises(InvalidModel):
        derive_delta(GUMBEL, 30, tail_prob=0.1)
    with pytest.raises(InvalidModel):
        derive_delta(GUMBEL, tail_prob=1.5)


def cfg(n, delta="64", seed=0):
    return ProtocolConfig.create(n, "0", "64", "1", delta, "1", seed=seed)


def test_estimate_formula():
    c = cfg(4)
    p = derive_params(c)
    est = estimate_complexity(c, p, delta_runtime="8")
    assert est.active_checkpoints == 8
    assert est.bits_per_round == 16 * 8 * RECORD_BITS
    assert est.rounds == p.r_max and est.total_bits == est.bits_per_round * p.r_max


def test_estimate_small_range_is_quadratic_in_n():
    a = estimate_complexity(cfg(4), delta_runtime="1")
    b = estimate_complexity(cfg(8), delta_runtime="1")
    assert a.active_checkpoints == b.active_checkpoints == 1
    assert b.bits_per_round / a.bits_per_round == 4


def test_estimate_clamps_at_n_levels():
    c = cfg(4)
    p = derive_params(c)
    est = estimate_complexity(c, p, delta_runtime="64")
    assert est.active_checkpoints == c.n * p.l_max == 24


def test_estimate_rejects_range_above_bound():
    with pytest.raises(InvalidModel):
        estimate_complexity(cfg(4, delta="8"), delta_runtime="9")


def test_measured_bytes_follow_the_estimate_when_n_doubles():
    ratios = []
    for seed in range(3):
        per_round = []
        for n in (4, 8):
            c = ProtocolConfig.create(n, "0", "64", "1", "8", "1", seed=seed)
            inputs = ["20"] * (n // 2) + ["21"] * (n - n // 2)
            rep = run_simulation(c, AdversarySpec(), inputs, finalize=False)
            per_round.append(rep.bytes_per_round)
        ratios.append(float(per_round[1] / per_round[0]))
    predicted = (estimate_complexity(ProtocolConfig.create(8, "0", "64", "1", "8", "1"), delta_runtime="1").bits_per_round
                 / estimate_complexity(ProtocolConfig.create(4, "0", "64", "1", "8", "1"), delta_runtime="1").bits_per_round)
    assert predicted == 4
    for r in ratios:
        assert 3 <= r <= 5, ratios
