"""Small shared builders for the test suite."""

from fractions import Fraction

from delphi_aa.core import FixedValue, ProtocolConfig


def cfg4(**kw):
    args = dict(n=4, s_bound="0", e_bound="32", rho0="2", delta_max="16", epsilon="2", seed=0)
    args.update(kw)
    return ProtocolConfig.create(**args)


def fv(x) -> FixedValue:
    return FixedValue.of(Fraction(x) if not isinstance(x, str) else x)
