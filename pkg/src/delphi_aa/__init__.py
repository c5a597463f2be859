"""Asynchronous approximate agreement for oracle networks without signatures."""

from .core import CheckpointId, DerivedParams, FixedValue, ProtocolConfig, derive_params
from .delphi import DelphiInstance, delphi_start, delphi_step
from .errors import DelphiError
from .simnet import AdversarySpec, RunReport, run_simulation

__all__ = [
    "AdversarySpec",
    "CheckpointId",
    "DelphiError",
    "DelphiInstance",
    "DerivedParams",
    "FixedValue",
    "ProtocolConfig",
    "RunReport",
    "delphi_start",
    "delphi_step",
    "derive_params",
    "run_simulation",
]
