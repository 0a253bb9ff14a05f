"""Simulator and analysis toolkit for an entanglement-based authentication protocol
with a trusted photon server and interleaved tamper-detection photons."""

from .adversary import AdversaryStrategy, Attack, EveKnowledge
from .protocol import ProtocolParams, TamperSpec, TrialOutcome, run_protocol
from .qchannel import Basis, PhotonSourceModel
from .rng import SplitMix64

__all__ = [
    "AdversaryStrategy",
    "Attack",
    "Basis",
    "EveKnowledge",
    "PhotonSourceModel",
    "ProtocolParams",
    "SplitMix64",
    "TamperSpec",
    "TrialOutcome",
    "run_protocol",
]

__version__ = "0.1.0"
