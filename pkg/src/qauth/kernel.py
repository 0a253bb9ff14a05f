"""Batch trial kernel with a compiled core and a pure-Python fallback.

The Cython extension ``qauth._kernel`` is used when it has been built; setting
``QAUTH_PURE_PYTHON=1`` forces the fallback. Both produce identical rows.
"""

from __future__ import annotations

import os

import numpy as np

from . import _pykernel
from .adversary import AdversaryStrategy
from .protocol import ProtocolParams
from .qchannel import PhotonSourceModel

FIELDS = (
    "alice_accepted",
    "eve_forged",
    "detected",
    "restarts",
    "restart_limit_exceeded",
    "eve_key_bits_known",
    "forge_guessed_bits",
    "alice_tamper_errors",
    "alice_tamper_checked",
    "bob_tamper_errors",
    "bob_tamper_checked",
    "key_agreement",
    "coverage_success",
    "disturbed_tamper_slots",
)
assert len(FIELDS) == _pykernel.NFIELDS

_BACKENDS = {"python": _pykernel.run_trials}
try:
    from . import _kernel as _ckernel
except ImportError:  # extension not built
    _ckernel = None
else:
    _BACKENDS["cython"] = _ckernel.run_trials

if _ckernel is not None and os.environ.get("QAUTH_PURE_PYTHON", "") in ("", "0"):
    BACKEND = "cython"
else:
    BACKEND = "python"


def available_backends() -> tuple[str, ...]:
    return tuple(_BACKENDS)


def run_trials(params: ProtocolParams, strategy: AdversaryStrategy, source: PhotonSourceModel,
               master_seed: int, start: int, count: int, backend: str | None = None) -> np.ndarray:
    """Per-trial integer records (``count`` x ``len(FIELDS)``) for trials ``start..start+count-1``."""
    strategy.validate(params.k, params.d)
    fn = _BACKENDS[backend or BACKEND]
    arm_mask = (1 if "alice" in strategy.arms else 0) | (2 if "bob" in strategy.arms else 0)
    return fn(
        params.k, params.d, params.m, int(params.key_basis), float(params.error_threshold),
        params.max_restarts, strategy.attack.code, strategy.g or 0, arm_mask,
        int(strategy.knows_plaintext), float(source.p1), source.max_photons,
        master_seed & 0xFFFFFFFFFFFFFFFF, start, count,
    )
