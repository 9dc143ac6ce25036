"""Pick the compiled kernels when importable, else the pure-Python ones.

Set ``MEDPATH_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

if os.environ.get("MEDPATH_PURE_PYTHON", "").strip() not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

IMPLEMENTATION = _impl.IMPLEMENTATION

# move counters written by the sweeps
GAMMA_COUNTS = (
    "single_birth_prop", "single_birth_acc", "single_death_prop", "single_death_acc",
    "joint_birth_prop", "joint_birth_acc", "joint_death_prop", "joint_death_acc",
)
OMEGA_COUNTS = ("birth_prop", "birth_acc", "death_prop", "death_acc")

gamma_tau_sweep = _impl.gamma_tau_sweep
omega_delta_sweep = _impl.omega_delta_sweep
coord_rw_sweep = _impl.coord_rw_sweep
fill_cache = _impl.fill_cache
delta_proposal = _impl.delta_proposal
mix_logq = _impl.mix_logq


def implementations():
    """Every importable backend, keyed by name."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels

        out["cython"] = _kernels
    except ImportError:
        pass
    return out
