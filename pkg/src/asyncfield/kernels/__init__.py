"""Hot numeric kernels, dispatched to numba or numpy.

Both implementations live side by side (``_numba_impl``, ``_numpy_impl``)
so tests and ``benchmarks/bench_kernels.py`` can run them against each
other.  Set ``ASYNCFIELD_DISABLE_NUMBA=1`` to force the numpy path.
"""
from .._backend import BACKEND, HAVE_NUMBA
from . import _numpy_impl as numpy_impl

if HAVE_NUMBA:
    from . import _numba_impl as numba_impl

    _impl = numba_impl
else:
    numba_impl = None
    _impl = numpy_impl

PAIR_MULTIPLICITY = numpy_impl.PAIR_MULTIPLICITY

local_update = _impl.local_update
frame_update = _impl.frame_update
mf_sweep = _impl.mf_sweep
enumerate_field = _impl.enumerate_field
log_partition = _impl.log_partition
gibbs_chain = _impl.gibbs_chain
approx_incoming = _impl.approx_incoming

__all__ = [
    "BACKEND",
    "PAIR_MULTIPLICITY",
    "approx_incoming",
    "enumerate_field",
    "frame_update",
    "gibbs_chain",
    "local_update",
    "log_partition",
    "mf_sweep",
    "numba_impl",
    "numpy_impl",
]
