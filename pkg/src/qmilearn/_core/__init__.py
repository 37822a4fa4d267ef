"""Hot loops over sector basis states.

The Cython extension ``_kernels`` is used when it has been built; otherwise
the NumPy module ``_fallback`` provides the same functions. Setting the
environment variable ``QMILEARN_PURE_PYTHON=1`` forces the fallback.
"""

import os

from . import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("QMILEARN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback

sector_basis = _impl.sector_basis
index_table = _impl.index_table
sector_hamiltonian = _impl.sector_hamiltonian
pair_moments = _impl.pair_moments
# a single BLAS product beats a compiled loop here, so both backends share it
site_populations = _fallback.site_populations

__all__ = [
    "BACKEND",
    "sector_basis",
    "index_table",
    "sector_hamiltonian",
    "pair_moments",
    "site_populations",
]
