"""Quench dynamics of the disordered XXZ chain, exact mutual information, a
cluster-expansion baseline, and a neural-network map from local irreducible
entropies to the mutual information."""

__version__ = "0.1.0"

from ._core import BACKEND  # noqa: E402

__all__ = ["BACKEND", "__version__"]
