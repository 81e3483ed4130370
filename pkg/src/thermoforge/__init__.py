"""Recurrent metamodel of building thermal behaviour with CMA-ES calibration and NSGA-II schedule search."""
from ._jit import NUMBA_AVAILABLE, USE_NUMBA

__version__ = "0.1.0"

__all__ = ["NUMBA_AVAILABLE", "USE_NUMBA", "__version__"]
