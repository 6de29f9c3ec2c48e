"""Market tipping-point laboratory.

Pipeline: microscopic agent simulation (abm) feeds either a closed
Fokker-Planck soup (fokker_planck) or learned surrogate models (ard, ml,
surrogates, manifold); bifurcation traces their steady-state branches to the
fold, and rare_events estimates escape times near it.  The tipping-lab
command (cli) wires the stages into reproducible file-based runs.
"""

from ._kernels import active_backend
from .errors import DataIntegrityError, NumericalError

__version__ = "0.1.0"

__all__ = ["active_backend", "DataIntegrityError", "NumericalError", "__version__"]
