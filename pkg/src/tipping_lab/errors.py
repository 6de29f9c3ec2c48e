"""Shared exception types.

ValueError stays reserved for bad arguments and malformed configuration;
NumericalError marks runtime numerical failures (blow-ups, non-convergence,
state corruption); DataIntegrityError marks artifact checksum mismatches.
The command line maps these onto exit codes 2 and 3.
"""


class NumericalError(RuntimeError):
    """A computation failed numerically (divergence, corruption, no root)."""


class DataIntegrityError(RuntimeError):
    """A stored artifact does not match its recorded content hash."""
