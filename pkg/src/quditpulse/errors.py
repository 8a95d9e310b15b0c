"""Exception hierarchy for the qudit pulse toolkit.

Errors are grouped by how the command-line front end maps them to exit
codes: configuration/schema problems, non-convergence of iterative
procedures, and numeric-integrity violations detected at run time.
"""


class QuditPulseError(Exception):
    """Base class for all toolkit errors."""


# --- configuration / input problems (CLI exit code 2) ---------------------

class SchemaError(QuditPulseError):
    """A config or data file is malformed or missing a required field."""


class InvalidSpecError(QuditPulseError):
    """Device parameters violate a documented invariant."""


class InvalidCoherenceError(QuditPulseError):
    """Coherence times are unphysical (e.g. T2 exceeds 2*T1)."""


class WaveformFormatError(QuditPulseError):
    """A waveform file has a bad header or inconsistent sample count."""


class RefineGridError(QuditPulseError):
    """The time grid is too coarse to represent the requested dynamics."""


# --- non-convergence (CLI exit code 3) -------------------------------------

class NonConvergenceError(QuditPulseError):
    """An iterative search finished without reaching its target."""


class ChargeFitError(NonConvergenceError):
    """The two-parameter charge-basis fit did not reach tolerance."""

    def __init__(self, message, residual_ghz=None):
        super().__init__(message)
        self.residual_ghz = residual_ghz


class TruncationError(QuditPulseError):
    """Charge-basis truncation too small for converged eigenvalues."""


# --- numeric integrity (CLI exit code 4) -----------------------------------

class NumericIntegrityError(QuditPulseError):
    """A quantity violated a hard numerical invariant (unitarity, trace...)."""


class GradientIntegrityError(NumericIntegrityError):
    """Analytic gradient disagrees with the finite-difference check."""


class IntegratorAccuracyError(NumericIntegrityError):
    """Step-halving error estimate exceeded the requested tolerance."""

    def __init__(self, message, error_estimate=None):
        super().__init__(message)
        self.error_estimate = error_estimate
