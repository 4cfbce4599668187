"""
Error Handler - Exception hierarchy, user-facing messages and CLI exit codes
"""

import logging
from dataclasses import dataclass
from typing import List, Optional

logger = logging.getLogger(__name__)


class VortexShaperError(Exception):
    """Base class for every error raised by the toolkit"""
    pass


class ConfigError(VortexShaperError):
    """Invalid or unparseable experiment configuration"""

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        self.field = field
        self.line = line
        location = ""
        if field:
            location += f" [field: {field}]"
        if line is not None:
            location += f" [line: {line}]"
        super().__init__(f"{message}{location}")


class UnknownFigure(VortexShaperError):
    pass


class NumericalError(VortexShaperError):
    """Base class for failures of a numerical stage"""
    pass


class GridTooNarrow(NumericalError):
    pass


class NonPositiveDistance(NumericalError):
    pass


class UpstreamPlane(NumericalError):
    pass


class UnsupportedOrder(NumericalError):
    pass


class IntegratorFailure(NumericalError):
    pass


class FitDiverged(NumericalError):
    pass


class SingularJacobian(NumericalError):
    pass


class NoSignal(NumericalError):
    pass


class InsufficientData(NumericalError):
    pass


class BadReference(NumericalError):
    pass


class NoSteadyState(NumericalError):
    pass


class ZeroCoupling(NumericalError):
    pass


class InvalidQuantumNumbers(NumericalError):
    pass


# Message entries keyed by error type
ERROR_MESSAGES = {
    "config_error": {
        "title": "Configuration Error",
        "message": "The experiment configuration could not be loaded or is inconsistent.",
        "suggestions": [
            "Check the JSON syntax near the reported line",
            "Verify the unit suffix of the reported field (e.g. _um, _us, _mW, _MHz)",
            "Make sure the sweep section names exactly one parameter with a non-empty values list",
            "Compare against the bundled presets (vortexshaper run --preset fig1)"
        ],
        "technical": "Configuration parsing or validation failed"
    },

    "unknown_figure": {
        "title": "Unknown Preset",
        "message": "The requested preset does not exist.",
        "suggestions": [
            "Use one of: fig1, fig3a, fig3b, fig3c, fig4, fig5, fig6, fig7",
            "Pass a custom experiment with --config instead"
        ],
        "technical": "Preset lookup failed"
    },

    "grid_too_narrow": {
        "title": "Propagation Grid Too Narrow",
        "message": "The field does not vanish at the edge of the sampling grid.",
        "suggestions": [
            "Increase the grid span (default is 4 beam radii at the target plane)",
            "Increase the number of grid points to keep the pixel pitch"
        ],
        "technical": "Edge field magnitude exceeds 1e-6 of the peak"
    },

    "integrator_failure": {
        "title": "Integrator Failure",
        "message": "The ODE integrator could not complete the requested time span.",
        "suggestions": [
            "Relax the integrator tolerances",
            "Check for unphysical parameters (negative times, huge saturation)",
            "Enable the intensity clamp (sequence.max_saturation)"
        ],
        "technical": "solve_ivp reported failure"
    },

    "fit_failed": {
        "title": "Fit Failed",
        "message": "The least-squares fit did not converge to a usable result.",
        "suggestions": [
            "Provide more data points spanning the model's sensitive range",
            "For detuning series, include points on both sides of resonance",
            "Check that the fixed parameters (sigma0, gamma1) are correct"
        ],
        "technical": "Levenberg-Marquardt failure"
    },

    "no_signal": {
        "title": "No Atom Signal",
        "message": "The image does not contain a detectable atom signal.",
        "suggestions": [
            "Reduce the shaping pulse energy",
            "Increase the simulated atom number",
            "Check the imaging frame covers the cloud"
        ],
        "technical": "Peak signal below 5x background rms"
    },

    "atomic_structure": {
        "title": "Atomic Structure Error",
        "message": "The requested transition or pumping scheme is not supported.",
        "suggestions": [
            "Use F in {1, 2} and F' in {0, 1, 2, 3} of the D2 line",
            "Check that the pump scheme fractions are non-negative and sum to 1"
        ],
        "technical": "Invalid quantum numbers or decoupled manifold"
    },

    "numerical_error": {
        "title": "Numerical Failure",
        "message": "A numerical stage of the simulation failed.",
        "suggestions": [
            "Check the physical parameters for consistency",
            "Run with --verbose to see the failing stage"
        ],
        "technical": "Numerical error"
    },

    "general_error": {
        "title": "Run Aborted",
        "message": "The run stopped on an error outside the simulation stages.",
        "suggestions": [
            "Run with --verbose and read the last logged stage",
            "Validate the experiment file against config.json",
            "Reinstall with pip install -r requirements.txt"
        ],
        "technical": "Unclassified exception"
    }
}

# Checked in order; the first matching class wins
ERROR_TYPES = (
    (ConfigError, "config_error"),
    (UnknownFigure, "unknown_figure"),
    (GridTooNarrow, "grid_too_narrow"),
    (IntegratorFailure, "integrator_failure"),
    ((FitDiverged, SingularJacobian, InsufficientData), "fit_failed"),
    (NoSignal, "no_signal"),
    ((InvalidQuantumNumbers, NoSteadyState, ZeroCoupling), "atomic_structure"),
    (NumericalError, "numerical_error"),
)

EXIT_CODES = {
    "success": 0,
    "config_error": 2,
    "numerical_error": 3,
    "unknown_figure": 4,
}


@dataclass
class ErrorReport:
    """A message entry with the failing run's own details attached"""
    title: str
    message: str
    suggestions: List[str]
    technical: str

    def render(self) -> str:
        lines = [f"{self.title}: {self.message}", f"Details: {self.technical}", "", "Suggestions:"]
        lines += [f"{n}. {hint}" for n, hint in enumerate(self.suggestions, 1)]
        return "\n".join(lines) + "\n"


class ErrorHandler:
    """Maps exceptions to user-facing messages and process exit codes"""

    @staticmethod
    def report(error_type: str, technical_details: Optional[str] = None) -> ErrorReport:
        """
        Build the report for an error type

        Args:
            error_type: Key into ERROR_MESSAGES; unknown keys fall back to general_error
            technical_details: Exception text appended to the technical line
        """
        entry = ERROR_MESSAGES.get(error_type, ERROR_MESSAGES["general_error"])
        technical = entry["technical"]
        if technical_details:
            technical = f"{technical}: {technical_details}"
        return ErrorReport(entry["title"], entry["message"], list(entry["suggestions"]), technical)

    @staticmethod
    def format_error_message(error_type: str, technical_details: Optional[str] = None) -> str:
        return ErrorHandler.report(error_type, technical_details).render()

    @staticmethod
    def get_suggestions(error_type: str) -> List[str]:
        return ErrorHandler.report(error_type).suggestions

    @staticmethod
    def detect_error_type(exception: Exception) -> str:
        """Message key of the first ERROR_TYPES entry the exception is an instance of"""
        for classes, key in ERROR_TYPES:
            if isinstance(exception, classes):
                return key
        return "general_error"

    @staticmethod
    def exit_code(exception: Optional[Exception]) -> int:
        """
        Exit code for a finished run

        Args:
            exception: The exception that ended the run, or None on success

        Returns:
            0 success, 2 config error, 3 numerical failure, 4 unknown preset
        """
        if exception is None:
            return EXIT_CODES["success"]
        key = ErrorHandler.detect_error_type(exception)
        if key in ("config_error", "unknown_figure"):
            return EXIT_CODES[key]
        if key == "general_error":
            logger.error(f"Unclassified error mapped to numerical failure: {exception!r}")
        return EXIT_CODES["numerical_error"]
