"""
Exception hierarchy.

Every error carries enough context to be reported as a small JSON object on
the error stream by the command line (see QNDError.to_dict).
"""

from typing import Any, Dict, Optional, Tuple


class QNDError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 2

    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.path = path

    def to_dict(self) -> Dict[str, Any]:
        payload = {"error": type(self).__name__, "message": self.message}
        if self.path is not None:
            payload["path"] = self.path
        return payload


class ValidationError(QNDError, ValueError):
    """Input violates a documented precondition."""


class ShapeMismatchError(ValidationError):
    """Array shapes of system, device, interaction or state disagree."""


class NormalizationError(ValidationError):
    """Trace of a density matrix differs from one."""


class HermiticityError(ValidationError):
    """A matrix that must be Hermitian is not."""


class PositivityError(ValidationError):
    """A density matrix has a negative eigenvalue or population."""


class RepresentationError(ValidationError):
    """Operation called with the wrong effect-density representation."""


class StepSizeError(ValidationError):
    """Oracle step size or smoothing constraints are violated."""


class ScenarioError(ValidationError):
    """Scenario or matrix file could not be parsed."""


class SizeGuardError(ValidationError):
    """Problem is too large for the brute-force oracle."""


class CommutatorViolation(QNDError):
    """Two operators of the family do not commute: the measurement is destructive."""

    def __init__(self, pair: Tuple[str, str], residual: float, relative: float):
        message = (
            f"operators {pair[0]} and {pair[1]} do not commute: "
            f"||[{pair[0]},{pair[1]}]||_F = {residual:.17g} (relative {relative:.3g})"
        )
        super().__init__(message, path=f"{pair[0]},{pair[1]}")
        self.pair = pair
        self.residual = residual
        self.relative = relative

    def to_dict(self) -> Dict[str, Any]:
        payload = super().to_dict()
        payload["pair"] = list(self.pair)
        payload["residual"] = self.residual
        return payload


class JointDiagonalizationFailure(QNDError):
    """No common (product) eigenbasis could be found for the family."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class NonUniformImpact(QNDError):
    """The per-pulse integral impacts differ at t, so the factorized form does not apply."""

    exit_code = 1

    def __init__(self, t: float, phases=None):
        super().__init__(f"integral impacts are not uniform at t = {t!r}")
        self.t = t
        self.phases = phases


class ZeroWeight(QNDError):
    """rho_mn vanishes, so the normalized effect density is undefined."""

    def __init__(self, m: int, n: int):
        super().__init__(f"pair ({m}, {n}) carries no coherence: rho_mn = 0", path=f"{m},{n}")
        self.pair = (m, n)
