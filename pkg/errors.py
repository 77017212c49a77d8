"""
Exception hierarchy shared by every module.

Each family carries the process exit code the CLI maps it to:
1 configuration, 2 hypothesis / feasibility, 3 solver runtime, 4 verification.
"""


class ClawError(Exception):
    exit_code = 3


# --- Configuration ---

class ScenarioError(ClawError):
    exit_code = 1


class ProfileError(ClawError):
    exit_code = 1


class FluxTableError(ClawError):
    exit_code = 1


class UnknownFlux(ClawError):
    exit_code = 1


# --- Hypotheses and feasibility ---

class HypothesisError(ClawError):
    exit_code = 2


class DomainError(HypothesisError):
    pass


class ZeroShift(HypothesisError):
    pass


class UnboundedNorm(HypothesisError):
    pass


class BranchUndetermined(HypothesisError):
    pass


class NotControllable(HypothesisError):
    pass


class H2Violation(HypothesisError):
    pass


class FeasibilityError(HypothesisError):
    pass


class OneSidedViolation(HypothesisError):
    pass


class ExtensionInfeasible(HypothesisError):
    pass


# --- Solvers ---

class SolverError(ClawError):
    exit_code = 3


class ControlError(SolverError):
    pass


class BlowUp(SolverError):
    def __init__(self, t, x0):
        super().__init__(f"gradient blow-up at t={t:.6g} on the characteristic from x0={x0:.6g}")
        self.t = t
        self.x0 = x0


class WindowTooSmall(SolverError):
    pass


class StepFailure(SolverError):
    pass


# --- Verification ---

class VerificationError(ClawError):
    exit_code = 4


class CertificateViolation(VerificationError):
    pass
