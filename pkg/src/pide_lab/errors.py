"""Exception hierarchy shared by the solver modules and the CLI."""


class PideLabError(Exception):
    """Base class for all errors raised by pide_lab."""


class ConfigError(PideLabError):
    """Invalid user input: malformed config, bad domain, wrong dimensions."""


class NumericalError(PideLabError):
    """A numerical precondition failed (admissibility, singularity, coercivity)."""


class NotCoercive(NumericalError):
    """The discrete bilinear form is not coercive on V_h at the sampled times.

    Carries the raw surrogate constants so callers can pick a Garding shift.
    """

    def __init__(self, alpha_hat, beta_hat, message=None):
        self.alpha_hat = alpha_hat
        self.beta_hat = beta_hat
        super().__init__(message or f"bilinear form not coercive on V_h: beta_hat={beta_hat:.6g}")


class AdmissibilityError(NumericalError):
    """Time step violates the explicit-scheme stability condition."""


class SingularStepError(NumericalError):
    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"singular step matrix at step {step}")


class ConvergenceGateError(NumericalError):
    """Projection rates failed, so a convergence study cannot be interpreted."""
