"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A run configuration violates a safety precondition (e.g. step size cap)."""


class EtaCapError(ConfigurationError):
    """Step size beyond the moment-bound cap without the unsafe override."""


class NumericOverflowError(FloatingPointError):
    """A chain produced a non-finite coordinate.

    Carries the step index and the last finite state norm so a diverging run
    can be diagnosed instead of silently propagating NaNs.
    """

    def __init__(self, step, norm, replication=0):
        self.step = int(step)
        self.norm = float(norm)
        self.replication = int(replication)
        super().__init__(
            f"non-finite state at step {self.step} "
            f"(replication {self.replication}, last norm {self.norm:.6g})"
        )
