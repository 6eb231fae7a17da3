"""Shared exception types.

Every failure mode the pipeline can hit maps to one of these, so the CLI
can translate them into stable exit codes (usage=2, integrity=3,
missing artifact=4).
"""


class SpotdiffError(Exception):
    """Base class for all package errors."""


class DimensionError(SpotdiffError):
    """Shapes of operands are incompatible."""


class ConfigError(SpotdiffError):
    """A configuration value is out of its legal range."""


class ContractError(SpotdiffError):
    """An operation was called outside its contract (e.g. non-scalar loss)."""


class IntegrityError(SpotdiffError):
    """Internal consistency violated: untagged parameters, optimizer state
    covering frozen parameters, corrupted checkpoint."""


class MissingArtifactError(SpotdiffError):
    """A required upstream artifact does not exist on disk."""

    def __init__(self, path, hint=""):
        self.path = str(path)
        msg = f"missing artifact: {self.path}"
        if hint:
            msg += f" ({hint})"
        super().__init__(msg)


class TrainingDiverged(SpotdiffError):
    """Loss became non-finite; carries diagnostics for the abort report."""

    def __init__(self, step, t_histogram, message="non-finite loss"):
        self.step = step
        self.t_histogram = t_histogram
        super().__init__(f"{message} at step {step}; t histogram: {t_histogram}")
