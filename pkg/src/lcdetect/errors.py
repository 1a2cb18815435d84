"""Exception types shared across the toolkit."""


class CohortSchemaError(ValueError):
    """CSV header or column layout does not match the cohort schema."""


class CohortParseError(ValueError):
    """A cell could not be parsed; carries the 1-based data row index."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class IntegrityError(ValueError):
    """Duplicate ids, tampered artifacts, or other consistency violations."""


class SpecError(ValueError):
    """Invalid cohort spec or pipeline configuration."""


class ConvergenceError(RuntimeError):
    """An optimizer stopped before reaching its tolerance."""

    def __init__(self, message, gradient_norm=None):
        super().__init__(message)
        self.gradient_norm = gradient_norm


class ArtifactError(RuntimeError):
    """A required artifact file is missing or unreadable."""
