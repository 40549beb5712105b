"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class PoseGnnError(Exception):
    """Base class for all library errors."""


class ValidationError(PoseGnnError):
    """Bad input, configuration, or mismatched artifacts (CLI exit code 1)."""


class ShapeError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class GraphError(ValidationError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class FormatError(ValidationError):
    """Corrupt or incompatible dataset/checkpoint file."""


class NumericError(PoseGnnError):
    """Runtime numeric failure such as a NaN loss (CLI exit code 2)."""


class AutodiffError(NumericError):
    pass


class DegenerateDistributionError(NumericError):
    pass
