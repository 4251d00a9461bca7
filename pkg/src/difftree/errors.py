"""Exception hierarchy shared by all difftree modules."""


class DifftreeError(Exception):
    """Base class for every error raised by difftree."""


# corpus
class EmptyInput(DifftreeError):
    pass


class MalformedRecord(DifftreeError):
    def __init__(self, message, line_no=None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class InvalidWindow(DifftreeError):
    pass


# topics
class EmptyDocument(DifftreeError):
    pass


class TooFewDocuments(DifftreeError):
    pass


class InvalidHyperparameter(DifftreeError):
    pass


class VocabularyMismatch(DifftreeError):
    pass


class UnmappedTopic(DifftreeError):
    pass


class UnknownLabel(DifftreeError):
    pass


class ConfigFormatError(DifftreeError):
    """A taxonomy, label map or model file failed validation at load."""


# diffusion
class MismatchedYearRanges(DifftreeError):
    pass


class TooFewPeriods(DifftreeError):
    pass


# tree
class UncoveredYear(DifftreeError):
    pass


class MissingProfile(DifftreeError):
    def __init__(self, country):
        self.country = country
        super().__init__(f"no economy profile for {country!r}")


# forecast
class TooFewPoints(DifftreeError):
    pass


class DegenerateDesign(DifftreeError):
    pass


class SingleGroup(DifftreeError):
    pass


class InsufficientRows(DifftreeError):
    pass


class MissingFit(DifftreeError):
    pass


class FitFailures(DifftreeError):
    """Raised by batch fitters after collecting every per-group failure."""

    def __init__(self, failures):
        self.failures = dict(failures)
        detail = "; ".join(f"{k}: {v}" for k, v in self.failures.items())
        super().__init__(f"{len(self.failures)} group fit(s) failed: {detail}")


# qstat
class ZeroVariance(DifftreeError):
    pass


# pipeline
class ConfigInvalid(DifftreeError):
    def __init__(self, errors):
        # errors: mapping field -> message
        self.errors = dict(errors)
        detail = "; ".join(f"{k}: {v}" for k, v in self.errors.items())
        super().__init__(f"invalid config: {detail}")


class StageFailure(DifftreeError):
    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause.__class__.__name__}: {cause}")


class MissingArtifact(DifftreeError):
    pass
