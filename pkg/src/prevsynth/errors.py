class PrevsynthError(Exception):
    """Base class for model errors."""


class DegenerateStratumError(PrevsynthError):
    """A conditional divides by a cessation probability of 0 or 1, or an age
    band admits no drug-use careers."""


class InconsistentHistoryError(PrevsynthError):
    """Ex-IDU weight at a time-since-start with no duration mass below it."""


class ImpossibleDataError(PrevsynthError):
    """An observation has zero likelihood under the predicted probability."""

    def __init__(self, message, obs_ids=()):
        super().__init__(message)
        self.obs_ids = tuple(obs_ids)


class ValidationError(PrevsynthError):
    """Input data failed schema or identifiability checks."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems) if self.problems else "invalid input")
