"""Exception types shared across the package."""


class AskHelpError(Exception):
    """Base class for all package errors."""


class SceneParseError(AskHelpError):
    def __init__(self, line_no: int, field: str, message: str):
        self.line_no = line_no
        self.field = field
        super().__init__(f"line {line_no}: bad {field}: {message}")


class SceneValidationError(AskHelpError):
    pass


class SceneGenerationError(AskHelpError):
    pass


class MapMismatchError(AskHelpError):
    pass


class EpisodeDoneError(AskHelpError):
    """Raised when step() is called on a finished episode."""


class ConfigError(AskHelpError):
    pass


class LogSchemaError(AskHelpError):
    pass


class CheckpointError(AskHelpError):
    pass
