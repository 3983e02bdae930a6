class CDAPError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(CDAPError):
    """Invalid or unknown configuration value."""


class ValidationError(CDAPError):
    """Input data violates a documented invariant."""


class EpisodeParseError(ValidationError):
    def __init__(self, message: str, line_number: int | None = None) -> None:
        self.line_number = line_number
        prefix = f"line {line_number}: " if line_number is not None else ""
        super().__init__(f"{prefix}{message}")


class EpisodeValidationError(ValidationError):
    pass


class SamplingError(ValidationError):
    def __init__(self, message: str, class_name: str | None = None) -> None:
        self.class_name = class_name
        super().__init__(message)


class EmbeddingFileError(ValidationError):
    pass


class CheckpointError(ValidationError):
    pass


class ContractError(CDAPError):
    """A caller broke an operation's precondition."""


class ShapeError(ContractError):
    pass


class NumericalError(CDAPError):
    """Non-finite values appeared during computation."""


class TrainingDivergenceError(NumericalError):
    def __init__(self, message: str, step: int | None = None, episode_id: str | None = None) -> None:
        self.step = step
        self.episode_id = episode_id
        details = []
        if step is not None:
            details.append(f"step={step}")
        if episode_id is not None:
            details.append(f"episode={episode_id}")
        suffix = f" ({', '.join(details)})" if details else ""
        super().__init__(f"{message}{suffix}")
