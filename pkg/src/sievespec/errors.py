"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument is outside its mathematical or physical domain."""


class SamplingError(DomainError):
    """Requested detector pitch cannot represent the PSF band limit.

    Carries the maximum admissible pitch so callers can report it.
    """

    def __init__(self, pitch_m: float, max_pitch_m: float):
        self.pitch_m = pitch_m
        self.max_pitch_m = max_pitch_m
        super().__init__(
            f"pixel pitch {pitch_m:.6g} m is coarser than the band limit; "
            f"maximum admissible pitch is {max_pitch_m:.6g} m"
        )


class FormatError(ValueError):
    """A file does not conform to its container format."""

    def __init__(self, message: str, byte_offset: int | None = None):
        self.byte_offset = byte_offset
        if byte_offset is not None:
            message = f"{message} (at byte offset {byte_offset})"
        super().__init__(message)


class SolverError(RuntimeError):
    """An iterative solver produced non-finite values or a singular pivot."""

    def __init__(self, message: str, iteration: int | None = None):
        self.iteration = iteration
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)


class ConfigError(ValueError):
    """A run configuration failed schema validation."""

    def __init__(self, message: str, field_path: str | None = None):
        self.field_path = field_path
        if field_path is not None:
            message = f"{field_path}: {message}"
        super().__init__(message)
