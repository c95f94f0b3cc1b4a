from typing import Any, Dict, Optional, Sequence

class AppException(Exception):
    """Base exception class for application exceptions"""

    def __init__(
        self,
        status_code: int,
        detail: str,
        data: Optional[Dict[str, Any]] = None,
    ):
        self.status_code = status_code
        self.detail = detail
        self.data = data

        super().__init__(self.detail)

class DimensionMismatchError(AppException):
    """Raised when operand shapes do not agree"""

    def __init__(self, detail: str = "Dimension mismatch", shapes: Sequence[Any] = ()):
        super().__init__(status_code=400, detail=detail, data={"shapes": [tuple(s) for s in shapes]})

class SingularMatrixError(AppException):
    """Raised when a matrix that must be inverted is (numerically) rank deficient"""

    def __init__(self, detail: str = "Matrix is singular", condition: Optional[float] = None):
        self.condition = condition
        if condition is not None:
            detail = f"{detail} (condition estimate {condition:.3e})"
        super().__init__(status_code=422, detail=detail, data={"condition": condition})

class NotPositiveDefiniteError(AppException):
    """Raised when a Cholesky factorization meets a non-positive pivot"""

    def __init__(self, detail: str = "Matrix is not Hermitian positive definite"):
        super().__init__(status_code=422, detail=detail)

class DegenerateChannelError(AppException):
    """Raised when a channel realization cannot be inverted and must be resampled"""

    def __init__(self, detail: str = "Degenerate channel realization"):
        super().__init__(status_code=422, detail=detail)

class ScheduleError(AppException):
    """Raised when a pilot schedule violates the rank requirement"""

    def __init__(self, detail: str = "Invalid pilot schedule"):
        super().__init__(status_code=400, detail=detail)

class ConfigError(AppException):
    """Raised for malformed or inconsistent configuration"""

    def __init__(self, detail: str = "Invalid configuration"):
        super().__init__(status_code=400, detail=detail)

class DatasetFormatError(AppException):
    """Raised when a dataset or checkpoint file cannot be decoded"""

    def __init__(self, detail: str = "Malformed dataset file"):
        super().__init__(status_code=400, detail=detail)

class ArtifactMissingError(AppException):
    """Raised when a dataset, checkpoint or result file is not where it should be"""

    def __init__(self, path: Any, detail: Optional[str] = None):
        self.path = str(path)
        super().__init__(
            status_code=404,
            detail=detail or f"Missing artifact: {self.path}",
            data={"path": self.path},
        )

class TrainingDivergedError(AppException):
    """Raised when the training loss stops being finite"""

    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(
            status_code=500,
            detail=f"Training diverged (non-finite loss) at epoch {epoch}",
            data={"epoch": epoch},
        )
