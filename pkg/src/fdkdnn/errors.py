"""Exception hierarchy shared by every stage of the pipeline."""


class FdkError(Exception):
    """Base class for all errors raised by fdkdnn."""


# tensor-core

class TensorError(FdkError, ValueError):
    pass


class ChannelMismatch(TensorError):
    pass


class ShapeMismatch(TensorError):
    pass


class DimensionMismatch(TensorError):
    pass


class EmptyOutput(TensorError):
    pass


class InvalidRate(TensorError):
    pass


class NonFiniteError(TensorError):
    def __init__(self, message: str, node_id: str | None = None):
        if node_id is not None:
            message = f"{message} (node {node_id!r})"
        super().__init__(message)
        self.node_id = node_id


class NonFiniteInput(NonFiniteError):
    pass


class NonFiniteResult(NonFiniteError):
    pass


# model-graph

class GraphError(FdkError):
    pass


class ParseError(GraphError, ValueError):
    pass


class CycleDetected(GraphError):
    pass


class UnknownNode(GraphError):
    pass


class ShapeInferenceError(GraphError):
    pass


class MissingWeight(GraphError):
    pass


# data-pipeline

class DataError(FdkError):
    pass


class DecoderNotFound(DataError):
    def __init__(self, command: list[str]):
        super().__init__(f"decoder not found: {' '.join(command)}")
        self.command = command


class DecoderFailed(DataError):
    def __init__(self, command: list[str], returncode: int, stderr: str):
        super().__init__(
            f"decoder exited with status {returncode}: {' '.join(command)}\n{stderr}"
        )
        self.command = command
        self.returncode = returncode
        self.stderr = stderr


class ZeroFrames(DataError):
    pass


class UnsupportedFormat(DataError):
    pass


class CorruptHeader(DataError):
    pass


class TruncatedPayload(DataError):
    pass


class ZeroStd(DataError, ValueError):
    pass


class NoClasses(DataError):
    pass


class EmptyClassDir(DataError):
    pass


class ClassTooSmall(DataError):
    pass


class ManifestError(DataError, ValueError):
    pass


# head-trainer / eval-report

class TrainError(FdkError):
    pass


class FingerprintMismatch(TrainError):
    pass


class MissingEmbedding(TrainError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class NonFiniteLoss(TrainError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"loss became non-finite ({loss}) at step {step}")
        self.step = step
        self.loss = loss


class DecodeError(TrainError):
    def __init__(self, path, cause: Exception):
        super().__init__(f"failed to decode {path}: {cause}")
        self.path = path


class CacheFormatError(TrainError, ValueError):
    pass


class EmptySplit(FdkError, ValueError):
    pass
