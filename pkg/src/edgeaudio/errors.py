"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`EdgeAudioError`
and carries a short machine-readable ``category`` used by the CLI.
"""


class EdgeAudioError(Exception):
    category = "error"


# frontend
class ConfigError(EdgeAudioError):
    category = "config"


class SignalTooShort(EdgeAudioError):
    category = "signal_too_short"


class StateError(EdgeAudioError):
    category = "state"


class WavFormatError(EdgeAudioError):
    category = "wav_format"


# tensor core / models
class ShapeError(EdgeAudioError):
    category = "shape"


class NumericalError(EdgeAudioError):
    category = "numerical"


class CalibrationError(EdgeAudioError):
    category = "calibration"


class GraphError(EdgeAudioError):
    category = "graph"


# containers and weight files
class ContainerError(EdgeAudioError):
    category = "container"


class ManifestError(ContainerError):
    category = "manifest"


class WeightLoadError(ContainerError):
    category = "weights"


class MissingTensorError(WeightLoadError):
    category = "missing_tensor"


class TensorShapeMismatch(WeightLoadError):
    category = "tensor_shape"


class TensorDtypeMismatch(WeightLoadError):
    category = "tensor_dtype"


class ModelInputMismatch(EdgeAudioError):
    category = "model_input"


# datapipe
class ChannelError(EdgeAudioError):
    category = "channel"


class LabelError(EdgeAudioError):
    category = "label"


class CurationError(EdgeAudioError):
    category = "curation"


class AlignmentError(EdgeAudioError):
    category = "alignment"


class StitchError(EdgeAudioError):
    category = "stitch"


# eval
class MetricError(EdgeAudioError):
    category = "metric"
