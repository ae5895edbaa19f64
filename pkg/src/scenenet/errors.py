"""Exception hierarchy shared by every stage of the pipeline."""


class SceneNetError(Exception):
    """Base class for all pipeline errors."""


class AudioFormatError(SceneNetError):
    """Unsupported WAV encoding, bit depth or channel layout."""


class SampleRateError(AudioFormatError):
    """Audio is not sampled at 44100 Hz."""


class TooShortError(SceneNetError):
    """Input is shorter than one analysis frame or one window."""


class ParameterError(SceneNetError, ValueError):
    """An argument is outside its legal range."""


class ShapeError(SceneNetError, ValueError):
    """Tensor shapes do not line up."""


class LabelError(SceneNetError, ValueError):
    """A class label is out of range or not in the vocabulary."""


class InsufficientDataError(SceneNetError):
    """Not enough examples to compute a statistic."""


class ConfigurationError(SceneNetError):
    """Inconsistent configuration or missing prerequisite."""


class DataError(SceneNetError):
    """Posterior sets or manifests with missing or inconsistent entries."""


class ManifestError(DataError):
    """Dataset manifest is malformed or violates the fold protocol."""


class NumericError(SceneNetError, FloatingPointError):
    """NaN or Inf encountered during a forward or backward pass."""


class FileFormatError(SceneNetError):
    """A binary file is truncated, corrupt or has the wrong magic bytes."""


class VersionError(FileFormatError):
    """A binary file was written by an incompatible format version."""

    def __init__(self, kind: str, found: int, expected: int):
        super().__init__(
            f"{kind} file version {found} is not supported (expected version {expected})"
        )
        self.found = found
        self.expected = expected
