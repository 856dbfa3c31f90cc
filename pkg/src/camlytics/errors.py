"""Exception hierarchy shared across the pipeline."""


class CamlyticsError(Exception):
    """Base class for all pipeline errors."""


class DuplicateCameraError(CamlyticsError):
    """A camera id was registered twice."""


class UnknownCameraError(CamlyticsError):
    """A camera id is not present in the registry."""


class FrameStoreError(CamlyticsError):
    """Frame persistence violated an invariant (duplicate key, bad pixels)."""


class DegenerateGeometryError(CamlyticsError):
    """Point configuration cannot support a homography fit."""


class InsufficientDataError(CamlyticsError):
    """Not enough correspondences for robust estimation."""


class CalibrationError(CamlyticsError):
    """ROI calibration is missing or invalid."""


class EmptyHarmonizationError(CamlyticsError):
    """Pre/post windows share no matched calendar days."""


class PartitionMismatchError(CamlyticsError):
    """Change computation received bundles from different partitions."""


class AggregationError(CamlyticsError):
    """Aggregation input referenced unregistered cameras or bad schema."""


class PromptError(CamlyticsError):
    """Prompt construction preconditions were violated."""


class TransportError(CamlyticsError):
    """The text-generation endpoint failed or was unreachable."""


class ClaimExtractionError(CamlyticsError):
    """Report text could not be parsed into findings."""


class MetricInputError(CamlyticsError):
    """Evaluation metric received out-of-range or empty input."""


class ConfigError(CamlyticsError):
    """Pipeline configuration is malformed."""


class SceneSpecError(CamlyticsError):
    """Synthetic scene specification is out of renderable bounds."""
