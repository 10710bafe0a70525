"""Exception hierarchy shared by all sketchvid subsystems."""


class SketchvidError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(SketchvidError):
    """Invalid configuration value (schedule parameters, run config, ...)."""


class DataError(SketchvidError):
    """Malformed numeric input (non-finite tensors, bad shapes)."""


class NumericalError(SketchvidError):
    """A solver step produced non-finite values; carries step context."""


class PlanError(SketchvidError):
    """Base for layout-plan failures."""


class PlanParseError(PlanError):
    """No JSON plan could be extracted from the model response."""


class PlanSchemaError(PlanError):
    """The extracted plan violates the plan schema (bad box, bad frame)."""


class PlanContinuityError(PlanError):
    """An object moves too far between frames, or vanishes and reappears."""


class LayoutError(PlanError):
    """The deterministic planner cannot fit the requested objects."""


class ExtractionError(SketchvidError):
    """Sprite extraction failed (empty mask)."""


class PlacementError(SketchvidError):
    """Sprite placement failed (box degenerates below one pixel)."""


class AssemblyError(SketchvidError):
    """Sketch assembly referenced a sprite that does not exist."""


class CodecError(SketchvidError):
    """Latent codec shape or identifier mismatch."""


class GatewayError(SketchvidError):
    """Base for model-service transport failures.

    Attributes:
        kind: endpoint kind ("chat", "t2i", ...), when known.
    """

    def __init__(self, message: str, kind: str | None = None):
        super().__init__(message)
        self.kind = kind


class GatewayTimeout(GatewayError):
    """The service did not answer within the endpoint timeout."""

    def __init__(self, message: str, kind: str | None = None,
                 elapsed_s: float | None = None):
        super().__init__(message, kind)
        self.elapsed_s = elapsed_s


class GatewayHTTPError(GatewayError):
    """The service answered with a non-success HTTP status."""

    def __init__(self, message: str, kind: str | None = None,
                 status: int | None = None):
        super().__init__(message, kind)
        self.status = status


class GatewayPayloadError(GatewayError):
    """The service answered with a payload that fails shape validation."""


class ManifestError(SketchvidError):
    """A manifest record is incomplete or an artifact hash mismatches."""
