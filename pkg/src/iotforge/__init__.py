"""iotforge: synthesize, validate, and interactively repair IoT platform
integration code with an offline-testable agent pipeline."""

from .model import (
    DeviceTier,
    FunctionDescriptor,
    FunctionKind,
    IntegrationArtifact,
    IntegrationTask,
    PlatformProfile,
    classify_tier,
    validate_artifact_layout,
)

__version__ = "0.1.0"

__all__ = [
    "DeviceTier",
    "FunctionDescriptor",
    "FunctionKind",
    "IntegrationArtifact",
    "IntegrationTask",
    "PlatformProfile",
    "classify_tier",
    "validate_artifact_layout",
    "__version__",
]
