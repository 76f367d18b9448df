"""Cache-occupancy side-channel measurement, simulation, and
trace-classification toolkit."""

__version__ = "0.1.0"

from .arch import ArchProfile, PROFILES, get_profile
from .trace import (
    Dataset,
    Memorygram,
    SampleKind,
    Technique,
    World,
    inject_jitter,
    load_dataset,
    normalize,
    resample,
    save_dataset,
)

__all__ = [
    "ArchProfile",
    "PROFILES",
    "get_profile",
    "Dataset",
    "Memorygram",
    "SampleKind",
    "Technique",
    "World",
    "inject_jitter",
    "load_dataset",
    "normalize",
    "resample",
    "save_dataset",
    "__version__",
]
