"""Fixed-point audio frontend, keyword / emotion models, INT8 runtime and tooling."""

from .errors import EdgeAudioError

__version__ = "0.1.0"
__all__ = ["EdgeAudioError", "__version__"]
