"""espproj: equality-set projection of H-polytopes and projection-based dispatch."""

from espproj.linalg import ToleranceConfig

__version__ = "0.1.0"

__all__ = ["ToleranceConfig", "__version__"]
