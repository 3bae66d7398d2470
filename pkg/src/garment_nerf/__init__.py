"""Motion-driven garment rendering with a body-relative radiance field and palette recoloring.

Submodules: geometry (body template, skinning, closest-point queries),
infomaps (UV normal and velocity maps), synthdata (synthetic multi-view
scenes), generator (neural texture and reference-image generator),
encoders, nerf (body-aware sampling and volume rendering), palette
(decomposition and compositing), training, evalmetrics and cli.
"""

from .errors import ConfigurationError, DomainError, GarmentNerfError, TrainingAborted, UsageError

__version__ = "0.1.0"

__all__ = ["ConfigurationError", "DomainError", "GarmentNerfError", "TrainingAborted", "UsageError", "__version__"]
