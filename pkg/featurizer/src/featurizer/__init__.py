"""Feature exporter: turns a JSON manifest of task-specification sources
(text strings, image/video/audio files) into the TensorPack dataset layout
consumed by the policy-learning package.

The two packages share only the on-disk contract: the TensorPack container
format and the dataset directory layout. Nothing is imported across the
boundary.
"""

from .backend import HashedBackend
from .export import ExportError, ExportJob, load_manifest, run_export

__all__ = ["ExportError", "ExportJob", "HashedBackend", "load_manifest",
           "run_export"]
