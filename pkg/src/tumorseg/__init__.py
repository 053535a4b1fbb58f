"""3D brain-tumor segmentation and overall-survival regression pipeline."""

from .volume import (LabelVolume, ModalityStack, Region, Volume, VolumeError,
                     brain_mask, load_internal, region_mask, write_internal)

__version__ = "0.1.0"

__all__ = [
    "LabelVolume",
    "ModalityStack",
    "Region",
    "Volume",
    "VolumeError",
    "brain_mask",
    "load_internal",
    "region_mask",
    "write_internal",
    "__version__",
]
