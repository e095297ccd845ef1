"""In-memory CT volume."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

DTYPE_TAGS = {np.dtype(np.uint8): 0, np.dtype(np.uint16): 1, np.dtype(np.float32): 2}
TAG_DTYPES = {v: k for k, v in DTYPE_TAGS.items()}


@dataclass
class Volume:
    """Stack of grayscale slices, ``voxels`` shaped ``[depth, height, width]``.

    ``intensity_range`` is the nominal range of the stored values: the full
    integer range for u8/u16 data (or the PGM maxval), data min/max for
    float volumes unless given explicitly.
    """

    voxels: np.ndarray
    intensity_range: tuple[float, float] | None = field(default=None)

    def __post_init__(self):
        v = np.asarray(self.voxels)
        if v.ndim != 3 or min(v.shape) < 1:
            raise ShapeError(f"volume must be [depth>=1, height>=1, width>=1], got {v.shape}")
        if v.dtype not in DTYPE_TAGS:
            raise TypeError(f"unsupported voxel dtype {v.dtype}")
        self.voxels = np.ascontiguousarray(v)
        if self.intensity_range is None:
            if v.dtype.kind == "u":
                self.intensity_range = (0, int(np.iinfo(v.dtype).max))
            else:
                self.intensity_range = (float(v.min()), float(v.max()))

    @property
    def depth(self) -> int:
        return self.voxels.shape[0]

    @property
    def height(self) -> int:
        return self.voxels.shape[1]

    @property
    def width(self) -> int:
        return self.voxels.shape[2]
