"""Fixed, versioned colour lookup used to rasterize scalar fields.

Version 1 stops (value in [0, 1] -> RGB in [0, 1]):

    0.00  blue    (0, 0, 1)
    0.25  cyan    (0, 1, 1)
    0.50  green   (0, 1, 0)
    0.75  yellow  (1, 1, 0)
    1.00  red     (1, 0, 0)

Every stop and every blend between adjacent stops is fully saturated, so no
field pixel can ever be mistaken for the white background by the outline
filter.
"""

import numpy as np

COLORMAP_VERSION = 1

STOPS = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
COLORS = np.array([
    [0.0, 0.0, 1.0],
    [0.0, 1.0, 1.0],
    [0.0, 1.0, 0.0],
    [1.0, 1.0, 0.0],
    [1.0, 0.0, 0.0],
])


def apply_colormap(values: np.ndarray) -> np.ndarray:
    """Map values in [0, 1] (clipped) to RGB, returning shape ``values.shape + (3,)``."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.stack([np.interp(v, STOPS, COLORS[:, k]) for k in range(3)], axis=-1)
