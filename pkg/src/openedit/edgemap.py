"""Gradient-magnitude edge detection behind a tiny interface.

Stands in for a learned edge model: grayscale -> 3×3 Sobel kernels (normalized
so a unit step responds with 1.0) -> magnitude, scaled by 2.0 and clamped to
[0,1]. Step edges of contrast >= 0.5 therefore saturate. The kernels are
applied separably as explicit differences so constant regions respond with an
exact zero.
"""

from dataclasses import dataclass

import numpy as np

EDGE_SCALE = 2.0

GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass
class EdgeMap:
    values: np.ndarray  # H×W in [0,1]

    def __post_init__(self):
        v = self.values
        if v.ndim != 2:
            raise ValueError(f"EdgeMap must be 2-D, got shape {v.shape}")
        if v.min() < 0 or v.max() > 1:
            raise ValueError("EdgeMap values must lie in [0,1]")


def _sobel(gray: np.ndarray, pad_mode: str):
    pad = np.pad(gray, 1, mode=pad_mode)
    dx = pad[:, 2:] - pad[:, :-2]
    gx = (dx[:-2] + 2.0 * dx[1:-1] + dx[2:]) / 4.0
    dy = pad[2:, :] - pad[:-2, :]
    gy = (dy[:, :-2] + 2.0 * dy[:, 1:-1] + dy[:, 2:]) / 4.0
    return gx, gy


def extract_edges(image: np.ndarray, padding: str = "reflect") -> EdgeMap:
    """H×W×3 image in [0,1] -> EdgeMap. padding: 'reflect' (default) or 'wrap'."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected H×W×3 image, got shape {image.shape}")
    if padding not in ("reflect", "wrap"):
        raise ValueError(f"unsupported padding {padding!r}")
    gray = image.astype(np.float64) @ GRAY_WEIGHTS
    gx, gy = _sobel(gray, "symmetric" if padding == "reflect" else "wrap")
    mag = np.sqrt(gx**2 + gy**2) * EDGE_SCALE
    return EdgeMap(np.clip(mag, 0.0, 1.0))
