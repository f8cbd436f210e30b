"""Shared helpers: seeding, image IO, color math, parameter hashing."""

import hashlib
import io
import random

import numpy as np
import torch
from PIL import Image


def seed_all(seed: int) -> None:
    """Seed python, numpy and torch RNGs from one integer."""
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)


def to_tensor(image: np.ndarray) -> torch.Tensor:
    """H×W×3 float array in [0,1] -> 1×3×H×W float tensor."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected H×W×3 image, got shape {image.shape}")
    return torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1))).float().unsqueeze(0)


def to_image(tensor: torch.Tensor) -> np.ndarray:
    """1×3×H×W or 3×H×W tensor -> H×W×3 float array, clipped to [0,1]."""
    t = tensor.detach()
    if t.ndim == 4:
        t = t[0]
    return np.clip(t.cpu().numpy().transpose(1, 2, 0), 0.0, 1.0).astype(np.float32)


def png_bytes(image: np.ndarray) -> bytes:
    """Encode an H×W×3 float image in [0,1] as PNG bytes.

    All PNG output goes through here so byte-level comparisons across
    interfaces (CLI vs service) see identical encoder settings.
    """
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    u8 = (arr * 255.0).round().astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(u8).save(buf, format="PNG")
    return buf.getvalue()


def save_png(image: np.ndarray, path) -> None:
    with open(path, "wb") as f:
        f.write(png_bytes(image))


def load_png(path_or_bytes) -> np.ndarray:
    """Read a PNG into an H×W×3 float array in [0,1]."""
    if isinstance(path_or_bytes, (bytes, bytearray)):
        img = Image.open(io.BytesIO(path_or_bytes))
    else:
        img = Image.open(path_or_bytes)
    return np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0


def rgb_to_hue(rgb: np.ndarray) -> np.ndarray:
    """Hue in degrees [0, 360) for an (..., 3) float array. Gray pixels get hue 0."""
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    delta = mx - mn
    hue = np.zeros_like(mx)
    safe = delta > 1e-12
    d = np.where(safe, delta, 1.0)
    is_r = safe & (mx == r)
    is_g = safe & (mx == g) & ~is_r
    is_b = safe & ~is_r & ~is_g
    hue = np.where(is_r, 60.0 * (((g - b) / d) % 6.0), hue)
    hue = np.where(is_g, 60.0 * ((b - r) / d + 2.0), hue)
    hue = np.where(is_b, 60.0 * ((r - g) / d + 4.0), hue)
    return hue % 360.0


def hue_distance(a, b) -> np.ndarray:
    """Circular distance between hue angles in degrees, in [0, 180]."""
    d = np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) % 360.0
    return np.minimum(d, 360.0 - d)


def mean_hue(rgb_pixels: np.ndarray) -> float:
    """Circular mean hue (degrees) over an (N, 3) array of pixels."""
    hues = np.deg2rad(rgb_to_hue(rgb_pixels))
    s, c = np.sin(hues).mean(), np.cos(hues).mean()
    return float(np.rad2deg(np.arctan2(s, c)) % 360.0)


def model_hash(module: torch.nn.Module) -> str:
    """SHA-256 over all parameters and buffers; detects any mutation."""
    h = hashlib.sha256()
    for name, t in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def vocab_hash(tokens) -> str:
    return hashlib.sha256("\n".join(tokens).encode()).hexdigest()
