"""Procedural one/two-shape scenes with captions and exact ground-truth masks.

Shapes are rendered with analytic inside-tests, supersampled 4×4 per pixel so
boundaries get a 1-pixel anti-aliased rim. The stored mask is the set of
pixels whose center lies inside the shape.
"""

from dataclasses import dataclass, field

import numpy as np

from ..util import mean_hue, rgb_to_hue, hue_distance

SHAPES = ("circle", "square", "triangle")

COLORS = {
    "red": (0.90, 0.10, 0.10),
    "green": (0.10, 0.80, 0.10),
    "blue": (0.10, 0.10, 0.90),
    "yellow": (0.90, 0.90, 0.10),
    "purple": (0.60, 0.10, 0.90),
    "orange": (0.90, 0.50, 0.10),
}

BACKGROUNDS = {
    "white": (1.0, 1.0, 1.0),
    "light-gray": (0.82, 0.82, 0.82),
    "dark-gray": (0.35, 0.35, 0.35),
}

COLOR_HUES = {name: float(rgb_to_hue(np.array(rgb))) for name, rgb in COLORS.items()}

SUPERSAMPLE = 4


class SceneError(ValueError):
    """A SceneSpec violates one of its invariants."""


@dataclass(frozen=True)
class ShapeSpec:
    """One shape in fractional canvas coordinates (center + half-extent)."""

    kind: str
    color: str
    cx: float
    cy: float
    half: float

    def bbox_frac(self):
        return (self.cx - self.half, self.cy - self.half, self.cx + self.half, self.cy + self.half)


@dataclass(frozen=True)
class SceneSpec:
    shapes: tuple
    background: str = "white"
    canvas_size: int = 64
    rng_seed: int = 0

    def validate(self) -> None:
        if not 1 <= len(self.shapes) <= 2:
            raise SceneError(f"shape_count must be 1 or 2, got {len(self.shapes)}")
        if self.background not in BACKGROUNDS:
            raise SceneError(f"unknown background {self.background!r}")
        for s in self.shapes:
            if s.kind not in SHAPES:
                raise SceneError(f"unknown shape kind {s.kind!r}")
            if s.color not in COLORS:
                raise SceneError(f"unknown color {s.color!r}")
            x0, y0, x1, y1 = s.bbox_frac()
            if x0 < 0 or y0 < 0 or x1 > 1 or y1 > 1:
                raise SceneError(f"shape {s.color} {s.kind} not fully inside the canvas")
            if s.half <= 0:
                raise SceneError("shape half-extent must be positive")
        if len(self.shapes) == 2:
            a, b = self.shapes
            if a.kind == b.kind and a.color == b.color:
                raise SceneError(f"two shapes share kind and color: {a.color} {a.kind}")
            ax0, ay0, ax1, ay1 = a.bbox_frac()
            bx0, by0, bx1, by1 = b.bbox_frac()
            if ax0 < bx1 and bx0 < ax1 and ay0 < by1 and by0 < ay1:
                raise SceneError("shape bounding boxes overlap")


@dataclass
class SceneRecord:
    image: np.ndarray  # H×W×3 float in [0,1]
    caption: str
    masks: list = field(default_factory=list)  # one H×W bool array per shape
    spec: SceneSpec = None

    @property
    def tokens(self):
        return self.caption.split()


def _inside(shape: ShapeSpec, xs: np.ndarray, ys: np.ndarray, size: int) -> np.ndarray:
    """Analytic point-in-shape test for arrays of pixel-space coordinates."""
    cx, cy, h = shape.cx * size, shape.cy * size, shape.half * size
    if shape.kind == "circle":
        return (xs - cx) ** 2 + (ys - cy) ** 2 <= h**2
    if shape.kind == "square":
        return (np.abs(xs - cx) <= h) & (np.abs(ys - cy) <= h)
    if shape.kind == "triangle":
        # upward triangle with vertices (cx, cy-h), (cx-h, cy+h), (cx+h, cy+h)
        below_top = ys <= cy + h
        left = (ys - (cy - h)) >= (xs - cx) * 2.0  # edge (cx,cy-h)-(cx+h,cy+h)
        right = (ys - (cy - h)) >= (cx - xs) * 2.0  # edge (cx,cy-h)-(cx-h,cy+h)
        return below_top & left & right
    raise SceneError(f"unknown shape kind {shape.kind!r}")


def shape_mask(shape: ShapeSpec, size: int) -> np.ndarray:
    """Boolean mask of pixel centers inside the shape."""
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    return _inside(shape, xs, ys, size)


def shape_coverage(shape: ShapeSpec, size: int) -> np.ndarray:
    """Fractional pixel coverage via 4×4 supersampling; soft 1-pixel boundary."""
    n = SUPERSAMPLE
    offs = (np.arange(n) + 0.5) / n
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    cov = np.zeros((size, size), dtype=np.float64)
    for oy in offs:
        for ox in offs:
            cov += _inside(shape, xs + ox, ys + oy, size)
    return cov / (n * n)


def caption_for(spec: SceneSpec) -> str:
    parts = [f"a {s.color} {s.kind}" for s in spec.shapes]
    return " and ".join(parts)


def parse_caption(caption: str):
    """Inverse of caption_for: returns [(color, kind), ...] or raises."""
    pairs = []
    for part in caption.split(" and "):
        words = part.split()
        if len(words) != 3 or words[0] != "a" or words[1] not in COLORS or words[2] not in SHAPES:
            raise SceneError(f"caption does not parse: {caption!r}")
        pairs.append((words[1], words[2]))
    return pairs


def generate_scene(spec: SceneSpec) -> SceneRecord:
    """Render a SceneSpec into image + caption + masks. Pure in the spec."""
    spec.validate()
    size = spec.canvas_size
    img = np.empty((size, size, 3), dtype=np.float64)
    img[:] = BACKGROUNDS[spec.background]
    masks = []
    for s in spec.shapes:
        cov = shape_coverage(s, size)[..., None]
        img = img * (1.0 - cov) + np.array(COLORS[s.color]) * cov
        masks.append(shape_mask(s, size))
    return SceneRecord(
        image=img.astype(np.float32),
        caption=caption_for(spec),
        masks=masks,
        spec=spec,
    )


def sample_spec(seed: int, canvas_size: int = 64, two_shape_prob: float = 0.5) -> SceneSpec:
    """Draw a random valid SceneSpec; deterministic in the seed."""
    rng = np.random.default_rng(seed)
    count = 2 if rng.random() < two_shape_prob else 1
    background = list(BACKGROUNDS)[rng.integers(len(BACKGROUNDS))]
    lo, hi = (0.12, 0.17) if count == 2 else (0.13, 0.21)
    for _ in range(500):
        shapes = []
        for _ in range(count):
            half = float(rng.uniform(lo, hi))
            margin = half + 2.0 / canvas_size
            shapes.append(
                ShapeSpec(
                    kind=SHAPES[rng.integers(len(SHAPES))],
                    color=list(COLORS)[rng.integers(len(COLORS))],
                    cx=float(rng.uniform(margin, 1 - margin)),
                    cy=float(rng.uniform(margin, 1 - margin)),
                    half=half,
                )
            )
        if len(shapes) == 2:
            a, b = shapes
            if _bbox_close(a, b, pad=2.0 / canvas_size) or (a.kind == b.kind and a.color == b.color):
                continue
        break
    else:
        raise SceneError("could not place shapes without overlap")
    spec = SceneSpec(shapes=tuple(shapes), background=background, canvas_size=canvas_size, rng_seed=seed)
    spec.validate()
    return spec


def _bbox_close(a: ShapeSpec, b: ShapeSpec, pad: float) -> bool:
    ax0, ay0, ax1, ay1 = a.bbox_frac()
    bx0, by0, bx1, by1 = b.bbox_frac()
    return ax0 - pad < bx1 and bx0 - pad < ax1 and ay0 - pad < by1 and by0 - pad < ay1


def check_mask_fidelity(record: SceneRecord, hue_tol: float = 12.0) -> None:
    """Raise if a mask is empty, overlaps another, or disagrees with its color."""
    taken = np.zeros(record.image.shape[:2], dtype=bool)
    for shape, mask in zip(record.spec.shapes, record.masks):
        if not mask.any():
            raise SceneError(f"empty mask for {shape.color} {shape.kind}")
        if (mask & taken).any():
            raise SceneError("masks overlap")
        taken |= mask
        got = mean_hue(record.image[mask])
        want = COLOR_HUES[shape.color]
        if hue_distance(got, want) > hue_tol:
            raise SceneError(
                f"mean hue {got:.1f} under mask differs from {shape.color} ({want:.1f})"
            )
