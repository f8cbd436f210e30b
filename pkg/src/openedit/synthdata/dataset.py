"""Corpus generation and loading: PNGs + one JSONL metadata record per scene."""

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..util import save_png, load_png
from .rle import rle_encode, rle_decode
from .scene import COLORS, SceneError, SceneRecord, SceneSpec, ShapeSpec, generate_scene, sample_spec

SPLITS = ("train", "val", "test")


@dataclass
class DatasetConfig:
    root: str
    counts: dict = field(default_factory=lambda: {"train": 1024, "val": 128, "test": 128})
    canvas_size: int = 64
    base_seed: int = 0
    two_shape_prob: float = 0.5

    def split_seeds(self, split: str) -> range:
        """Disjoint seed blocks per split, derived from base_seed."""
        offset = self.base_seed
        for name in SPLITS:
            n = int(self.counts.get(name, 0))
            if name == split:
                return range(offset, offset + n)
            offset += n
        raise ValueError(f"unknown split {split!r}")


def _record_json(record_id: str, scene: SceneRecord) -> dict:
    spec = scene.spec
    shapes = []
    for shape, mask in zip(spec.shapes, scene.masks):
        x0, y0, x1, y1 = shape.bbox_frac()
        shapes.append(
            {
                "kind": shape.kind,
                "color": shape.color,
                "cx": shape.cx,
                "cy": shape.cy,
                "half": shape.half,
                "bbox": [x0, y0, x1, y1],
                "mask_rle": rle_encode(mask),
                "mask_area": int(mask.sum()),
            }
        )
    return {
        "id": record_id,
        "caption": scene.caption,
        "shapes": shapes,
        "seed": spec.rng_seed,
        "background": spec.background,
    }


def generate_dataset(config: DatasetConfig) -> dict:
    """Write the corpus under config.root; returns per-split record counts."""
    root = Path(config.root)
    seen_seeds = set()
    written = {}
    for split in SPLITS:
        seeds = config.split_seeds(split)
        overlap = seen_seeds.intersection(seeds)
        if overlap:
            raise ValueError(f"duplicate seed across splits: {sorted(overlap)[:3]}")
        seen_seeds.update(seeds)

        img_dir = root / split / "images"
        try:
            img_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise OSError(f"cannot create corpus directory {img_dir}: {e}") from e
        lines = []
        for i, seed in enumerate(seeds):
            spec = sample_spec(seed, canvas_size=config.canvas_size, two_shape_prob=config.two_shape_prob)
            scene = generate_scene(spec)
            record_id = f"{split}-{i:05d}"
            save_png(scene.image, img_dir / f"{record_id}.png")
            lines.append(json.dumps(_record_json(record_id, scene), sort_keys=True))
        meta = root / split / "meta.jsonl"
        meta.write_text("\n".join(lines) + ("\n" if lines else ""))
        written[split] = len(lines)
    return written


@dataclass
class CorpusScene:
    """One loaded corpus record; the image is read lazily from disk."""

    id: str
    caption: str
    shapes: list
    seed: int
    background: str
    image_path: str
    _image: np.ndarray = None

    @property
    def image(self) -> np.ndarray:
        if self._image is None:
            self._image = load_png(self.image_path)
        return self._image

    def mask(self, index: int) -> np.ndarray:
        return rle_decode(self.shapes[index]["mask_rle"])

    def phrase(self, index: int) -> str:
        s = self.shapes[index]
        return f"{s['color']} {s['kind']}"


def load_split(root, split: str) -> list:
    meta = Path(root) / split / "meta.jsonl"
    if not meta.exists():
        raise FileNotFoundError(f"corpus metadata not found: {meta}")
    scenes = []
    with open(meta) as f:
        for line in f:
            rec = json.loads(line)
            scenes.append(
                CorpusScene(
                    id=rec["id"],
                    caption=rec["caption"],
                    shapes=rec["shapes"],
                    seed=rec["seed"],
                    background=rec["background"],
                    image_path=str(Path(root) / split / "images" / f"{rec['id']}.png"),
                )
            )
    return scenes


@dataclass(frozen=True)
class EditCase:
    """A scripted edit against one scene, with the ground-truth region."""

    scene_id: str
    kind: str  # change | remove | relative
    source_phrase: str
    target_phrase: str
    shape_index: int

    def __post_init__(self):
        if self.kind == "change":
            src, tgt = self.source_phrase.split(), self.target_phrase.split()
            if len(src) != 2 or len(tgt) != 2 or sum(a != b for a, b in zip(src, tgt)) != 1:
                raise ValueError(
                    f"change case must alter exactly one attribute word: {self.source_phrase!r} -> {self.target_phrase!r}"
                )
        elif self.kind in ("remove", "relative"):
            if self.target_phrase:
                raise ValueError(f"{self.kind} case carries no target phrase")
        else:
            raise ValueError(f"unknown edit kind {self.kind!r}")


def derive_edit_cases(scenes, kinds=("change",)) -> list:
    """Enumerate edit cases per scene: color changes, removals, relatives.

    Change cases swap the shape's color for every other color in the
    vocabulary. Phrases are always unambiguous because scenes never contain
    two shapes sharing both kind and color.
    """
    kinds = set(kinds)
    cases = []
    for scene in scenes:
        for idx, shape in enumerate(scene.shapes):
            phrase = scene.phrase(idx)
            if "change" in kinds:
                for color in COLORS:
                    if color == shape["color"]:
                        continue
                    cases.append(
                        EditCase(
                            scene_id=scene.id,
                            kind="change",
                            source_phrase=phrase,
                            target_phrase=f"{color} {shape['kind']}",
                            shape_index=idx,
                        )
                    )
            if "remove" in kinds:
                cases.append(
                    EditCase(scene.id, "remove", phrase, "", idx)
                )
            if "relative" in kinds:
                cases.append(
                    EditCase(scene.id, "relative", phrase, "", idx)
                )
    return cases
