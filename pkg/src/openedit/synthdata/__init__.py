from .scene import (
    BACKGROUNDS,
    COLORS,
    COLOR_HUES,
    SHAPES,
    SceneError,
    SceneRecord,
    SceneSpec,
    ShapeSpec,
    caption_for,
    check_mask_fidelity,
    generate_scene,
    parse_caption,
    sample_spec,
    shape_coverage,
    shape_mask,
)
from .rle import rle_decode, rle_encode
from .dataset import (
    CorpusScene,
    DatasetConfig,
    EditCase,
    derive_edit_cases,
    generate_dataset,
    load_split,
)
