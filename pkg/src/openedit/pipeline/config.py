"""Run configuration for the two training stages."""

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path


@dataclass
class RunConfig:
    corpus_root: str
    stage: str  # "vse" | "decoder"
    run_dir: str
    steps: int = 1000
    batch_size: int = 32
    seed: int = 0
    eval_every: int = 100
    log_every: int = 25
    # joint embedding space
    dim: int = 32
    grid: int = 8
    margin: float = 0.2
    lr: float = 5e-4
    init_from: str = ""  # warm-start checkpoint (vse stage)
    feature_norm_reg: float = 5e-3  # shrinks uninformative feature-map locations
    # decoder stage
    vse_checkpoint: str = ""
    use_edges: bool = True
    lr_g: float = 1e-4
    lr_d: float = 4e-4
    lambda_vgg: float = 10.0
    lambda_fm: float = 10.0
    val_limit: int = 64

    def __post_init__(self):
        if self.stage not in ("vse", "decoder"):
            raise ValueError(f"stage must be 'vse' or 'decoder', got {self.stage!r}")
        if self.steps < 0 or self.batch_size < 2:
            raise ValueError("steps must be >= 0 and batch_size >= 2")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})
