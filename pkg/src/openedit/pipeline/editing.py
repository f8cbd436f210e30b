"""The inference path: encode, manipulate, (optionally) optimize, decode."""

from dataclasses import dataclass, field

import numpy as np

from ..decoder.generator import Generator, decode
from ..edgemap import extract_edges
from ..grounding import EditInstruction, apply_instruction
from ..sampleopt import OptConfig, OptResult, PerturbationSet, optimize_perturbations
from ..util import seed_all
from ..vse import VseModel
from .checkpoint import load_generator, load_vse


@dataclass
class EditResult:
    image_out: np.ndarray
    reconstruction: np.ndarray
    grounding: np.ndarray  # S×S, min-max normalized for display
    loss_trace: list = None
    warnings: list = field(default_factory=list)
    diverged: bool = False


@dataclass
class SweepFrame:
    alpha: float
    image: np.ndarray


class EditPipeline:
    """Frozen VSE + generator bundled behind the edit/sweep operations."""

    def __init__(self, vse_model: VseModel, generator: Generator, use_edges: bool = True):
        self.vse = vse_model
        self.generator = generator
        self.use_edges = use_edges
        self.vse.eval()
        self.generator.eval()

    @classmethod
    def from_checkpoints(cls, vse_path, decoder_path) -> "EditPipeline":
        vse_model = load_vse(vse_path)
        generator, cfg = load_generator(decoder_path)
        return cls(vse_model, generator, use_edges=bool(cfg.get("use_edges", True)))

    def edges_for(self, image: np.ndarray):
        return extract_edges(image) if self.use_edges else None

    def check_phrases(self, instr: EditInstruction) -> list:
        warnings = []
        for phrase in (instr.source_phrase, instr.target_phrase):
            if phrase and self.vse.vocab.all_oov(phrase.split()):
                warnings.append(f"all tokens out of vocabulary in phrase: {phrase!r}")
        return warnings

    def reconstruct(self, image: np.ndarray) -> np.ndarray:
        V = self.vse.encode_image(image)
        return decode(self.generator, V, self.edges_for(image))

    def edit(
        self,
        image: np.ndarray,
        instr: EditInstruction,
        use_opt: bool = False,
        opt_config: OptConfig = None,
        seed: int = 0,
        perturbations=None,
    ) -> EditResult:
        """Apply one instruction. `perturbations` may carry a precomputed set
        (e.g. a cached session), in which case use_opt is ignored."""
        instr.validate()
        seed_all(seed)
        warnings = self.check_phrases(instr)
        edges = self.edges_for(image)
        V = self.vse.encode_image(image)
        edited, gmap = apply_instruction(V, instr, self.vse.encode_text)

        trace = None
        diverged = False
        if use_opt and perturbations is None:
            opt: OptResult = optimize_perturbations(
                image, instr, self.vse, self.generator, opt_config or OptConfig(), edges=edges
            )
            perturbations = opt.perturbations.tensors
            trace = opt.trace
            diverged = opt.diverged
            if opt.recon_only:
                warnings.append(f"{instr.kind} has no inverse phrase; optimized with reconstruction loss only")
            if opt.diverged:
                warnings.append("sample optimization diverged; using best perturbations found")

        image_out = decode(self.generator, edited, edges, perturbations)
        reconstruction = decode(self.generator, V, edges, perturbations)
        return EditResult(
            image_out=image_out,
            reconstruction=reconstruction,
            grounding=gmap.normalized().numpy(),
            loss_trace=trace,
            warnings=warnings,
            diverged=diverged,
        )

    def sweep_alpha(
        self,
        image: np.ndarray,
        instr: EditInstruction,
        grid,
        use_opt: bool = False,
        opt_config: OptConfig = None,
        seed: int = 0,
    ):
        """One decoded frame per alpha, ascending. With use_opt the
        perturbations are optimized once, at the largest alpha, and shared."""
        grid = sorted(float(a) for a in grid)
        if not grid:
            raise ValueError("alpha grid is empty")
        if grid[0] < 0:
            raise ValueError("alpha values must be >= 0")
        instr.validate()
        seed_all(seed)
        edges = self.edges_for(image)
        V = self.vse.encode_image(image)

        perturbations = None
        trace = None
        if use_opt:
            strongest = EditInstruction(
                kind=instr.kind,
                source_phrase=instr.source_phrase,
                target_phrase=instr.target_phrase,
                sign=instr.sign,
                alpha=grid[-1],
            )
            opt = optimize_perturbations(
                image, strongest, self.vse, self.generator, opt_config or OptConfig(), edges=edges
            )
            perturbations = opt.perturbations.tensors
            trace = opt.trace

        frames = []
        for alpha in grid:
            step_instr = EditInstruction(
                kind=instr.kind,
                source_phrase=instr.source_phrase,
                target_phrase=instr.target_phrase,
                sign=instr.sign,
                alpha=alpha,
            )
            edited, _ = apply_instruction(V, step_instr, self.vse.encode_text)
            frames.append(SweepFrame(alpha=alpha, image=decode(self.generator, edited, edges, perturbations)))
        return frames, trace
