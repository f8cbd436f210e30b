"""Test-time optimization of additive decoder perturbations.

Encoder and decoder weights stay frozen; only the zero-initialized perturbation
tensors between decoder blocks are optimized, under a reconstruction loss, a
cycle loss (edit forth and back through re-encoding of the edited image), and
a quadratic size penalty on the perturbations themselves.
"""

import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .decoder.generator import Generator, edge_tensor
from .decoder.losses import perceptual_distance
from .grounding import EditInstruction, change_attribute
from .util import model_hash, to_tensor
from .vse import FeatureMap, VseModel


@dataclass
class PerturbationSet:
    tensors: list

    @classmethod
    def zeros(cls, generator: Generator, requires_grad: bool = False) -> "PerturbationSet":
        dtype = next(generator.parameters()).dtype
        return cls(
            [torch.zeros(shape, dtype=dtype, requires_grad=requires_grad) for shape in generator.perturbation_shapes]
        )

    def detached(self) -> "PerturbationSet":
        return PerturbationSet([p.detach().clone() for p in self.tensors])

    def norm_sq(self) -> torch.Tensor:
        """Sum over tensors of the squared L2 norm (differentiable)."""
        total = self.tensors[0].new_zeros(()) if self.tensors else torch.zeros(())
        for p in self.tensors:
            total = total + (p**2).sum()
        return total

    def all_zero(self) -> bool:
        return all(p.detach().count_nonzero() == 0 for p in self.tensors)


@dataclass
class OptConfig:
    steps: int = 100
    lr: float = 1e-2
    perceptual_weight: float = 1.0  # lambda inside the rec/cyc losses
    reg_weight: float = 1e-3
    rec_weight: float = 1.0
    cyc_weight: float = 1.0
    max_seconds: float = 0.0  # 0 disables the wall clock cap

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        for name in ("lr", "perceptual_weight", "reg_weight", "rec_weight", "cyc_weight", "max_seconds"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass
class CycleOutputs:
    recon: torch.Tensor  # I_r, 1×3×H×W
    edited: torch.Tensor  # I_m
    cycled: torch.Tensor  # I_c (equals edited in recon-only mode)
    recon_only: bool


def _apply_change(V: FeatureMap, t_src, t_tgt, alpha: float) -> FeatureMap:
    return change_attribute(V, t_src, t_tgt, alpha)


def cycle_images(
    image: np.ndarray,
    instr: EditInstruction,
    vse_model: VseModel,
    generator: Generator,
    perturbations: PerturbationSet,
    edges=None,
) -> CycleOutputs:
    """Decode I_r, I_m and the re-encoded cycle image I_c with P applied.

    Only change-instructions have an inverse; other kinds fall back to
    reconstruction-only and flag it.
    """
    instr.validate()
    vse_model.eval()
    generator.eval()
    V = vse_model.encode_image(image)
    et = edge_tensor(edges, generator.out_size, V.values)
    plist = [p.unsqueeze(0) for p in perturbations.tensors]
    recon = generator(V.values.unsqueeze(0), et, plist)
    if instr.kind != "change":
        return CycleOutputs(recon=recon, edited=recon, cycled=recon, recon_only=True)
    if instr.alpha == 0:
        # identity edit: nothing to cycle, and re-encoding would needlessly
        # push the images through the encoder's imperfect inverse
        return CycleOutputs(recon=recon, edited=recon, cycled=recon, recon_only=False)
    t1 = vse_model.encode_text(instr.source_phrase)
    t2 = vse_model.encode_text(instr.target_phrase)
    V_m = _apply_change(V, t1, t2, instr.alpha)
    edited = generator(V_m.values.unsqueeze(0), et, plist)
    V_back = FeatureMap(vse_model.encode_image_tensor(edited)[0])
    V_c = _apply_change(V_back, t2, t1, instr.alpha)
    cycled = generator(V_c.values.unsqueeze(0), et, plist)
    return CycleOutputs(recon=recon, edited=edited, cycled=cycled, recon_only=False)


def sample_losses(
    image_t: torch.Tensor,
    recon_t: torch.Tensor,
    cycled_t,
    perturbations: PerturbationSet,
    config: OptConfig,
    encoder,
) -> dict:
    """Reconstruction, cycle and regularization terms plus the weighted total.

    Image L1 terms are mean absolute pixel differences; the perceptual term uses
    the frozen image encoder. cycled_t may be None (reconstruction-only mode).
    """
    if recon_t.shape != image_t.shape:
        raise ValueError(f"image shapes differ: {tuple(recon_t.shape)} vs {tuple(image_t.shape)}")
    lam = config.perceptual_weight
    rec = (recon_t - image_t).abs().mean() + lam * perceptual_distance(recon_t, image_t, encoder)
    if cycled_t is not None:
        if cycled_t.shape != image_t.shape:
            raise ValueError("cycle image shape mismatch")
        cyc = (cycled_t - image_t).abs().mean() + lam * perceptual_distance(cycled_t, image_t, encoder)
    else:
        cyc = image_t.new_zeros(())
    reg = perturbations.norm_sq()
    total = config.rec_weight * rec + config.cyc_weight * cyc + config.reg_weight * reg
    return {"rec": rec, "cyc": cyc, "reg": reg, "total": total}


@dataclass
class OptResult:
    perturbations: PerturbationSet
    trace: list = field(default_factory=list)
    diverged: bool = False
    recon_only: bool = False
    final_total: float = float("nan")


def optimize_perturbations(
    image: np.ndarray,
    instr: EditInstruction,
    vse_model: VseModel,
    generator: Generator,
    config: OptConfig = None,
    edges=None,
) -> OptResult:
    """Run config.steps Adam updates on the perturbations only.

    Encoder/decoder parameters are asserted unchanged via state hashes. On
    divergence (non-finite total or >10× the initial total) the best-so-far
    perturbations are returned with the diverged flag set.
    """
    config = config or OptConfig()
    instr.validate()
    hash_vse = model_hash(vse_model)
    hash_gen = model_hash(generator)
    vse_model.eval()
    generator.eval()

    recon_only = instr.kind != "change"
    with torch.no_grad():
        V = vse_model.encode_image(image)
        t1 = vse_model.encode_text(instr.source_phrase)
        t2 = vse_model.encode_text(instr.target_phrase) if instr.kind == "change" else None
        V_m = _apply_change(V, t1, t2, instr.alpha) if not recon_only else None

    image_t = to_tensor(image).to(V.values.dtype)
    et = edge_tensor(edges, generator.out_size, V.values)
    P = PerturbationSet.zeros(generator, requires_grad=True)
    result = OptResult(perturbations=P, recon_only=recon_only)
    if config.steps == 0:
        result.perturbations = P.detached()
        result.final_total = float("nan")
        _assert_frozen(vse_model, generator, hash_vse, hash_gen)
        return result

    optimizer = torch.optim.Adam(P.tensors, lr=config.lr)
    encoder = vse_model.image_encoder

    def evaluate_total():
        plist = [p.unsqueeze(0) for p in P.tensors]
        recon = generator(V.values.unsqueeze(0), et, plist)
        cycled = None
        if not recon_only:
            if instr.alpha == 0:
                cycled = recon  # identity edit: the cycle degenerates
            else:
                edited = generator(V_m.values.unsqueeze(0), et, plist)
                V_back = FeatureMap(vse_model.encode_image_tensor(edited)[0])
                V_c = _apply_change(V_back, t2, t1, instr.alpha)
                cycled = generator(V_c.values.unsqueeze(0), et, plist)
        return sample_losses(image_t, recon, cycled, P, config, encoder)["total"]

    best = P.detached()
    best_total = float("inf")
    initial = None
    deadline = time.monotonic() + config.max_seconds if config.max_seconds > 0 else None
    for _ in range(config.steps):
        if deadline is not None and time.monotonic() > deadline:
            break
        total = evaluate_total()
        value = float(total.detach())
        result.trace.append(value)
        if initial is None:
            initial = value
        if not np.isfinite(value) or (initial > 0 and value > 10.0 * initial):
            result.diverged = True
            break
        if value < best_total:
            best_total = value
            best = P.detached()
        optimizer.zero_grad()
        total.backward()
        optimizer.step()

    if result.diverged:
        result.perturbations = best
        result.final_total = best_total
    else:
        with torch.no_grad():
            result.final_total = float(evaluate_total())
            if result.final_total < best_total:
                best_total = result.final_total
                best = P.detached()
        result.perturbations = P.detached()

    _assert_frozen(vse_model, generator, hash_vse, hash_gen)
    return result


def _assert_frozen(vse_model, generator, hash_vse: str, hash_gen: str) -> None:
    if model_hash(vse_model) != hash_vse:
        raise RuntimeError("sample optimization mutated encoder parameters")
    if model_hash(generator) != hash_gen:
        raise RuntimeError("sample optimization mutated decoder parameters")
