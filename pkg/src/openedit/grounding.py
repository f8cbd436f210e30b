"""Text-guided feature-map edits: soft grounding plus three vector-arithmetic operators.

Every operator works per spatial location on v = V[:, i, j]:

    change:   v - a*<v,t1>*t1 + a*<v,t1>*t2
    remove:   v - a*<v,t>*t
    relative: v ± a*<v,t>*t

The grounding coefficient <v,t> is used raw (it may be negative); alpha is the
global strength knob. All operators return fresh maps and never mutate input.
"""

from dataclasses import dataclass

import torch

from .vse import FeatureMap, TextEmbedding


@dataclass
class GroundingMap:
    values: torch.Tensor  # S×S, unnormalized dot products
    phrase: str = ""

    def normalized(self) -> torch.Tensor:
        """Min-max scaled copy for heatmap display; constant maps become zeros."""
        g = self.values
        lo, hi = g.min(), g.max()
        if (hi - lo) < 1e-12:
            return torch.zeros_like(g)
        return (g - lo) / (hi - lo)


@dataclass
class EditInstruction:
    kind: str  # change | remove | relative
    source_phrase: str
    target_phrase: str = ""
    sign: int = 1
    alpha: float = 1.0

    def validate(self) -> None:
        problems = []
        if self.kind not in ("change", "remove", "relative"):
            problems.append(f"unknown kind {self.kind!r}")
        if not self.source_phrase:
            problems.append("source_phrase is required")
        if self.kind == "change" and not self.target_phrase:
            problems.append("change requires a target_phrase")
        if self.kind in ("remove", "relative") and self.target_phrase:
            problems.append(f"{self.kind} takes no target_phrase")
        if self.kind == "relative" and self.sign not in (1, -1):
            problems.append("relative requires sign +1 or -1")
        if self.alpha < 0:
            problems.append("alpha must be >= 0")
        if problems:
            raise ValueError("invalid edit instruction: " + "; ".join(problems))


def _check(V: FeatureMap, t: TextEmbedding) -> None:
    if t.values.shape[0] != V.values.shape[0]:
        raise ValueError(
            f"embedding dim {t.values.shape[0]} does not match feature channels {V.values.shape[0]}"
        )
    if not torch.isfinite(V.values).all() or not torch.isfinite(t.values).all():
        raise ValueError("non-finite inputs")


def grounding_map(V: FeatureMap, t: TextEmbedding) -> GroundingMap:
    """Per-location dot products <v^{ij}, t>; no normalization or clamping."""
    _check(V, t)
    g = torch.einsum("dhw,d->hw", V.values, t.values)
    return GroundingMap(values=g, phrase=t.source_phrase)


def change_attribute(V: FeatureMap, t1: TextEmbedding, t2: TextEmbedding, alpha: float) -> FeatureMap:
    _check(V, t1)
    _check(V, t2)
    if alpha == 0 or torch.equal(t1.values, t2.values):
        return V.clone()
    coef = alpha * torch.einsum("dhw,d->hw", V.values, t1.values)
    delta = coef.unsqueeze(0) * (t2.values - t1.values).reshape(-1, 1, 1)
    return FeatureMap(V.values + delta)


def remove_concept(V: FeatureMap, t: TextEmbedding, alpha: float) -> FeatureMap:
    _check(V, t)
    if alpha == 0:
        return V.clone()
    coef = alpha * torch.einsum("dhw,d->hw", V.values, t.values)
    return FeatureMap(V.values - coef.unsqueeze(0) * t.values.reshape(-1, 1, 1))


def relative_attribute(V: FeatureMap, t: TextEmbedding, alpha: float, sign: int = 1) -> FeatureMap:
    _check(V, t)
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    if alpha == 0:
        return V.clone()
    coef = alpha * torch.einsum("dhw,d->hw", V.values, t.values)
    return FeatureMap(V.values + sign * coef.unsqueeze(0) * t.values.reshape(-1, 1, 1))


def apply_instruction(V: FeatureMap, instr: EditInstruction, text_encoder):
    """Encode phrases, dispatch to the matching operator.

    Returns (edited map, grounding map of the source phrase). text_encoder is
    any callable phrase -> TextEmbedding (typically VseModel.encode_text).
    """
    instr.validate()
    t1 = text_encoder(instr.source_phrase)
    gmap = grounding_map(V, t1)
    if instr.kind == "change":
        t2 = text_encoder(instr.target_phrase)
        edited = change_attribute(V, t1, t2, instr.alpha)
    elif instr.kind == "remove":
        edited = remove_concept(V, t1, instr.alpha)
    else:
        edited = relative_attribute(V, t1, instr.alpha, instr.sign)
    return edited, gmap
