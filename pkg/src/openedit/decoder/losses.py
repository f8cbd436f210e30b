"""Hinge adversarial loss, discriminator feature matching, and the frozen-encoder
perceptual distance used everywhere a reference implementation would use VGG."""

from dataclasses import dataclass

import torch
import torch.nn.functional as F


@dataclass
class LossWeights:
    lambda_vgg: float = 10.0
    lambda_fm: float = 10.0

    def __post_init__(self):
        if self.lambda_vgg < 0 or self.lambda_fm < 0:
            raise ValueError("loss weights must be non-negative")


def _as_list(x):
    return x if isinstance(x, (list, tuple)) else [x]


def perceptual_distance(img_a: torch.Tensor, img_b: torch.Tensor, encoder) -> torch.Tensor:
    """Sum over encoder stages of the per-element L1 feature distance.

    encoder is a frozen ImageEncoder; inputs are N×3×H×W tensors of equal shape.
    """
    if img_a.shape != img_b.shape:
        raise ValueError(f"image shapes differ: {tuple(img_a.shape)} vs {tuple(img_b.shape)}")
    feats_a = encoder.stage_features(img_a)
    feats_b = encoder.stage_features(img_b)
    total = img_a.new_zeros(())
    for fa, fb in zip(feats_a, feats_b):
        total = total + (fa - fb).abs().mean()
    return total


def discriminator_loss(real_logits, fake_logits) -> torch.Tensor:
    """Hinge loss -E[min(0,-1+D(real))] - E[min(0,-1-D(fake))], averaged over scales."""
    real_logits, fake_logits = _as_list(real_logits), _as_list(fake_logits)
    total = real_logits[0].new_zeros(())
    for r, f in zip(real_logits, fake_logits):
        total = total - torch.clamp(-1.0 + r, max=0.0).mean() - torch.clamp(-1.0 - f, max=0.0).mean()
    loss = total / len(real_logits)
    if not torch.isfinite(loss):
        raise RuntimeError("discriminator loss is not finite")
    return loss


def generator_loss(
    fake_logits,
    fake_feats,
    real_feats,
    fake_img: torch.Tensor,
    real_img: torch.Tensor,
    weights: LossWeights,
    perceptual_fn=None,
):
    """Total generator objective and its per-term breakdown.

    adv: -E[D(fake)]; perceptual: weighted frozen-feature L1 via perceptual_fn;
    fm: per-element L1 between discriminator features of fake and real,
    summed over layers and averaged over scales.
    """
    fake_logits = _as_list(fake_logits)
    adv = torch.stack([-lg.mean() for lg in fake_logits]).mean()

    fm = fake_img.new_zeros(())
    if weights.lambda_fm > 0:
        fake_feats = fake_feats if isinstance(fake_feats[0], (list, tuple)) else [fake_feats]
        real_feats = real_feats if isinstance(real_feats[0], (list, tuple)) else [real_feats]
        for scale_fake, scale_real in zip(fake_feats, real_feats):
            if len(scale_fake) != len(scale_real):
                raise ValueError("feature list lengths differ between real and fake")
            for ff, rf in zip(scale_fake, scale_real):
                fm = fm + (ff - rf.detach()).abs().mean()
        fm = fm / len(fake_feats)

    perc = fake_img.new_zeros(())
    if weights.lambda_vgg > 0:
        if perceptual_fn is None:
            raise ValueError("perceptual_fn required when lambda_vgg > 0")
        perc = perceptual_fn(fake_img, real_img)

    total = adv + weights.lambda_vgg * perc + weights.lambda_fm * fm
    if not torch.isfinite(total):
        raise RuntimeError("generator loss is not finite")
    return total, {"adv": adv, "perceptual": perc, "feature_matching": fm, "total": total}
