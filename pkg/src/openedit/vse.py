"""Joint visual-semantic embedding: image and text encoders plus ranking loss.

Images map to a D×S×S spatial feature map whose spatially pooled, L2-normalized
vector lives in the same space as the unit-norm text embeddings. Per-location
vectors are deliberately left unnormalized so their dot products with a text
embedding carry magnitude (they act as location-wise edit strengths downstream).
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .util import to_tensor, vocab_hash

OOV_TOKEN = "<oov>"


class Vocabulary:
    def __init__(self, tokens):
        tokens = list(dict.fromkeys(tokens))
        if OOV_TOKEN not in tokens:
            tokens = [OOV_TOKEN] + tokens
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}

    @classmethod
    def from_captions(cls, captions):
        seen = []
        for cap in captions:
            seen.extend(cap.split())
        return cls(sorted(set(seen)))

    def __len__(self):
        return len(self.tokens)

    def encode(self, words):
        oov = self.index[OOV_TOKEN]
        return [self.index.get(w, oov) for w in words]

    def all_oov(self, words) -> bool:
        return all(w not in self.index for w in words)

    @property
    def hash(self) -> str:
        return vocab_hash(self.tokens)


@dataclass
class FeatureMap:
    """Spatial visual embedding: values is a D×S×S tensor."""

    values: torch.Tensor

    def __post_init__(self):
        if self.values.ndim != 3:
            raise ValueError(f"FeatureMap values must be D×S×S, got shape {tuple(self.values.shape)}")
        if not torch.isfinite(self.values).all():
            raise ValueError("FeatureMap contains non-finite entries")

    @property
    def pooled(self) -> torch.Tensor:
        """Spatial mean vector, L2-normalized to unit length."""
        v = self.values.mean(dim=(1, 2))
        return v / v.norm().clamp_min(1e-12)

    def clone(self) -> "FeatureMap":
        return FeatureMap(self.values.clone())


@dataclass
class TextEmbedding:
    values: torch.Tensor
    source_phrase: str = ""

    def __post_init__(self):
        if self.values.ndim != 1:
            raise ValueError("TextEmbedding values must be a vector")
        if not torch.isfinite(self.values).all():
            raise ValueError("TextEmbedding contains non-finite entries")


class ImageEncoder(nn.Module):
    """Three stride-2 conv stages (64→32→16→8 spatial), a context conv at the
    final grid, and a 1×1 projection.

    GroupNorm keeps encoding independent of batch composition, so single-image
    and batched encodings agree closely.
    """

    def __init__(self, dim: int = 128, widths=(32, 64, 128), groups: int = 8):
        super().__init__()
        self.dim = dim
        self.widths = tuple(widths)
        stages = []
        cin = 3
        for w in widths:
            stages.append(
                nn.Sequential(
                    nn.Conv2d(cin, w, 3, stride=2, padding=1),
                    nn.GroupNorm(min(groups, w), w),
                    nn.ReLU(inplace=True),
                )
            )
            cin = w
        self.stages = nn.ModuleList(stages)
        self.context = nn.Sequential(
            nn.Conv2d(cin, cin, 3, padding=1),
            nn.GroupNorm(min(groups, cin), cin),
            nn.ReLU(inplace=True),
        )
        self.project = nn.Conv2d(cin, dim, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for stage in self.stages:
            x = stage(x)
        return self.project(self.context(x))

    def stage_features(self, x: torch.Tensor):
        """Intermediate stage outputs; the perceptual-distance feature stack."""
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


class TextEncoder(nn.Module):
    def __init__(self, vocab_size: int, dim: int = 128, embed_dim: int = 64, hidden: int = 128):
        super().__init__()
        self.embed = nn.Embedding(vocab_size, embed_dim)
        self.rnn = nn.GRU(embed_dim, hidden, batch_first=True, bidirectional=True)
        self.project = nn.Linear(2 * hidden, dim)

    def forward(self, token_ids: torch.Tensor) -> torch.Tensor:
        """B×T int tensor -> B×D unit-norm embeddings."""
        emb = self.embed(token_ids)
        _, h = self.rnn(emb)
        out = self.project(torch.cat([h[-2], h[-1]], dim=-1))
        return F.normalize(out, dim=-1)


class VseModel(nn.Module):
    """Bundles both encoders with the vocabulary and joint-space config."""

    def __init__(self, vocab: Vocabulary, dim: int = 128, grid: int = 8, margin: float = 0.2, widths=(32, 64, 128)):
        super().__init__()
        self.vocab = vocab
        self.dim = dim
        self.grid = grid
        self.margin = margin
        self.image_encoder = ImageEncoder(dim=dim, widths=widths, groups=min(8, min(widths)))
        self.text_encoder = TextEncoder(len(vocab), dim=dim)

    def expected_size(self) -> int:
        return self.grid * 2 ** len(self.image_encoder.stages)

    def _check_image(self, image: np.ndarray) -> torch.Tensor:
        size = self.expected_size()
        if image.ndim != 3 or image.shape[2] != 3 or image.shape[0] != size or image.shape[1] != size:
            raise ValueError(f"expected {size}×{size}×3 image, got shape {getattr(image, 'shape', None)}")
        return to_tensor(image).to(next(self.parameters()).dtype)

    @torch.no_grad()
    def encode_image(self, image: np.ndarray) -> FeatureMap:
        return FeatureMap(self.image_encoder(self._check_image(image))[0])

    def encode_image_tensor(self, batch: torch.Tensor) -> torch.Tensor:
        """Differentiable path: N×3×H×W -> N×D×S×S."""
        return self.image_encoder(batch)

    def encode_tokens(self, token_lists) -> torch.Tensor:
        """List of token sequences -> B×D unit embeddings (right-padded with OOV)."""
        if any(len(t) == 0 for t in token_lists):
            raise ValueError("cannot encode an empty token sequence")
        width = max(len(t) for t in token_lists)
        oov = self.vocab.index[OOV_TOKEN]
        ids = torch.full((len(token_lists), width), oov, dtype=torch.long)
        lengths = []
        for i, toks in enumerate(token_lists):
            enc = self.vocab.encode(toks)
            ids[i, : len(enc)] = torch.tensor(enc)
            lengths.append(len(enc))
        if len(set(lengths)) == 1:
            return self.text_encoder(ids)
        # variable lengths: run per unique length so padding never leaks into the GRU state
        out = torch.zeros(len(token_lists), self.dim, dtype=next(self.parameters()).dtype)
        for ln in set(lengths):
            sel = [i for i, l in enumerate(lengths) if l == ln]
            out[sel] = self.text_encoder(ids[sel][:, :ln])
        return out

    @torch.no_grad()
    def encode_text(self, phrase: str) -> TextEmbedding:
        words = phrase.split() if isinstance(phrase, str) else list(phrase)
        if not words:
            raise ValueError("cannot encode an empty phrase")
        vec = self.encode_tokens([words])[0]
        return TextEmbedding(values=vec, source_phrase=" ".join(words))

    def pooled(self, feature_batch: torch.Tensor) -> torch.Tensor:
        """N×D×S×S -> N×D unit-norm pooled vectors."""
        v = feature_batch.mean(dim=(2, 3))
        return F.normalize(v, dim=-1)


def triplet_loss(pooled_images: torch.Tensor, texts: torch.Tensor, margin: float = 0.2) -> torch.Tensor:
    """Hardest-negative ranking loss, averaged over the batch.

    Per pair i: max over j≠i of [m + <v_i,t_j> − <v_i,t_i>]_+ plus the same with
    image negatives [m + <v_j,t_i> − <v_i,t_i>]_+.
    """
    if pooled_images.shape[0] < 2:
        raise ValueError("triplet loss needs a batch of at least 2 (no negatives otherwise)")
    if pooled_images.shape != texts.shape:
        raise ValueError("image and text batches must have matching shapes")
    sims = pooled_images @ texts.T
    pos = sims.diag()
    off = ~torch.eye(sims.shape[0], dtype=torch.bool)
    neg_fill = sims.new_tensor(float("-inf"))
    cap_neg = torch.where(off, sims, neg_fill).max(dim=1).values
    img_neg = torch.where(off, sims, neg_fill).max(dim=0).values
    loss = F.relu(margin + cap_neg - pos) + F.relu(margin + img_neg - pos)
    return loss.mean()


def retrieve(query: torch.Tensor, gallery: torch.Tensor, k: int):
    """Indices of the top-k gallery vectors by dot product; ties break low-index-first."""
    if gallery.shape[0] == 0:
        raise ValueError("gallery is empty")
    sims = (gallery @ query).detach().cpu().numpy().astype(np.float64)
    order = np.lexsort((np.arange(len(sims)), -sims))
    return order[: min(k, len(sims))].tolist()
