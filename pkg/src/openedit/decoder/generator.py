"""Feature-map-to-image generator: residual blocks with edge-conditioned
normalization, nearest-neighbor upsampling between blocks, and additive
per-sample perturbation slots at the block boundaries."""

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..edgemap import EdgeMap
from ..util import to_image
from ..vse import FeatureMap


class SpadeResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, edge_hidden: int = 32):
        super().__init__()
        from .spade import SpadeNorm

        self.norm1 = SpadeNorm(cin, hidden=edge_hidden)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.norm2 = SpadeNorm(cout, hidden=edge_hidden)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else None

    def forward(self, x: torch.Tensor, edge: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.leaky_relu(self.norm1(x, edge), 0.2))
        h = self.conv2(F.leaky_relu(self.norm2(h, edge), 0.2))
        s = x if self.skip is None else self.skip(x)
        return h + s


class Generator(nn.Module):
    """n residual blocks; spatial size doubles between consecutive blocks.

    Perturbations P_1..P_{n-1} are added to the outputs of blocks 1..n-1
    (at each block's own resolution, before upsampling).
    """

    def __init__(self, in_dim: int = 128, in_grid: int = 8, widths=(128, 64, 32, 24), edge_hidden: int = 16):
        super().__init__()
        self.in_dim = in_dim
        self.in_grid = in_grid
        self.widths = tuple(widths)
        blocks = []
        cin = in_dim
        for w in widths:
            blocks.append(SpadeResBlock(cin, w, edge_hidden=edge_hidden))
            cin = w
        self.blocks = nn.ModuleList(blocks)
        self.to_rgb = nn.Conv2d(cin, 3, 3, padding=1)

    @property
    def out_size(self) -> int:
        return self.in_grid * 2 ** (len(self.blocks) - 1)

    @property
    def perturbation_shapes(self):
        """Declared shapes for P_1..P_{n-1}: (channels, h, w) after each block."""
        shapes = []
        res = self.in_grid
        for w in self.widths[:-1]:
            shapes.append((w, res, res))
            res *= 2
        return shapes

    def forward(self, V: torch.Tensor, edge: torch.Tensor, perturbations=None) -> torch.Tensor:
        if V.ndim != 4 or V.shape[1] != self.in_dim or V.shape[2:] != (self.in_grid, self.in_grid):
            raise ValueError(
                f"generator expects N×{self.in_dim}×{self.in_grid}×{self.in_grid} features, got {tuple(V.shape)}"
            )
        if perturbations is not None and len(perturbations) != len(self.blocks) - 1:
            raise ValueError(
                f"expected {len(self.blocks) - 1} perturbation tensors, got {len(perturbations)}"
            )
        x = V
        for i, block in enumerate(self.blocks):
            if i > 0:
                x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = block(x, edge)
            if perturbations is not None and i < len(self.blocks) - 1:
                p = perturbations[i]
                if tuple(p.shape[-3:]) != self.perturbation_shapes[i]:
                    raise ValueError(
                        f"perturbation shape {tuple(p.shape[-3:])} does not match insertion point "
                        f"after block {i + 1} (expected {self.perturbation_shapes[i]})"
                    )
                # all-zero slots are skipped so P=0 is bitwise-identical to P=None
                if p.count_nonzero() > 0 or p.requires_grad:
                    x = x + p
        return torch.sigmoid(self.to_rgb(F.leaky_relu(x, 0.2)))


def edge_tensor(edges, size: int, like: torch.Tensor) -> torch.Tensor:
    """EdgeMap/array/None -> N-compatible 1×1×H×W tensor (zeros when None)."""
    if edges is None:
        return torch.zeros(1, 1, size, size, dtype=like.dtype)
    values = edges.values if isinstance(edges, EdgeMap) else np.asarray(edges)
    return torch.from_numpy(np.ascontiguousarray(values)).to(like.dtype).reshape(1, 1, *values.shape)


@torch.no_grad()
def decode(generator: Generator, V: FeatureMap, edges=None, perturbations=None) -> np.ndarray:
    """Single-image inference path: eval-mode stats, returns H×W×3 in [0,1]."""
    was_training = generator.training
    generator.eval()
    try:
        vt = V.values.unsqueeze(0)
        et = edge_tensor(edges, generator.out_size, vt)
        plist = None
        if perturbations is not None:
            plist = [p.unsqueeze(0) if p.ndim == 3 else p for p in perturbations]
        out = generator(vt, et, plist)
    finally:
        generator.train(was_training)
    return to_image(out)
