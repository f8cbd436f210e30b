"""Multi-scale patch discriminator exposing intermediate features for the
feature-matching loss."""

import torch
import torch.nn as nn
import torch.nn.functional as F


class PatchDiscriminator(nn.Module):
    def __init__(self, widths=(32, 64, 128)):
        super().__init__()
        layers = []
        cin = 3
        for w in widths:
            layers.append(nn.Conv2d(cin, w, 4, stride=2, padding=1))
            cin = w
        self.convs = nn.ModuleList(layers)
        self.head = nn.Conv2d(cin, 1, 4, stride=1, padding=1)

    def forward(self, x: torch.Tensor):
        """Returns (patch logits, [shallow..deep feature maps])."""
        feats = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.2)
            feats.append(x)
        return self.head(x), feats


class MultiScalePatchDiscriminator(nn.Module):
    """One patch discriminator at full and one at half resolution."""

    def __init__(self, widths=(32, 64, 128)):
        super().__init__()
        self.scales = nn.ModuleList([PatchDiscriminator(widths), PatchDiscriminator(widths)])

    def forward(self, x: torch.Tensor):
        """Returns lists (logits per scale, feature lists per scale)."""
        logits, features = [], []
        for i, disc in enumerate(self.scales):
            inp = x if i == 0 else F.avg_pool2d(x, 2)
            lg, ft = disc(inp)
            logits.append(lg)
            features.append(ft)
        return logits, features
