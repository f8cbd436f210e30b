"""Edge-conditioned normalization: standardize per channel, then scale/bias
fields predicted from the (resized) edge map by two-layer conv heads."""

import torch
import torch.nn as nn
import torch.nn.functional as F


class SpadeNorm(nn.Module):
    """Batch-statistic normalization whose affine parameters are per-pixel
    functions of the edge map.

    The gamma head is initialized to output exactly 1 and the beta head exactly
    0, so a fresh site is plain standardization. Running averages make
    single-image inference well-defined.
    """

    def __init__(self, channels: int, hidden: int = 16, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.register_buffer("running_mean", torch.zeros(channels))
        self.register_buffer("running_sigma", torch.ones(channels))
        self.gamma_head = nn.Sequential(
            nn.Conv2d(1, hidden, 3, padding=1), nn.ReLU(inplace=True), nn.Conv2d(hidden, channels, 3, padding=1)
        )
        self.beta_head = nn.Sequential(
            nn.Conv2d(1, hidden, 3, padding=1), nn.ReLU(inplace=True), nn.Conv2d(hidden, channels, 3, padding=1)
        )
        nn.init.zeros_(self.gamma_head[2].weight)
        nn.init.ones_(self.gamma_head[2].bias)
        nn.init.zeros_(self.beta_head[2].weight)
        nn.init.zeros_(self.beta_head[2].bias)

    def standardize(self, x: torch.Tensor) -> torch.Tensor:
        if self.training:
            mu = x.mean(dim=(0, 2, 3))
            sigma = x.std(dim=(0, 2, 3), unbiased=False)
            with torch.no_grad():
                self.running_mean.mul_(1 - self.momentum).add_(self.momentum * mu.detach())
                self.running_sigma.mul_(1 - self.momentum).add_(self.momentum * sigma.detach())
        else:
            mu = self.running_mean.to(x.dtype)
            sigma = self.running_sigma.to(x.dtype)
        sigma = torch.where(sigma < self.eps, sigma + self.eps, sigma)
        return (x - mu.view(1, -1, 1, 1)) / sigma.view(1, -1, 1, 1)

    def forward(self, x: torch.Tensor, edge: torch.Tensor) -> torch.Tensor:
        if edge.ndim != 4 or edge.shape[1] != 1:
            raise ValueError(f"edge map must be N×1×H×W, got {tuple(edge.shape)}")
        xhat = self.standardize(x)
        if edge.shape[2:] != x.shape[2:]:
            edge = F.interpolate(edge, size=x.shape[2:], mode="nearest")
        return self.gamma_head(edge) * xhat + self.beta_head(edge)
