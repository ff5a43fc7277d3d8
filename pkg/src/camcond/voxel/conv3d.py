"""Small residual 3D convolutional encoder-decoder over voxel features."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F

from ..errors import ContractError

DTYPE = torch.float64


def init_conv3d_params(channels: int, depth: int = 2, seed: int = 0, scale: float = 1.0) -> dict:
    """Weights for ``depth`` encoder convs, a bottleneck, ``depth`` decoder convs and an output conv."""
    g = torch.Generator().manual_seed(seed)
    names = [f"enc{l}" for l in range(depth)] + ["mid"] + [f"dec{l}" for l in range(depth)] + ["out"]
    params = {}
    for name in names:
        std = scale / math.sqrt(27 * channels)
        params[f"{name}.w"] = torch.randn(channels, channels, 3, 3, 3, generator=g, dtype=DTYPE) * std
        params[f"{name}.b"] = torch.randn(channels, generator=g, dtype=DTYPE) * 0.1 * scale
    return params


def _conv(x, params, name):
    return F.conv3d(x, params[f"{name}.w"], params[f"{name}.b"], padding=1)


def receptive_radius(depth: int) -> int:
    """Chebyshev radius (in voxels) bounding the support of an impulse response.

    A 3x3x3 conv at level ``l`` grows the support by ``2**l`` voxels; each
    2x average pool out of level ``l`` adds at most ``2**l`` for cell
    alignment; nearest upsampling adds nothing.
    """
    enc = sum(2**l for l in range(depth))
    pools = sum(2**l for l in range(depth))
    dec = sum(2**l for l in range(depth))
    return enc + pools + 2**depth + dec + 1


def conv3d_encoder_decoder(voxels: torch.Tensor, params: dict, resolution, depth: int = 2) -> torch.Tensor:
    """Map (V, C) voxel features to (V, C) through a U-shaped conv stack.

    The input is added back to the output, so zero weights and biases give
    the identity map.
    """
    nx, ny, nz = resolution
    if any(r % (2**depth) for r in resolution):
        raise ContractError(f"grid resolution {tuple(resolution)} not divisible by 2^{depth}")
    c = voxels.shape[-1]
    x = voxels.reshape(nx, ny, nz, c).permute(3, 0, 1, 2)[None]
    skips = []
    h = x
    for l in range(depth):
        h = F.silu(_conv(h, params, f"enc{l}"))
        skips.append(h)
        h = F.avg_pool3d(h, 2)
    h = F.silu(_conv(h, params, "mid"))
    for l in reversed(range(depth)):
        h = F.interpolate(h, scale_factor=2, mode="nearest")
        h = F.silu(_conv(h, params, f"dec{l}")) + skips[l]
    y = x + _conv(h, params, "out")
    return y[0].permute(1, 2, 3, 0).reshape(-1, c)
