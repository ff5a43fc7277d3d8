import numpy as np
import pytest
import torch

from camcond.errors import ContractError
from camcond.voxel import conv3d_encoder_decoder, init_conv3d_params, receptive_radius


def test_zero_weights_identity():
    params = {k: torch.zeros_like(v) for k, v in init_conv3d_params(4, 2).items()}
    x = torch.randn(8**3, 4, dtype=torch.float64)
    assert torch.equal(conv3d_encoder_decoder(x, params, (8, 8, 8), 2), x)


def test_translation_equivariance_on_interior():
    # pooling makes the stack equivariant to shifts by the coarsest cell, 2**depth voxels
    depth, res, shift = 2, 48, 4
    params = init_conv3d_params(3, depth, seed=1)
    x = torch.randn(res, res, res, 3, dtype=torch.float64)
    xs = torch.roll(x, shift, dims=0)
    y = conv3d_encoder_decoder(x.reshape(-1, 3), params, (res,) * 3, depth).reshape(x.shape)
    ys = conv3d_encoder_decoder(xs.reshape(-1, 3), params, (res,) * 3, depth).reshape(x.shape)
    # voxels whose receptive field avoids both the zero padding and the wrapped slab
    r = receptive_radius(depth)
    inner = slice(r + shift, res - r)
    assert inner.start < inner.stop
    assert torch.allclose(ys[inner, inner, inner], torch.roll(y, shift, dims=0)[inner, inner, inner], atol=1e-12)
    # a one-voxel shift is not an exact symmetry of the pooled stack
    y1 = conv3d_encoder_decoder(torch.roll(x, 1, dims=0).reshape(-1, 3), params, (res,) * 3, depth)
    y1 = y1.reshape(x.shape)
    assert not torch.allclose(y1[inner, inner, inner], torch.roll(y, 1, dims=0)[inner, inner, inner], atol=1e-6)


def test_impulse_support_within_receptive_radius():
    depth, res = 2, 32
    params = init_conv3d_params(2, depth, seed=3)
    params = {k: (v if k.endswith(".w") else torch.zeros_like(v)) for k, v in params.items()}
    x = torch.zeros(res, res, res, 2, dtype=torch.float64)
    c = (13, 17, 14)
    x[c] = 1.0
    y = conv3d_encoder_decoder(x.reshape(-1, 2), params, (res,) * 3, depth).reshape(x.shape)
    nz = np.argwhere(y.abs().sum(-1).numpy() > 0)
    radius = np.abs(nz - np.array(c)).max()
    assert 0 < radius <= receptive_radius(depth)


def test_resolution_must_be_divisible():
    params = init_conv3d_params(2, 2)
    with pytest.raises(ContractError):
        conv3d_encoder_decoder(torch.zeros(6**3, 2, dtype=torch.float64), params, (6, 6, 6), 2)
