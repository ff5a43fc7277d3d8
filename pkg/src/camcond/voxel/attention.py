"""Sparse ray-traced attention between per-frame pixel features and a voxel grid.

Attention is restricted to pixel/voxel pairs whose ray crosses the voxel.
Both directions are computed edge-wise over the incidence lists with a
segmented softmax, so cost scales with the number of ray segments rather
than with pixels x voxels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np
import torch

from ..errors import ContractError
from .grid import SparseIncidence

SEED_RNG = 0x5EED
DTYPE = torch.float64


def time_embedding(frame_index: int, dim: int) -> np.ndarray:
    """Sinusoidal encoding: ``[2k] = sin(i / 10000^(2k/dim))``, ``[2k+1] = cos(...)``."""
    if dim < 2 or dim % 2:
        raise ContractError(f"time embedding dim must be even and >= 2, got {dim}")
    k = np.arange(dim // 2, dtype=np.float64)
    angle = frame_index / np.power(10000.0, 2 * k / dim)
    out = np.empty(dim)
    out[0::2] = np.sin(angle)
    out[1::2] = np.cos(angle)
    return out


def time_embeddings(frames, dim: int) -> torch.Tensor:
    return torch.tensor(np.stack([time_embedding(int(f), dim) for f in frames]), dtype=DTYPE)


@dataclass
class RayAttentionParams:
    """Projections for both directions plus the per-voxel query seed.

    Pixel features have ``pixel_dim`` channels and voxel features
    ``voxel_dim`` (the grid's feature_dim).
    """

    seed: torch.Tensor  # (V, voxel_dim) query seeds for 2D -> 3D
    q3: torch.Tensor  # (voxel_dim, voxel_dim)
    k3: torch.Tensor  # (pixel_dim, voxel_dim)
    v3: torch.Tensor  # (pixel_dim, voxel_dim)
    q2: torch.Tensor  # (pixel_dim, voxel_dim)
    k2: torch.Tensor  # (voxel_dim, voxel_dim)
    v2: torch.Tensor  # (voxel_dim, pixel_dim)
    heads: int = 1

    def tensors(self) -> list[torch.Tensor]:
        return [getattr(self, f.name) for f in fields(self) if f.name != "heads"]

    def requires_grad_(self, flag: bool = True) -> "RayAttentionParams":
        for t in self.tensors():
            t.requires_grad_(flag)
        return self

    @property
    def pixel_dim(self) -> int:
        return self.k3.shape[0]

    @property
    def voxel_dim(self) -> int:
        return self.k3.shape[1]


def init_attention_params(n_voxels: int, pixel_dim: int, voxel_dim: int, heads: int = 1, seed: int = SEED_RNG):
    if voxel_dim % heads or pixel_dim % heads:
        raise ContractError(f"heads={heads} must divide pixel_dim and voxel_dim")
    g = torch.Generator().manual_seed(seed)

    def lin(a, b):
        return torch.randn(a, b, generator=g, dtype=DTYPE) / math.sqrt(a)

    return RayAttentionParams(
        seed=torch.randn(n_voxels, voxel_dim, generator=g, dtype=DTYPE),
        q3=lin(voxel_dim, voxel_dim),
        k3=lin(pixel_dim, voxel_dim),
        v3=lin(pixel_dim, voxel_dim),
        q2=lin(pixel_dim, voxel_dim),
        k2=lin(voxel_dim, voxel_dim),
        v2=lin(voxel_dim, pixel_dim),
        heads=heads,
    )


def _segment_softmax_sum(query_of_edge, scores, values, n_queries):
    """Per-query softmax over its edges and weighted sum of edge values.

    scores: (E, heads); values: (E, heads, dh). Returns (out, weights).
    Queries with no edges output zeros.
    """
    heads = scores.shape[1]
    idx = query_of_edge[:, None].expand(-1, heads)
    m = torch.full((n_queries, heads), -math.inf, dtype=scores.dtype)
    m = m.scatter_reduce(0, idx, scores.detach(), reduce="amax", include_self=True)
    ex = torch.exp(scores - m[query_of_edge])
    denom = torch.zeros((n_queries, heads), dtype=scores.dtype).index_add(0, query_of_edge, ex)
    w = ex / denom[query_of_edge]
    out = torch.zeros((n_queries, heads, values.shape[-1]), dtype=values.dtype)
    out = out.index_add(0, query_of_edge, w[..., None] * values)
    return out, w


def _as_tensor(x):
    return x if isinstance(x, torch.Tensor) else torch.tensor(np.asarray(x), dtype=DTYPE)


def _flatten_pixels(pixel_features, inc: SparseIncidence):
    x = _as_tensor(pixel_features)
    if x.shape[:3] != (inc.frames, inc.height, inc.width):
        raise ContractError(
            f"pixel features {tuple(x.shape)} do not match incidence "
            f"({inc.frames}, {inc.height}, {inc.width}, F)"
        )
    return x.reshape(inc.n_rays, x.shape[-1])


def attend_2d_to_3d(
    pixel_features,
    inc: SparseIncidence,
    params: RayAttentionParams,
    frame_ids=None,
    return_weights: bool = False,
):
    """Lift (frames, H', W', pixel_dim) features into (V, voxel_dim) voxel features.

    A sinusoidal time embedding of each frame index (``frame_ids``, default
    ``0..frames-1``) is added to the pixel features before both the key and
    value projections.
    """
    x = _flatten_pixels(pixel_features, inc)
    if x.shape[1] != params.pixel_dim or params.seed.shape != (inc.grid.n_voxels, params.voxel_dim):
        raise ContractError("attention parameter shapes do not match features / grid")
    frame_ids = range(inc.frames) if frame_ids is None else frame_ids
    temb = time_embeddings(frame_ids, params.pixel_dim)
    x = x + temb.repeat_interleave(inc.width * inc.height, dim=0)

    h = params.heads
    dh = params.voxel_dim // h
    q = (params.seed @ params.q3).reshape(-1, h, dh)
    k = (x @ params.k3).reshape(-1, h, dh)
    v = (x @ params.v3).reshape(-1, h, dh)
    # voxel-major edge order; within a voxel, ascending ray id
    e_vox = torch.from_numpy(inc.voxel[inc.voxel_segments])
    e_ray = torch.from_numpy(inc.voxel_rays)
    scores = (q[e_vox] * k[e_ray]).sum(-1) / math.sqrt(dh)
    out, w = _segment_softmax_sum(e_vox, scores, v[e_ray], inc.grid.n_voxels)
    out = out.reshape(inc.grid.n_voxels, params.voxel_dim)
    if return_weights:
        return out, (e_vox, e_ray, w)
    return out


def attend_3d_to_2d(
    voxel_features,
    inc: SparseIncidence,
    params: RayAttentionParams,
    queries=None,
    return_weights: bool = False,
):
    """Project (V, voxel_dim) features back to (frames, H', W', pixel_dim).

    ``queries`` are the per-pixel features the 2D array had before lifting
    (zeros if omitted, which makes attention uniform along each ray).
    """
    vf = _as_tensor(voxel_features)
    if vf.shape != (inc.grid.n_voxels, params.voxel_dim):
        raise ContractError(f"voxel features {tuple(vf.shape)} do not match grid/params")
    if queries is None:
        xq = torch.zeros((inc.n_rays, params.pixel_dim), dtype=DTYPE)
    else:
        xq = _flatten_pixels(queries, inc)

    h = params.heads
    dh = params.voxel_dim // h
    q = (xq @ params.q2).reshape(-1, h, dh)
    k = (vf @ params.k2).reshape(-1, h, dh)
    v = (vf @ params.v2).reshape(-1, h, params.pixel_dim // h)
    # ray-major edge order, ascending t along each ray
    e_ray = torch.from_numpy(inc.segment_rays())
    e_vox = torch.from_numpy(inc.voxel)
    scores = (q[e_ray] * k[e_vox]).sum(-1) / math.sqrt(dh)
    out, w = _segment_softmax_sum(e_ray, scores, v[e_vox], inc.n_rays)
    out = out.reshape(inc.frames, inc.height, inc.width, params.pixel_dim)
    if return_weights:
        return out, (e_ray, e_vox, w)
    return out
