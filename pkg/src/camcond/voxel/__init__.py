"""Voxel-grid machinery behind the 2D/3D transformer condition."""

from .attention import (
    RayAttentionParams,
    attend_2d_to_3d,
    attend_3d_to_2d,
    init_attention_params,
    time_embedding,
)
from .conv3d import conv3d_encoder_decoder, init_conv3d_params, receptive_radius
from .grid import (
    SparseIncidence,
    VoxelGrid,
    build_grid,
    build_incidence,
    decode_incidence,
    encode_incidence,
    traverse,
    traverse_rays,
)

__all__ = [
    "RayAttentionParams",
    "SparseIncidence",
    "VoxelGrid",
    "attend_2d_to_3d",
    "attend_3d_to_2d",
    "build_grid",
    "build_incidence",
    "conv3d_encoder_decoder",
    "decode_incidence",
    "encode_incidence",
    "init_attention_params",
    "init_conv3d_params",
    "receptive_radius",
    "time_embedding",
    "traverse",
    "traverse_rays",
]
