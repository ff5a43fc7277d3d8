"""Toy-scale conditioned video UNet with a ControlNet-style control branch.

The network is small enough to run and differentiate on a CPU but keeps the
connection pattern of a camera-conditioned video denoiser:

* a two-stage encoder (latent -> ``channels[0]`` -> ``channels[1]`` at half
  resolution) whose second stage is a temporal block: self-attention across
  frames, an optional raw-extrinsics residual block, then cross-attention to a
  fixed context;
* a decoder that consumes the encoder's per-stage residuals;
* a control branch: a parameter clone of the encoder with every condition
  attached (extrinsics block ``X``, ray images ``C``, reprojected video ``P``,
  ray-traced 3D block ``R``), whose residuals pass through zero-initialized
  1x1 convolutions before being added to the base encoder's residuals.

Feature videos are float64 tensors shaped (frames, height, width, channels).
Parameters are plain ``dict[str, Tensor]`` so they can be flattened for
finite-difference checks.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .camera import CameraTrajectory
from .errors import ContractError, FormatError
from .voxel.attention import attend_2d_to_3d, attend_3d_to_2d, init_attention_params
from .voxel.conv3d import conv3d_encoder_decoder, init_conv3d_params
from .voxel.grid import SparseIncidence, build_grid, build_incidence

DTYPE = torch.float64
CONDITIONS = ("X", "C", "P", "R")
COND_CHANNELS = {"C": 6, "P": 3}


@dataclass(frozen=True)
class ToyConfig:
    latent_channels: int = 4
    channels: tuple = (8, 16)
    context_tokens: int = 4
    context_dim: int = 16
    conditions: frozenset = frozenset(CONDITIONS)
    vae_factor: int = 4
    grid_resolution: int = 8
    grid_extent: float = 8.0
    grid_features: int = 8
    grid_depth: int = 2
    heads: int = 1

    def __post_init__(self):
        conds = frozenset(self.conditions)
        unknown = conds - set(CONDITIONS)
        if unknown:
            raise ContractError(f"unknown conditions {sorted(unknown)}; choose from {CONDITIONS}")
        object.__setattr__(self, "conditions", conds)
        object.__setattr__(self, "channels", tuple(self.channels))
        if len(self.channels) != 2:
            raise ContractError("toy encoder has exactly two stages")

    @classmethod
    def from_dict(cls, doc: dict) -> "ToyConfig":
        kw = dict(doc)
        if "conditions" in kw:
            kw["conditions"] = frozenset(kw["conditions"])
        if "channels" in kw:
            kw["channels"] = tuple(kw["channels"])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ContractError(f"bad toy config: {exc}") from None


@dataclass
class ToyInputs:
    latent: torch.Tensor  # (frames, h, w, latent_channels)
    trajectory: CameraTrajectory
    context: torch.Tensor  # (context_tokens, context_dim)
    conditions: dict = field(default_factory=dict)  # name -> (frames, H, W, c) image-res video
    incidence: SparseIncidence = None


# -- building blocks ---------------------------------------------------------------


def _to_nchw(x):
    return x.permute(0, 3, 1, 2)


def _to_nhwc(x):
    return x.permute(0, 2, 3, 1)


def conv2d(x, params, name, stride=1):
    """3x3 (or 1x1) convolution on a (frames, H, W, C) feature video."""
    w = params[f"{name}.w"]
    pad = w.shape[-1] // 2
    return _to_nhwc(F.conv2d(_to_nchw(x), w, params[f"{name}.b"], stride=stride, padding=pad))


def encode_condition(video, factor: int) -> torch.Tensor:
    """Average-pool an image-resolution condition video down to latent resolution."""
    v = torch.as_tensor(np.asarray(video) if not isinstance(video, torch.Tensor) else video, dtype=DTYPE)
    return _to_nhwc(F.avg_pool2d(_to_nchw(v), factor))


def extrinsics_matrix_rows(trajectory: CameraTrajectory) -> torch.Tensor:
    """(frames, 12): the row-major ``[R | t]`` entries of each camera."""
    return torch.tensor(np.stack([p.extrinsics.matrix_3x4().ravel() for p in trajectory]), dtype=DTYPE)


def extrinsics_residual_block(features, trajectory, params) -> torch.Tensor:
    """``features + FFN(concat(features, 12 extrinsic entries))`` per pixel and frame."""
    e = trajectory if isinstance(trajectory, torch.Tensor) else extrinsics_matrix_rows(trajectory)
    if e.shape[0] != features.shape[0]:
        raise ContractError(f"{e.shape[0]} extrinsics for {features.shape[0]} frames")
    fr, h, w, _ = features.shape
    z = torch.cat([features, e[:, None, None, :].expand(fr, h, w, e.shape[1])], dim=-1)
    hidden = F.silu(z @ params["w1"] + params["b1"])
    return features + hidden @ params["w2"] + params["b2"]


def condition_input_injection(base_latent, condition_videos, params, names=None) -> torch.Tensor:
    """``conv_base(base_latent) + sum_k conv_k(condition_k)``, each condition with its own conv."""
    names = names or [f"cond{k}" for k in range(len(condition_videos))]
    out = conv2d(base_latent, params, "base")
    for name, cond in zip(names, condition_videos):
        if cond.shape[:3] != base_latent.shape[:3]:
            raise ContractError(f"condition {name} shape {tuple(cond.shape)} != latent {tuple(base_latent.shape)}")
        out = out + conv2d(cond, params, name)
    return out


def temporal_self_attention(x, params, prefix="tsa"):
    """Attention across frames, independently at every pixel."""
    q = x @ params[f"{prefix}.q"]
    k = x @ params[f"{prefix}.k"]
    v = x @ params[f"{prefix}.v"]
    # (frames, H, W, C) -> scores (H, W, frames, frames)
    scores = torch.einsum("ahwc,bhwc->hwab", q, k) / math.sqrt(q.shape[-1])
    att = torch.softmax(scores, dim=-1)
    out = torch.einsum("hwab,bhwc->ahwc", att, v)
    return x + out @ params[f"{prefix}.o"]


def cross_attention(x, context, params, prefix="xattn"):
    q = x @ params[f"{prefix}.q"]
    k = context @ params[f"{prefix}.k"]
    v = context @ params[f"{prefix}.v"]
    att = torch.softmax(q @ k.T / math.sqrt(q.shape[-1]), dim=-1)
    return x + (att @ v) @ params[f"{prefix}.o"]


def ray_traced_block(x, incidence, params) -> torch.Tensor:
    """2D -> 3D lift, 3D conv encoder-decoder, 3D -> 2D projection."""
    att = params["R.attention"]
    vox = attend_2d_to_3d(x, incidence, att)
    vox = conv3d_encoder_decoder(vox, params["R.conv"], incidence.grid.resolution, params["R.depth"])
    return attend_3d_to_2d(vox, incidence, att, queries=x)


# -- parameter initialization ----------------------------------------------------


def _randn(g, *shape, std=1.0):
    return torch.randn(*shape, generator=g, dtype=DTYPE) * std


def _conv_params(g, cin, cout, k=3):
    return {"w": _randn(g, cout, cin, k, k, std=1 / math.sqrt(cin * k * k)), "b": _randn(g, cout, std=0.1)}


def _put(params, name, d):
    for k, v in d.items():
        params[f"{name}.{k}"] = v


def init_encoder_params(cfg: ToyConfig, g: torch.Generator) -> dict:
    c0, c1 = cfg.channels
    p = {}
    _put(p, "conv_in", _conv_params(g, cfg.latent_channels, c0))
    _put(p, "stage1", _conv_params(g, c0, c0))
    _put(p, "down", _conv_params(g, c0, c1))
    for pre, kdim in (("tsa", c1), ("xattn", cfg.context_dim)):
        p[f"{pre}.q"] = _randn(g, c1, c1, std=1 / math.sqrt(c1))
        p[f"{pre}.k"] = _randn(g, kdim, c1, std=1 / math.sqrt(kdim))
        p[f"{pre}.v"] = _randn(g, kdim, c1, std=1 / math.sqrt(kdim))
        p[f"{pre}.o"] = _randn(g, c1, c1, std=0.5 / math.sqrt(c1))
    return p


def init_decoder_params(cfg: ToyConfig, g: torch.Generator) -> dict:
    c0, c1 = cfg.channels
    p = {}
    _put(p, "up", _conv_params(g, c1, c0))
    _put(p, "conv_out", _conv_params(g, c0, cfg.latent_channels))
    return p


def init_extrinsics_params(channels: int, g: torch.Generator, hidden: int = None) -> dict:
    hidden = hidden or 2 * channels
    return {
        "w1": _randn(g, channels + 12, hidden, std=1 / math.sqrt(channels + 12)),
        "b1": _randn(g, hidden, std=0.1),
        "w2": _randn(g, hidden, channels, std=1 / math.sqrt(hidden)),
        "b2": _randn(g, channels, std=0.1),
    }


def init_control_params(cfg: ToyConfig, g: torch.Generator) -> dict:
    """Condition-specific layers of the control branch (not the cloned encoder)."""
    c0, c1 = cfg.channels
    p = {}
    for name in ("C", "P"):
        if name in cfg.conditions:
            _put(p, f"cond_{name}", _conv_params(g, COND_CHANNELS[name], c0))
    if "X" in cfg.conditions:
        _put(p, "X", init_extrinsics_params(c1, g))
    return p


def init_rblock_params(cfg: ToyConfig, n_voxels: int, seed: int = 0) -> dict:
    c1 = cfg.channels[1]
    return {
        "R.attention": init_attention_params(n_voxels, c1, cfg.grid_features, cfg.heads, seed=seed ^ 0x5EED),
        "R.conv": init_conv3d_params(cfg.grid_features, cfg.grid_depth, seed=seed + 1, scale=0.5),
        "R.depth": cfg.grid_depth,
    }


def init_zero_convs(cfg: ToyConfig) -> dict:
    p = {}
    for k, c in enumerate(cfg.channels):
        p[f"zc{k}.w"] = torch.zeros(c, c, 1, 1, dtype=DTYPE)
        p[f"zc{k}.b"] = torch.zeros(c, dtype=DTYPE)
    return p


# -- forward passes --------------------------------------------------------------


def encoder_forward(params, inputs: ToyInputs, control=None, cfg: ToyConfig = None) -> list:
    """Per-stage residuals of the encoder; with ``control`` params, attach the conditions."""
    x = inputs.latent
    conds = cfg.conditions if (control is not None and cfg is not None) else frozenset()
    names, videos = [], []
    for name in ("C", "P"):
        if name in conds:
            if name not in inputs.conditions:
                raise ContractError(f"condition {name} enabled but no {name} video supplied")
            names.append(f"cond_{name}")
            videos.append(encode_condition(inputs.conditions[name], cfg.vae_factor))
    inj = {"base.w": params["conv_in.w"], "base.b": params["conv_in.b"]}
    if names:
        inj.update({k: v for k, v in control.items() if k.startswith("cond_")})
    h0 = condition_input_injection(x, videos, inj, names)
    r1 = h0 + conv2d(F.silu(h0), params, "stage1")

    h = F.silu(conv2d(r1, params, "down", stride=2))
    t = temporal_self_attention(h, params)
    if "X" in conds:
        t = extrinsics_residual_block(t, inputs.trajectory, {k[2:]: v for k, v in control.items() if k.startswith("X.")})
    t = cross_attention(t, inputs.context, params)
    if "R" in conds:
        if inputs.incidence is None:
            raise ContractError("condition R enabled but no incidence supplied")
        t = t + ray_traced_block(h, inputs.incidence, control)
    return [r1, t]


def apply_zero_convs(residuals, zero_conv_params) -> list:
    return [conv2d(r, zero_conv_params, f"zc{k}") for k, r in enumerate(residuals)]


def control_branch_forward(encoder_params, control_params, zero_conv_params, inputs, conditions=None, cfg=None):
    """Residual contributions of the control branch, one per encoder stage."""
    if conditions is not None:
        inputs = ToyInputs(inputs.latent, inputs.trajectory, inputs.context, conditions, inputs.incidence)
    residuals = encoder_forward(encoder_params, inputs, control=control_params, cfg=cfg)
    n_zc = len([k for k in zero_conv_params if k.endswith(".w")])
    if n_zc != len(residuals):
        raise ContractError(f"{n_zc} zero convolutions for {len(residuals)} encoder stages")
    return apply_zero_convs(residuals, zero_conv_params)


def decoder_forward(params, residuals) -> torch.Tensor:
    r1, r2 = residuals
    up = _to_nhwc(F.interpolate(_to_nchw(r2), scale_factor=2, mode="nearest"))
    d = F.silu(conv2d(up, params, "up")) + r1
    return conv2d(F.silu(d), params, "conv_out")


def merged_forward(base_params, control_outputs, inputs: ToyInputs, return_merged: bool = False):
    """Base encoder, per-stage addition of control residuals, base decoder."""
    residuals = encoder_forward(base_params, inputs)
    if control_outputs is not None:
        if len(control_outputs) != len(residuals):
            raise ContractError(f"{len(control_outputs)} control residuals for {len(residuals)} stages")
        residuals = [r + c for r, c in zip(residuals, control_outputs)]
    out = decoder_forward(base_params, residuals)
    return (out, residuals) if return_merged else out


class ToyModel:
    """Bundle of base, cloned-encoder, control and zero-conv parameters."""

    def __init__(self, cfg: ToyConfig, seed: int = 0, n_voxels: int = None):
        self.cfg = cfg
        g = torch.Generator().manual_seed(seed)
        self.base = {**init_encoder_params(cfg, g), **init_decoder_params(cfg, g)}
        enc_keys = [k for k in self.base if not k.startswith(("up.", "conv_out."))]
        self.encoder_clone = {k: self.base[k].clone() for k in enc_keys}
        self.control = init_control_params(cfg, g)
        if "R" in cfg.conditions:
            n_voxels = n_voxels or cfg.grid_resolution**3
            self.control.update(init_rblock_params(cfg, n_voxels, seed))
        self.zero_convs = init_zero_convs(cfg)

    def base_forward(self, inputs: ToyInputs) -> torch.Tensor:
        return merged_forward(self.base, None, inputs)

    def control_outputs(self, inputs: ToyInputs) -> list:
        return control_branch_forward(self.encoder_clone, self.control, self.zero_convs, inputs, cfg=self.cfg)

    def forward(self, inputs: ToyInputs, return_merged: bool = False):
        return merged_forward(self.base, self.control_outputs(inputs), inputs, return_merged)

    def randomize_zero_convs(self, seed: int, std: float = 0.3) -> None:
        """Replace the zero convolutions with random weights (as after training)."""
        g = torch.Generator().manual_seed(seed)
        for k, v in self.zero_convs.items():
            self.zero_convs[k] = _randn(g, *v.shape, std=std)

    def parameter_groups(self) -> dict:
        """Differentiable tensors keyed by ``group/name``."""
        out = {}
        for group, params in (("base", self.base), ("clone", self.encoder_clone), ("control", self.control), ("zero", self.zero_convs)):
            for k, v in params.items():
                if isinstance(v, torch.Tensor):
                    out[f"{group}/{k}"] = v
                elif hasattr(v, "tensors"):
                    for i, t in enumerate(v.tensors()):
                        out[f"{group}/{k}.{i}"] = t
                elif isinstance(v, dict):
                    for kk, t in v.items():
                        out[f"{group}/{k}.{kk}"] = t
        return out


def make_toy_inputs(cfg: ToyConfig, trajectory: CameraTrajectory, seed: int = 0,
                    ray_video=None, reproj_video=None) -> ToyInputs:
    """Random latent/context plus the requested condition videos for ``trajectory``."""
    g = torch.Generator().manual_seed(seed + 1)
    f = len(trajectory)
    H, W = trajectory.height, trajectory.width
    if H % (2 * cfg.vae_factor) or W % (2 * cfg.vae_factor):
        raise ContractError(f"image size {W}x{H} must be divisible by {2 * cfg.vae_factor}")
    h, w = H // cfg.vae_factor, W // cfg.vae_factor
    latent = _randn(g, f, h, w, cfg.latent_channels)
    context = _randn(g, cfg.context_tokens, cfg.context_dim)
    conds = {}
    if "C" in cfg.conditions:
        conds["C"] = ray_video if ray_video is not None else _rand_uniform(g, f, H, W, 6)
    if "P" in cfg.conditions:
        conds["P"] = reproj_video if reproj_video is not None else _rand_uniform(g, f, H, W, 3)
    inc = None
    if "R" in cfg.conditions:
        grid = build_grid(trajectory, cfg.grid_resolution, cfg.grid_extent, cfg.grid_features)
        inc = build_incidence(trajectory, grid, downsample=2 * cfg.vae_factor)
    return ToyInputs(latent, trajectory, context, conds, inc)


def _rand_uniform(g, *shape):
    return torch.rand(*shape, generator=g, dtype=DTYPE)


__all__ = [
    "ToyConfig",
    "ToyInputs",
    "ToyModel",
    "condition_input_injection",
    "control_branch_forward",
    "encode_condition",
    "extrinsics_residual_block",
    "make_toy_inputs",
    "merged_forward",
]


# -- activation dump format ------------------------------------------------------

CCTA_MAGIC = b"CCTA"


def encode_activations(named: dict) -> bytes:
    """``CCTA``, u32 count, then per tensor: u16 name length, name, u32 ndim, u32 dims, f64 data."""
    parts = [CCTA_MAGIC, struct.pack("<I", len(named))]
    for name, t in named.items():
        arr = np.ascontiguousarray(t.detach().numpy() if isinstance(t, torch.Tensor) else t, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode_activations(data: bytes) -> dict:
    if len(data) < 8 or data[:4] != CCTA_MAGIC:
        raise FormatError("not a CCTA activation dump")
    try:
        (count,) = struct.unpack_from("<I", data, 4)
        pos, out = 8, {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, pos)
            name = data[pos + 2 : pos + 2 + n].decode("utf-8")
            pos += 2 + n
            (ndim,) = struct.unpack_from("<I", data, pos)
            shape = struct.unpack_from(f"<{ndim}I", data, pos + 4)
            pos += 4 + 4 * ndim
            size = int(np.prod(shape)) * 8
            if pos + size > len(data):
                raise FormatError("truncated CCTA activation dump")
            out[name] = np.frombuffer(data[pos : pos + size], dtype="<f8").reshape(shape)
            pos += size
    except (struct.error, UnicodeDecodeError) as exc:
        raise FormatError(f"malformed CCTA activation dump: {exc}") from None
    if pos != len(data):
        raise FormatError("trailing bytes after CCTA payload")
    return out
