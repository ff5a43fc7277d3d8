"""Clip sampling, masked PSNR / SSIM, full-frame PSNR and new-content ratios.

Masks mark pixels whose content originates from the conditioning frame. Errors
are pooled over the whole sequence (frame-major, then row-major) rather than
averaged per frame, so frames with tiny masks cannot dominate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
from scipy.ndimage import correlate1d

from .errors import ContractError, UndefinedMetricError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class ClipSpec:
    start: int = 0
    speed: float = 1.0
    length: int = 14

    def __post_init__(self):
        if int(self.start) != self.start or self.start < 0:
            raise ContractError(f"clip start must be a non-negative integer, got {self.start}")
        if not self.speed > 0:
            raise ContractError(f"sampling speed must be positive, got {self.speed}")
        if int(self.length) != self.length or self.length < 1:
            raise ContractError(f"clip length must be >= 1, got {self.length}")

    def last_index(self) -> int:
        return math.floor(self.start + (self.length - 1) * self.speed)


def sample_clip(total_frames: int, spec: ClipSpec) -> list[int]:
    """Indices ``floor(f + i * s)`` for ``i`` in ``[0, F)``."""
    if spec.last_index() >= total_frames:
        raise ContractError(
            f"clip needs frame {spec.last_index()} but the video has {total_frames} frames"
        )
    return [math.floor(spec.start + i * spec.speed) for i in range(spec.length)]


def max_clip_length(total_frames: int, speed: float, start: int = 0) -> int:
    n = 1
    while math.floor(start + n * speed) < total_frames:
        n += 1
    return n


def _video(x) -> np.ndarray:
    v = np.asarray(x)
    if v.ndim == 3:
        v = v[None]
    return v


def _check(gen, ref, masks=None):
    gen, ref = _video(gen), _video(ref)
    if gen.shape != ref.shape:
        raise ContractError(f"generated {gen.shape} and reference {ref.shape} shapes differ")
    if masks is None:
        return gen, ref, None
    m = np.asarray(masks, dtype=bool)
    if m.ndim == 2:
        m = m[None]
    if m.shape != gen.shape[:3]:
        raise ContractError(f"mask shape {m.shape} does not match video {gen.shape[:3]}")
    return gen, ref, m


def masked_mse(generated, reference, masks) -> float:
    gen, ref, m = _check(generated, reference, masks)
    n_pix = int(m.sum())
    if n_pix == 0:
        raise UndefinedMetricError("mask selects no pixels; masked metric undefined")
    diff = gen[m].astype(np.float64) - ref[m].astype(np.float64)
    return float(np.sum(diff * diff) / diff.size)


def psnr_from_mse(mse: float, max_value: float = 255.0) -> float:
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(max_value * max_value / mse)


def masked_psnr(generated, reference, masks, max_value: float = 255.0) -> float:
    """PSNR in dB over masked pixels and channels of all frames; ``inf`` if identical."""
    return psnr_from_mse(masked_mse(generated, reference, masks), max_value)


def full_frame_psnr(generated, reference, max_value: float = 255.0) -> float:
    gen, ref, _ = _check(generated, reference)
    return masked_psnr(gen, ref, np.ones(gen.shape[:3], dtype=bool), max_value)


def luminance(image) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.shape[-1] == 1:
        return img[..., 0]
    return img[..., :3] @ LUMA


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img, kernel):
    r = len(kernel) // 2
    out = correlate1d(correlate1d(img, kernel, axis=0, mode="constant"), kernel, axis=1, mode="constant")
    return out[r:-r, r:-r] if r else out


def ssim_map(a, b, max_value: float = 255.0) -> np.ndarray:
    """Per-window SSIM for all fully interior windows; shape (H-10, W-10)."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    k = gaussian_window()
    c1 = (SSIM_K1 * max_value) ** 2
    c2 = (SSIM_K2 * max_value) ** 2
    mx = _filter_valid(x, k)
    my = _filter_valid(y, k)
    sxx = _filter_valid(x * x, k) - mx * mx
    syy = _filter_valid(y * y, k) - my * my
    sxy = _filter_valid(x * y, k) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return num / den


def masked_ssim(generated, reference, masks, max_value: float = 255.0) -> float:
    """Luminance SSIM averaged over windows with a masked center, then over frames.

    Frames where no window center is masked do not contribute.
    """
    gen, ref, m = _check(generated, reference, masks)
    r = SSIM_WINDOW // 2
    per_frame = []
    for g, f, mk in zip(gen, ref, m):
        if g.shape[0] < SSIM_WINDOW or g.shape[1] < SSIM_WINDOW:
            raise ContractError(f"SSIM needs frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
        centers = mk[r:-r, r:-r]
        if not centers.any():
            continue
        smap = ssim_map(luminance(g), luminance(f), max_value)
        per_frame.append(float(np.mean(smap[centers])))
    if not per_frame:
        raise UndefinedMetricError("no SSIM window has a masked center pixel")
    return float(np.mean(per_frame))


def new_content_ratio(masks) -> tuple[list[float], float]:
    """Fraction of unmasked pixels per frame and pooled over frames 1..N.

    Frame 0 is the conditioning frame and is left out of the pooled value
    unless it is the only frame.
    """
    m = np.asarray(masks, dtype=bool)
    if m.ndim == 2:
        m = m[None]
    if m.size == 0:
        raise ContractError("new_content_ratio needs at least one mask")
    per_frame = [float(1.0 - fm.mean()) for fm in m]
    rest = m[1:] if len(m) > 1 else m
    pooled = float(np.count_nonzero(~rest) / rest.size)
    return per_frame, pooled


class VideoMetric(Protocol):
    """Pluggable learned metric (e.g. LPIPS, FVD) scoring one sequence."""

    name: str
    version: str

    def __call__(self, generated: np.ndarray, reference: np.ndarray, masks: np.ndarray | None) -> float: ...


@dataclass
class SpeedEntry:
    speed: float
    frame_count: int
    indices: list
    masked_psnr: float
    masked_ssim: float
    fpsnr: float
    new_content_ratio: float
    new_content_per_frame: list
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "speed": self.speed,
            "frame_count": self.frame_count,
            "indices": list(self.indices),
            "masked_psnr": _finite_or_none(self.masked_psnr),
            "masked_psnr_infinite": math.isinf(self.masked_psnr),
            "masked_ssim": self.masked_ssim,
            "fpsnr": _finite_or_none(self.fpsnr),
            "fpsnr_infinite": math.isinf(self.fpsnr),
            "new_content_ratio": self.new_content_ratio,
            "new_content_per_frame": list(self.new_content_per_frame),
        }
        d.update(self.extra)
        return d


def _finite_or_none(x):
    return None if math.isinf(x) else float(x)


@dataclass
class MetricsReport:
    entries: list
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "metadata": dict(self.metadata),
            "speeds": {_speed_key(e.speed): e.to_dict() for e in self.entries},
        }


def _speed_key(s: float) -> str:
    return f"x{int(s)}" if float(s).is_integer() else f"x{s:g}"


def evaluate_clip(
    generated, reference, masks, indices: Sequence[int], speed: float, extra_metrics=()
) -> SpeedEntry:
    """Metrics of one clip; the clip's first frame is the conditioning frame and is excluded."""
    gen = np.asarray(generated)[list(indices)]
    ref = np.asarray(reference)[list(indices)]
    msk = np.asarray(masks, dtype=bool)[list(indices)]
    per_frame, pooled = new_content_ratio(msk)
    sel = slice(1, None) if len(indices) > 1 else slice(None)
    g, r, m = gen[sel], ref[sel], msk[sel]
    extra = {}
    for metric in extra_metrics:
        extra[f"{metric.name}"] = float(metric(g, r, m))
        extra[f"{metric.name}_version"] = metric.version
    return SpeedEntry(
        speed=float(speed),
        frame_count=len(indices),
        indices=list(indices),
        masked_psnr=masked_psnr(g, r, m),
        masked_ssim=masked_ssim(g, r, m),
        fpsnr=full_frame_psnr(g, r),
        new_content_ratio=pooled,
        new_content_per_frame=per_frame,
        extra=extra,
    )


def evaluate_speeds(generated, reference, masks, speeds, length=None, start: int = 0, extra_metrics=()) -> MetricsReport:
    """Sample a clip at each speed from full-rate videos and score it."""
    n = len(generated)
    entries = []
    for s in speeds:
        F = length if length is not None else max_clip_length(n, s, start)
        idx = sample_clip(n, ClipSpec(start, s, F))
        entries.append(evaluate_clip(generated, reference, masks, idx, s, extra_metrics))
    meta = {
        "pooling": "sequence-pooled MSE over masked pixels, conditioning frame excluded",
        "ssim": {
            "window": SSIM_WINDOW,
            "sigma": SSIM_SIGMA,
            "k1": SSIM_K1,
            "k2": SSIM_K2,
            "channel": "luma (BT.601)",
            "mask_rule": "window counted when its center pixel is masked",
        },
        "clip_start": start,
        "clip_length": length,
        "total_frames": n,
    }
    return MetricsReport(entries, meta)
