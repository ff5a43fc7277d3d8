"""File formats and write helpers shared by the pipelines."""

from __future__ import annotations

import io
import json
import os
import re
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_json(path, doc) -> None:
    atomic_write_text(path, json.dumps(doc, indent=1, sort_keys=False, allow_nan=False) + "\n")


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path} is not valid JSON: {exc}") from None


# -- images ----------------------------------------------------------------------


def encode_png(array: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(array)
    if arr.dtype == np.uint16:
        if arr.ndim != 2:
            raise FormatError("16-bit PNG output must be single-channel")
        img = Image.fromarray(arr.astype("<u2"))  # infers mode I;16
    else:
        img = Image.fromarray(arr.astype(np.uint8))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def write_png(path, array: np.ndarray) -> None:
    atomic_write_bytes(path, encode_png(array))


def read_png(path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            if img.mode in ("I;16", "I;16B", "I"):
                return np.array(img, dtype=np.uint16)
            if img.mode in ("RGBA", "P", "LA", "CMYK", "YCbCr"):
                img = img.convert("RGB")
            return np.array(img)
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read image {path}: {exc}") from None


def read_rgb(path) -> np.ndarray:
    img = read_png(path)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=-1)
    if img.dtype != np.uint8 or img.shape[-1] != 3:
        raise FormatError(f"{path}: expected an 8-bit RGB image")
    return img


def read_mask(path) -> np.ndarray:
    img = read_png(path)
    if img.ndim == 3:
        img = img[..., 0]
    return img > 127


# -- depth -----------------------------------------------------------------------


def encode_pfm(depth: np.ndarray) -> bytes:
    """Single-channel little-endian PFM; rows are stored bottom-to-top."""
    d = np.asarray(depth, dtype="<f4")
    h, w = d.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    return header + np.ascontiguousarray(d[::-1]).tobytes()


def write_pfm(path, depth: np.ndarray) -> None:
    atomic_write_bytes(path, encode_pfm(depth))


_PFM_HEADER = re.compile(rb"^(P[fF])\s+(\d+)\s+(\d+)\s+(-?[\d.eE+-]+)\s")


def read_pfm(path) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read depth {path}: {exc.strerror}") from None
    m = _PFM_HEADER.match(raw)
    if not m:
        raise FormatError(f"{path}: not a PFM file")
    kind, w, h, scale = m.group(1), int(m.group(2)), int(m.group(3)), float(m.group(4))
    channels = 3 if kind == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    body = raw[m.end():]
    n = w * h * channels
    if len(body) < 4 * n:
        raise FormatError(f"{path}: truncated PFM data")
    data = np.frombuffer(body[: 4 * n], dtype=dtype).reshape(h, w, channels)[::-1]
    return data[..., 0].astype(np.float64)


def read_depth(path) -> np.ndarray:
    """Depth in meters from PFM or a 16-bit PNG in millimeters (0 = missing)."""
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        return read_pfm(path)
    if suffix == ".png":
        img = read_png(path)
        if img.dtype != np.uint16 or img.ndim != 2:
            raise FormatError(f"{path}: depth PNG must be single-channel 16-bit")
        return img.astype(np.float64) / 1000.0
    raise FormatError(f"{path}: unsupported depth format (use .pfm or 16-bit .png)")


def find_frames(directory, stem: str, suffixes=(".png",)) -> list[Path]:
    """Files named ``{stem}_{index}.{suffix}`` sorted by index."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FormatError(f"{directory} is not a directory")
    pattern = re.compile(rf"^{re.escape(stem)}_(\d+)$")
    found = []
    for p in directory.iterdir():
        m = pattern.match(p.stem)
        if m and p.suffix.lower() in suffixes:
            found.append((int(m.group(1)), p))
    found.sort()
    if not found:
        raise FormatError(f"{directory}: no {stem}_* frames found")
    indices = [i for i, _ in found]
    if indices != list(range(len(indices))):
        raise FormatError(f"{directory}: {stem}_* files are not numbered 0..N-1 consecutively")
    return [p for _, p in found]


def frame_name(stem: str, index: int, suffix: str) -> str:
    return f"{stem}_{index:05d}{suffix}"


# -- parallelism -----------------------------------------------------------------


def parallel_map(fn, items, threads: int = 1) -> list:
    """Order-preserving map; ``threads`` 0 means one worker per CPU."""
    items = list(items)
    if threads == 0:
        threads = os.cpu_count() or 1
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
