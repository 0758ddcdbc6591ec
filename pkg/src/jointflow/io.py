"""File formats: KITTI flow PNG, LPM1 label maps, id-map PNG, matches, config."""
from __future__ import annotations

import dataclasses
import struct
from pathlib import Path

import cv2
import numpy as np

from .model import EnergyConfig, FlowField, GrayImage, InputError, LabelProbMap, SuperpixelSegmentation


class FormatError(InputError):
    """A file does not follow its documented layout."""


# ---------------------------------------------------------------------------
# KITTI flow PNG

KITTI_OFFSET = 1 << 15
KITTI_SCALE = 64.0
KITTI_LIMIT = KITTI_OFFSET / KITTI_SCALE  # 512 px


def _check_suffix(path, suffix=".png"):
    if Path(path).suffix.lower() != suffix:
        raise InputError(f"{path}: expected a {suffix} file")


def encode_flow_kitti(flow: FlowField) -> np.ndarray:
    """``(h, w, 3)`` uint16 array in R, G, B order."""
    r = np.round(flow.u * KITTI_SCALE) + KITTI_OFFSET
    g = np.round(flow.v * KITTI_SCALE) + KITTI_OFFSET
    valid = flow.valid
    r = np.where(valid, r, KITTI_OFFSET)
    g = np.where(valid, g, KITTI_OFFSET)
    if r.min() < 0 or r.max() > 65535 or g.min() < 0 or g.max() > 65535:
        raise InputError(f"flow exceeds the representable range of +-{KITTI_LIMIT:g} px")
    return np.stack([r, g, valid.astype(np.float64)], axis=-1).astype(np.uint16)


def decode_flow_kitti(rgb: np.ndarray) -> FlowField:
    if rgb.dtype != np.uint16 or rgb.ndim != 3 or rgb.shape[2] != 3:
        raise FormatError(f"KITTI flow needs a 16-bit 3-channel image, got {rgb.dtype} {rgb.shape}")
    b = rgb[..., 2]
    if not np.all((b == 0) | (b == 1)):
        raise FormatError("KITTI flow validity channel must be 0 or 1")
    u = (rgb[..., 0].astype(np.float64) - KITTI_OFFSET) / KITTI_SCALE
    v = (rgb[..., 1].astype(np.float64) - KITTI_OFFSET) / KITTI_SCALE
    return FlowField(u, v, b != 0)


def write_flow_kitti(flow: FlowField, path) -> None:
    _check_suffix(path)
    rgb = encode_flow_kitti(flow)
    if not cv2.imwrite(str(path), rgb[..., ::-1].copy()):
        raise OSError(f"could not write {path}")


def _read_png_raw(path) -> np.ndarray:
    if not Path(path).is_file():
        raise InputError(f"{path}: no such file")
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise FormatError(f"{path}: not a readable PNG")
    return img


def read_flow_kitti(path) -> FlowField:
    img = _read_png_raw(path)
    if img.ndim != 3 or img.shape[2] != 3:
        raise FormatError(f"{path}: KITTI flow needs 3 channels, got shape {img.shape}")
    return decode_flow_kitti(img[..., ::-1])


# ---------------------------------------------------------------------------
# LPM1 label probability maps

LPM_MAGIC = b"LPM1"
LPM_HEADER = struct.Struct("<4sIII")
LPM_TOL = 1e-4


def encode_labelprob(lmap: LabelProbMap) -> bytes:
    h, w, c = lmap.probs.shape
    body = np.ascontiguousarray(lmap.probs, dtype="<f4").tobytes()
    return LPM_HEADER.pack(LPM_MAGIC, h, w, c) + body


def decode_labelprob(data: bytes) -> LabelProbMap:
    if len(data) < LPM_HEADER.size:
        raise FormatError("label map shorter than its header")
    magic, h, w, c = LPM_HEADER.unpack_from(data)
    if magic != LPM_MAGIC:
        raise FormatError(f"bad label map magic {magic!r}")
    if h == 0 or w == 0 or c == 0:
        raise FormatError("label map has an empty dimension")
    need = LPM_HEADER.size + 4 * h * w * c
    if len(data) != need:
        raise FormatError(f"label map payload has {len(data) - LPM_HEADER.size} bytes, expected {need - LPM_HEADER.size}")
    probs = np.frombuffer(data, dtype="<f4", offset=LPM_HEADER.size).reshape(h, w, c)
    if not np.all(np.isfinite(probs)):
        raise FormatError("label map holds non-finite values")
    if probs.min() < 0:
        raise FormatError("label map holds negative probabilities")
    sums = probs.astype(np.float64).sum(axis=-1)
    worst = float(np.max(np.abs(sums - 1.0)))
    if worst > LPM_TOL:
        raise FormatError(f"label distribution sums off by {worst:.3g} (tolerance {LPM_TOL:g})")
    out = probs.astype(np.float64)
    off = np.abs(sums - 1.0) > 1e-6
    if off.any():
        out[off] /= sums[off, None]
    return LabelProbMap(np.clip(out, 0.0, 1.0))


def write_labelprob(lmap: LabelProbMap, path) -> None:
    Path(path).write_bytes(encode_labelprob(lmap))


def read_labelprob(path) -> LabelProbMap:
    if not Path(path).is_file():
        raise InputError(f"{path}: no such file")
    return decode_labelprob(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# images, id maps, masks


def read_image(path):
    """``(gray, colour)`` in [0, 1]; colour is ``(h, w, 3)`` RGB."""
    img = _read_png_raw(path)
    scale = 65535.0 if img.dtype == np.uint16 else 255.0
    if img.dtype not in (np.uint8, np.uint16):
        raise FormatError(f"{path}: unsupported pixel type {img.dtype}")
    img = img.astype(np.float64) / scale
    if img.ndim == 2:
        colour = np.repeat(img[..., None], 3, axis=2)
    elif img.shape[2] in (3, 4):
        colour = img[..., 2::-1] if img.shape[2] == 3 else img[..., [2, 1, 0]]
    else:
        raise FormatError(f"{path}: unsupported channel count {img.shape[2]}")
    gray = colour @ np.array([0.299, 0.587, 0.114])
    return GrayImage(np.clip(gray, 0.0, 1.0)), np.ascontiguousarray(colour)


def write_image(path, img, bits: int = 8) -> None:
    """Write a [0, 1] gray or RGB image as an 8- or 16-bit PNG."""
    if bits not in (8, 16):
        raise InputError("bits must be 8 or 16")
    top = 255.0 if bits == 8 else 65535.0
    dtype = np.uint8 if bits == 8 else np.uint16
    arr = np.clip(np.round(np.asarray(img, dtype=np.float64) * top), 0, top).astype(dtype)
    if arr.ndim == 3:
        arr = arr[..., ::-1]
    if not cv2.imwrite(str(path), np.ascontiguousarray(arr)):
        raise OSError(f"could not write {path}")


def read_class_map(path) -> np.ndarray:
    """Per-pixel class ids from an 8- or 16-bit single-channel PNG."""
    img = _read_png_raw(path)
    if img.ndim != 2:
        raise FormatError(f"{path}: class ids need a single-channel PNG")
    return img.astype(np.int64)


def write_class_map(path, ids) -> None:
    ids = np.asarray(ids)
    if ids.min() < 0 or ids.max() > 65535:
        raise InputError("class ids must fit in 16 bits")
    if not cv2.imwrite(str(path), ids.astype(np.uint16)):
        raise OSError(f"could not write {path}")


def write_id_map(seg_or_ids, path) -> None:
    ids = seg_or_ids.id_map if isinstance(seg_or_ids, SuperpixelSegmentation) else np.asarray(seg_or_ids)
    if ids.min() < 0 or ids.max() > 65535:
        raise InputError("superpixel ids must fit in 16 bits")
    if not cv2.imwrite(str(path), ids.astype(np.uint16)):
        raise OSError(f"could not write {path}")


def read_id_map(path) -> SuperpixelSegmentation:
    img = _read_png_raw(path)
    if img.ndim != 2 or img.dtype != np.uint16:
        raise FormatError(f"{path}: superpixel ids need a 16-bit single-channel PNG")
    return SuperpixelSegmentation.from_id_map(img.astype(np.int64))


def write_mask(path, mask) -> None:
    if not cv2.imwrite(str(path), np.asarray(mask, dtype=np.uint8) * 255):
        raise OSError(f"could not write {path}")


def read_mask(path) -> np.ndarray:
    img = _read_png_raw(path)
    if img.ndim == 3:
        img = img[..., 0]
    return img > 0


# ---------------------------------------------------------------------------
# matches and config


def read_matches(path) -> np.ndarray:
    """Whitespace-separated ``x1 y1 x2 y2`` rows; ``#`` starts a comment."""
    rows = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise FormatError(f"{path}:{n}: expected 4 numbers, got {len(parts)}")
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise FormatError(f"{path}:{n}: not a number") from None
        if not all(np.isfinite(vals)):
            raise FormatError(f"{path}:{n}: non-finite coordinate")
        rows.append(vals)
    return np.array(rows, dtype=np.float64).reshape(-1, 4)


def write_matches(path, matches) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in np.asarray(matches, dtype=np.float64).reshape(-1, 4):
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def _parse_value(text: str, kind, key: str):
    text = text.strip()
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    if kind is tuple:
        text = text.strip("()[]")
        return tuple(int(t) for t in text.replace(",", " ").split())
    raise InputError(f"config key {key} has unsupported type")


def read_config(path, base: EnergyConfig | None = None) -> EnergyConfig:
    """Flat ``key = value`` file over EnergyConfig field names; unknown keys are errors."""
    base = base or EnergyConfig()
    fields = {f.name: type(getattr(base, f.name)) for f in dataclasses.fields(base)}
    changes = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{n}: expected 'key = value'")
        key, value = (t.strip() for t in line.split("=", 1))
        if key not in fields:
            raise FormatError(f"{path}:{n}: unknown config key {key!r}")
        try:
            changes[key] = _parse_value(value, fields[key], key)
        except ValueError:
            raise FormatError(f"{path}:{n}: bad value for {key}: {value!r}") from None
    return base.replace(**changes)


def write_config(cfg: EnergyConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for f in dataclasses.fields(cfg):
            v = getattr(cfg, f.name)
            if isinstance(v, tuple):
                v = " ".join(str(t) for t in v)
            elif isinstance(v, float):
                v = repr(v)
            fh.write(f"{f.name} = {v}\n")
