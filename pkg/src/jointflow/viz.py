"""Colour coding for flow fields, label maps and masks."""
from __future__ import annotations

import numpy as np
from skimage.color import hsv2rgb as hsv_to_rgb

from .model import FlowField, LabelProbMap


def flow_to_color(flow: FlowField, max_mag: float | None = None) -> np.ndarray:
    """HSV flow wheel as ``(h, w, 3)`` RGB in [0, 1].

    Hue is the flow angle ``atan2(v, u)`` mapped to [0, 1) (0 along +x,
    a quarter turn along +y), saturation the magnitude relative to
    ``max_mag`` (default: 99th percentile of valid magnitudes), value is 1.
    Invalid pixels are black; zero flow is white.
    """
    u = np.where(flow.valid, flow.u, 0.0)
    v = np.where(flow.valid, flow.v, 0.0)
    mag = np.hypot(u, v)
    if max_mag is None:
        vals = mag[flow.valid]
        max_mag = float(np.percentile(vals, 99)) if vals.size else 0.0
    sat = np.clip(mag / max_mag, 0.0, 1.0) if max_mag > 0 else np.zeros_like(mag)
    hue = np.mod(np.arctan2(v, u), 2.0 * np.pi) / (2.0 * np.pi)
    rgb = hsv_to_rgb(np.stack([hue, sat, np.ones_like(mag)], axis=-1))
    rgb[~flow.valid] = 0.0
    return rgb


def palette(classes: int) -> np.ndarray:
    """Fixed, well-separated colours for class ids."""
    hues = (np.arange(classes) * 0.618033988749895) % 1.0
    return hsv_to_rgb(np.stack([hues, np.full(classes, 0.65), np.full(classes, 0.95)], axis=-1))


def labels_to_color(labels) -> np.ndarray:
    if isinstance(labels, LabelProbMap):
        ids, classes = labels.argmax(), labels.classes
    else:
        ids = np.asarray(labels, dtype=np.int64)
        classes = int(ids.max()) + 1
    return palette(classes)[ids]


def mask_to_color(mask) -> np.ndarray:
    m = np.asarray(mask, dtype=np.float64)
    return np.repeat(m[..., None], 3, axis=2)
