"""Synthetic two-frame scenes with exact ground truth.

A scene is a stack of textured planar regions.  Region 0 is the background
and fills whatever the other (rectangular) regions leave free in the first
frame; later regions are in front of earlier ones.  Static regions move only
through the camera, so their correspondences obey the scene's fundamental
matrix exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import FundamentalMatrix, cross_matrix, sample_bilinear
from ..model import (FlowField, GrayImage, InputError, LabelProbMap, SemanticClassTable,
                     normalize_homography)

LUMA = np.array([0.299, 0.587, 0.114])
CLASS_NAMES = ("road", "vehicle", "building")


@dataclass(frozen=True)
class Camera:
    """Pinhole camera moving by ``x2 = R x1 + t`` between the frames."""

    focal: float
    t: tuple
    R: tuple = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))

    def intrinsics(self, width: int, height: int) -> np.ndarray:
        return np.array([[self.focal, 0.0, (width - 1) / 2], [0.0, self.focal, (height - 1) / 2], [0.0, 0.0, 1.0]])

    def plane_homography(self, normal, depth: float, width: int, height: int) -> np.ndarray:
        k = self.intrinsics(width, height)
        r = np.asarray(self.R, dtype=np.float64)
        t = np.asarray(self.t, dtype=np.float64)
        n = np.asarray(normal, dtype=np.float64)
        return k @ (r + np.outer(t, n) / depth) @ np.linalg.inv(k)

    def fundamental(self, width: int, height: int) -> np.ndarray:
        k = self.intrinsics(width, height)
        kinv = np.linalg.inv(k)
        return kinv.T @ cross_matrix(self.t) @ np.asarray(self.R, dtype=np.float64) @ kinv


@dataclass(frozen=True)
class Region:
    """A planar region.  ``rect`` is ``(x0, y0, x1, y1)`` (half-open, pixels) or None for the background.

    Static regions take their motion from the camera and ``plane``
    (``(normal, depth)`` with ``n . X = depth``); dynamic regions use ``homography``.
    """

    label: int
    tint: tuple
    rect: tuple | None = None
    static: bool = True
    plane: tuple = ((0.0, 0.0, 1.0), 100.0)
    homography: tuple | None = None


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    regions: tuple
    camera: Camera | None = None
    noise_std: float = 0.0
    classes: int = 3
    static_classes: tuple = (0, 2)
    wavelengths: tuple = (5.0, 14.0)  # band of the texture, in pixels
    waves: int = 48
    brightness: tuple = (0.4, 1.0)  # texture value range before tinting


@dataclass(frozen=True)
class SyntheticScene:
    spec: SceneSpec
    frames: tuple  # two GrayImage
    color_frames: tuple  # two (h, w, 3) arrays in [0, 1]
    gt_flow: FlowField
    gt_occlusion: np.ndarray
    gt_labels: tuple  # per-pixel class ids for frame t and t+1
    gt_homographies: tuple
    F: FundamentalMatrix | None
    regions: np.ndarray  # region id per pixel of frame t

    @property
    def table(self) -> SemanticClassTable:
        names = list(CLASS_NAMES[:self.spec.classes]) + [f"class{i}" for i in range(len(CLASS_NAMES), self.spec.classes)]
        return SemanticClassTable.from_static(self.spec.classes, self.spec.static_classes, names)

    @property
    def foreground(self) -> np.ndarray:
        dynamic = np.array([not r.static for r in self.spec.regions])
        return dynamic[self.regions]

    def correspondences(self, static_only: bool = True) -> np.ndarray:
        """``x1 y1 x2 y2`` rows for every valid pixel (optionally static regions only)."""
        h, w = self.regions.shape
        ys, xs = np.mgrid[0:h, 0:w]
        keep = self.gt_flow.valid & ~self.gt_occlusion
        if static_only:
            keep &= ~self.foreground
        x, y = xs[keep], ys[keep]
        return np.stack([x, y, x + self.gt_flow.u[keep], y + self.gt_flow.v[keep]], axis=1).astype(np.float64)


def region_homographies(spec: SceneSpec) -> list:
    out = []
    for r in spec.regions:
        if r.static:
            if spec.camera is None:
                out.append(np.eye(3))
            else:
                n, d = r.plane
                out.append(spec.camera.plane_homography(n, d, spec.width, spec.height))
        else:
            out.append(np.asarray(r.homography, dtype=np.float64))
    return [normalize_homography(m) for m in out]


def _region_map(spec: SceneSpec) -> np.ndarray:
    regions = np.zeros((spec.height, spec.width), dtype=np.int64)
    if spec.regions[0].rect is not None:
        raise InputError("region 0 must be the background (rect=None)")
    for k, r in enumerate(spec.regions[1:], start=1):
        if r.rect is None:
            raise InputError("only region 0 may omit its rectangle")
        x0, y0, x1, y1 = r.rect
        block = regions[max(y0, 0):y1, max(x0, 0):x1]
        if np.any(block != 0):
            raise InputError(f"region {k} overlaps an earlier region")
        block[...] = k
    return regions


class _Texture:
    """Band-limited random texture: a normalized sum of plane waves.

    Evaluated in closed form at any real position, so warped frames carry no
    resampling error.  Values stay in ``brightness``.
    """

    def __init__(self, rng, wavelengths, waves, brightness=(0.4, 1.0)):
        self.lo, self.hi = (float(b) for b in brightness)
        lo, hi = wavelengths
        n = int(waves)
        ang = rng.uniform(0.0, np.pi, n)
        freq = 2.0 * np.pi / rng.uniform(lo, hi, n)
        self.k = np.stack([freq * np.cos(ang), freq * np.sin(ang)], axis=1)
        self.phase = rng.uniform(0.0, 2.0 * np.pi, n)
        self.amp = rng.uniform(0.5, 1.0, n)

    def __call__(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        arg = x[..., None] * self.k[:, 0] + y[..., None] * self.k[:, 1] + self.phase
        val = np.cos(arg) @ self.amp / self.amp.sum()
        # sums of many waves rarely come near the bound; stretch, then clip
        mid, half = (self.hi + self.lo) / 2, (self.hi - self.lo) / 2
        return np.clip(mid + half * 3.0 * val, self.lo, self.hi)


def _inside_rect(rect, x, y):
    if rect is None:
        return np.ones(np.shape(x), dtype=bool)
    x0, y0, x1, y1 = rect
    return (x >= x0 - 0.5) & (x < x1 - 0.5) & (y >= y0 - 0.5) & (y < y1 - 0.5)


def _round(v):
    return np.floor(v + 0.5).astype(np.int64)


def make_scene(spec: SceneSpec, seed: int = 0) -> SyntheticScene:
    rng = np.random.default_rng(seed)
    h, w = spec.height, spec.width
    regions = _region_map(spec)
    hs = region_homographies(spec)
    textures = [_Texture(rng, spec.wavelengths, spec.waves, spec.brightness) for _ in spec.regions]
    tints = [np.asarray(r.tint, dtype=np.float64) for r in spec.regions]

    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    pts = np.stack([xs.ravel(), ys.ravel(), np.ones(h * w)], axis=1)

    def shade(k, x, y):
        return textures[k](x, y)[..., None] * tints[k]

    color0 = np.zeros((h, w, 3))
    for k in range(len(spec.regions)):
        sel = regions == k
        color0[sel] = shade(k, xs[sel], ys[sel])

    # frame t+1: front-most region whose preimage lies inside its frame-t extent
    color1 = np.zeros((h * w, 3))
    labels1 = np.zeros(h * w, dtype=np.int64)
    taken = np.zeros(h * w, dtype=bool)
    for k in reversed(range(len(spec.regions))):
        pre = pts @ np.linalg.inv(hs[k] / hs[k][2, 2]).T  # exact for affine maps
        px, py = pre[:, 0] / pre[:, 2], pre[:, 1] / pre[:, 2]
        hit = ~taken & _inside_rect(spec.regions[k].rect, px, py) & (pre[:, 2] != 0)
        color1[hit] = shade(k, px[hit], py[hit])
        labels1[hit] = spec.regions[k].label
        taken |= hit
    color1 = color1.reshape(h, w, 3)

    gray0 = np.clip(color0 @ LUMA, 0.0, 1.0)
    gray1 = np.clip(color1 @ LUMA, 0.0, 1.0)
    if spec.noise_std > 0:
        gray0 = np.clip(gray0 + rng.normal(0, spec.noise_std, gray0.shape), 0.0, 1.0)
        gray1 = np.clip(gray1 + rng.normal(0, spec.noise_std, gray1.shape), 0.0, 1.0)

    # ground-truth flow and forward-warp collisions
    flat_regions = regions.ravel()
    affine = np.stack([m / m[2, 2] for m in hs])  # scale fixed so affine maps stay exact
    mapped = np.einsum("nij,nj->ni", affine[flat_regions], pts)
    tx, ty = mapped[:, 0] / mapped[:, 2], mapped[:, 1] / mapped[:, 2]
    flow = FlowField((tx - pts[:, 0]).reshape(h, w), (ty - pts[:, 1]).reshape(h, w), np.ones((h, w), bool))
    keys = _round(tx) * (4 * (w + h) + 1) + _round(ty)
    occluded = np.zeros(h * w, dtype=bool)
    for k in range(len(spec.regions)):
        back = flat_regions == k
        front = flat_regions > k
        if back.any() and front.any():
            occluded[back] = np.isin(keys[back], keys[front])

    labels0 = np.array([r.label for r in spec.regions])[regions]
    F = None if spec.camera is None else FundamentalMatrix(spec.camera.fundamental(w, h))
    return SyntheticScene(
        spec=spec,
        frames=(GrayImage(gray0), GrayImage(gray1)),
        color_frames=(np.clip(color0, 0, 1), np.clip(color1, 0, 1)),
        gt_flow=flow,
        gt_occlusion=occluded.reshape(h, w),
        gt_labels=(labels0, labels1.reshape(h, w)),
        gt_homographies=tuple(hs),
        F=F,
        regions=regions,
    )


def scene_label_maps(scene: SyntheticScene, seed: int = 0, confidence: float = 0.8,
                     evidence_noise: float = 0.0):
    """``(l_prev, l_hat)`` from the ground-truth labels.

    ``l_prev`` puts ``confidence`` on the frame-t class; ``l_hat`` does the same
    for frame t+1 after relabelling a fraction ``evidence_noise`` of the pixels
    at random.
    """
    rng = np.random.default_rng(seed)
    classes = scene.spec.classes
    l_prev = LabelProbMap.one_hot(scene.gt_labels[0], classes, confidence)
    noisy = scene.gt_labels[1].copy()
    if evidence_noise > 0:
        flip = rng.random(noisy.shape) < evidence_noise
        noisy[flip] = (noisy[flip] + rng.integers(1, classes, size=flip.sum())) % classes
    l_hat = LabelProbMap.one_hot(noisy, classes, confidence)
    return l_prev, l_hat


# ---------------------------------------------------------------------------
# templates

BG_TINT = (0.45, 0.65, 1.0)
FG_TINT = (1.0, 0.5, 0.25)
WALL_TINT = (0.55, 1.0, 0.5)


def _translation(tx, ty):
    return ((1.0, 0.0, tx), (0.0, 1.0, ty), (0.0, 0.0, 1.0))


def static_template(rng, size: int = 32) -> SceneSpec:
    """Camera translation over a far background plane and a nearer static block."""
    focal = float(size)
    depth = 60.0
    speed = rng.uniform(3.0, 7.0) * rng.choice([-1, 1])
    t = (speed * depth / focal, rng.uniform(-0.5, 0.5) * depth / focal, 0.0)
    b = size // 4
    x0 = int(rng.integers(b, size - 2 * b))
    y0 = int(rng.integers(b, size - 2 * b))
    return SceneSpec(
        width=size, height=size, camera=Camera(focal, t),
        regions=(Region(0, BG_TINT, plane=((0.0, 0.0, 1.0), depth)),
                 Region(2, WALL_TINT, rect=(x0, y0, x0 + b + 2, y0 + b + 2), plane=((0.0, 0.0, 1.0), depth * 0.75))),
    )


def two_plane_template(rng, size: int = 64) -> SceneSpec:
    """Static background under sideways camera motion plus one independently moving square."""
    focal = float(size)
    depth = 80.0
    bg = rng.uniform(3.2, 7.8) * rng.choice([-1, 1])
    t = (bg * depth / focal, 0.0, 0.0)
    ang = rng.uniform(0, 2 * np.pi)
    mag = rng.uniform(2.2, 6.0)
    fg = (mag * np.cos(ang), mag * np.sin(ang))
    side = int(round(size * 0.375))
    x0 = int(rng.integers(size // 5, size - side - size // 5))
    y0 = int(rng.integers(size // 5, size - side - size // 5))
    return SceneSpec(
        width=size, height=size, camera=Camera(focal, t),
        regions=(Region(0, BG_TINT, plane=((0.0, 0.0, 1.0), depth)),
                 Region(1, FG_TINT, rect=(x0, y0, x0 + side, y0 + side), static=False,
                        homography=_translation(*fg))),
    )


def multi_object_template(rng, size: int = 32) -> SceneSpec:
    """Static background and two moving objects, one with a mild zoom."""
    focal = float(size)
    depth = 80.0
    bg = rng.uniform(2.0, 5.0) * rng.choice([-1, 1])
    t = (bg * depth / focal, 0.0, 0.0)
    side = size // 3
    regions = [Region(0, BG_TINT, plane=((0.0, 0.0, 1.0), depth))]
    spots = [(1, 1), (size - side - 1, size - side - 1)]
    for n, (x0, y0) in enumerate(spots):
        tx, ty = rng.uniform(-4, 4, size=2)
        zoom = 1.0 + (0.04 if n else 0.0)
        cx, cy = x0 + side / 2, y0 + side / 2
        hmg = ((zoom, 0.0, tx + cx * (1 - zoom)), (0.0, zoom, ty + cy * (1 - zoom)), (0.0, 0.0, 1.0))
        regions.append(Region(1, FG_TINT, rect=(x0, y0, x0 + side, y0 + side), static=False, homography=hmg))
    return SceneSpec(width=size, height=size, camera=Camera(focal, t), regions=tuple(regions))


TEMPLATES = {
    "static": static_template,
    "two-plane": two_plane_template,
    "multi": multi_object_template,
}


def template_scene(name: str, seed: int, size: int | None = None, **overrides) -> SyntheticScene:
    rng = np.random.default_rng(seed)
    make = TEMPLATES[name]
    spec = make(rng) if size is None else make(rng, size)
    if overrides:
        spec = SceneSpec(**{**spec.__dict__, **overrides})
    return make_scene(spec, seed)
