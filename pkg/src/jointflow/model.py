"""Shared domain types and configuration.

Everything here is an immutable value object once constructed.  Images and
per-pixel fields are numpy arrays indexed ``[y, x]``; pixel centres sit at
integer coordinates with the origin top-left, x to the right and y down.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields
from typing import Iterable

import numpy as np

# Homogeneous coordinate below which a projection is treated as degenerate.
DEGENERATE_W = 1e-12


class JointFlowError(Exception):
    """Base class for errors raised by this package."""


class InputError(JointFlowError, ValueError):
    """Inconsistent or malformed user input."""


class NumericalError(JointFlowError, ArithmeticError):
    """A numerical procedure could not produce a result."""


class DegenerateProjection(NumericalError):
    """A homography sent a point to (or behind) the line at infinity."""


# ---------------------------------------------------------------------------
# images and homographies


@dataclass(frozen=True)
class GrayImage:
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] == 0 or data.shape[1] == 0:
            raise InputError(f"gray image must be a non-empty 2-D array, got shape {data.shape}")
        if not np.all(np.isfinite(data)) or data.min() < 0.0 or data.max() > 1.0:
            raise InputError("gray image values must lie in [0, 1]")
        data = data.copy()
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


def normalize_homography(m) -> np.ndarray:
    """Scale ``m`` to unit Frobenius norm and fix the sign so that m[2,2] >= 0.

    When m[2,2] is exactly zero the first non-zero entry (row-major) is made
    positive instead.
    """
    m = np.asarray(m, dtype=np.float64).reshape(3, 3)
    norm = np.linalg.norm(m)
    if not np.isfinite(norm) or norm == 0.0:
        raise NumericalError("cannot normalize a zero or non-finite matrix")
    m = m / norm
    pivot = m[2, 2] if m[2, 2] != 0.0 else m.flat[np.flatnonzero(m)[0]]
    if pivot < 0:
        m = -m
    return m


@dataclass(frozen=True)
class Homography:
    """Projective 3x3 map stored with unit Frobenius norm."""

    m: np.ndarray

    def __post_init__(self):
        m = normalize_homography(self.m)
        if abs(np.linalg.det(m)) <= 1e-12:
            raise NumericalError("homography is singular")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Homography":
        return cls(np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]]))

    def __matmul__(self, other: "Homography") -> "Homography":
        return Homography(self.m @ other.m)

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.m))


@dataclass(frozen=True)
class MotionField:
    """One homography per superpixel, stacked as an ``(n, 3, 3)`` array."""

    mats: np.ndarray

    def __post_init__(self):
        mats = np.asarray(self.mats, dtype=np.float64)
        if mats.ndim != 3 or mats.shape[1:] != (3, 3) or mats.shape[0] == 0:
            raise InputError(f"motion field needs shape (n, 3, 3), got {mats.shape}")
        mats = np.stack([Homography(m).m for m in mats])
        mats.setflags(write=False)
        object.__setattr__(self, "mats", mats)

    @classmethod
    def from_homographies(cls, hs: Iterable[Homography]) -> "MotionField":
        return cls(np.stack([h.m for h in hs]))

    @classmethod
    def identity(cls, count: int) -> "MotionField":
        return cls(np.repeat(np.eye(3)[None], count, axis=0))

    def __len__(self) -> int:
        return self.mats.shape[0]

    def __getitem__(self, s: int) -> Homography:
        return Homography(self.mats[s])

    def replace(self, s: int, h) -> "MotionField":
        mats = self.mats.copy()
        mats[s] = h.m if isinstance(h, Homography) else h
        return MotionField(mats)


# ---------------------------------------------------------------------------
# segmentation


def _edge_key(i: int, j: int) -> tuple[int, int]:
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True)
class SuperpixelSegmentation:
    """Pixel-to-superpixel map plus the adjacency structure derived from it.

    ``members[s]`` holds the flat (row-major) indices of the pixels of ``s``;
    ``boundary[(i, j)]`` (``i < j``) holds the flat indices of pixels of either
    superpixel that have a 4-neighbour in the other one.
    """

    id_map: np.ndarray
    count: int
    members: tuple
    edges: tuple
    boundary: dict

    @classmethod
    def from_id_map(cls, ids) -> "SuperpixelSegmentation":
        ids = np.asarray(ids)
        if ids.ndim != 2 or ids.size == 0:
            raise InputError("superpixel id map must be a non-empty 2-D array")
        if not np.issubdtype(ids.dtype, np.integer):
            raise InputError("superpixel ids must be integers")
        # compact to 0..n-1 keeping the id order; a contiguous map is unchanged
        _, inverse = np.unique(ids.ravel(), return_inverse=True)
        id_map = inverse.reshape(ids.shape).astype(np.int64)
        count = int(id_map.max()) + 1
        flat = id_map.ravel()
        sorter = np.argsort(flat, kind="stable")
        splits = np.cumsum(np.bincount(flat, minlength=count))[:-1]
        members = tuple(np.split(sorter, splits))

        h, w = id_map.shape
        idx = np.arange(h * w).reshape(h, w)
        pairs_a = np.concatenate([id_map[:, :-1].ravel(), id_map[:-1, :].ravel()])
        pairs_b = np.concatenate([id_map[:, 1:].ravel(), id_map[1:, :].ravel()])
        pix_a = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
        pix_b = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
        cut = pairs_a != pairs_b
        lo = np.minimum(pairs_a[cut], pairs_b[cut])
        hi = np.maximum(pairs_a[cut], pairs_b[cut])
        pa, pb = pix_a[cut], pix_b[cut]
        boundary: dict = {}
        keys = lo * count + hi
        for key in np.unique(keys):
            sel = keys == key
            pix = np.unique(np.concatenate([pa[sel], pb[sel]]))
            boundary[(int(key // count), int(key % count))] = pix
        edges = tuple(sorted(boundary))
        return cls(id_map=id_map, count=count, members=members, edges=edges, boundary=boundary)

    def __post_init__(self):
        self.id_map.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.id_map.shape

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(m) for m in self.members])

    def neighbors(self, s: int) -> list[int]:
        return sorted({j if i == s else i for i, j in self.edges if s in (i, j)})

    def union(self, i: int, j: int) -> np.ndarray:
        return np.concatenate([self.members[i], self.members[j]])

    def centroids(self) -> np.ndarray:
        w = self.shape[1]
        return np.array([[np.mean(m % w), np.mean(m // w)] for m in self.members])


# ---------------------------------------------------------------------------
# label maps and occlusion


@dataclass(frozen=True)
class LabelProbMap:
    """Per-pixel class distributions, shape ``(height, width, classes)``."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 3 or min(p.shape) == 0:
            raise InputError(f"label map needs shape (h, w, L), got {p.shape}")
        if not np.all(np.isfinite(p)) or p.min() < 0.0 or p.max() > 1.0:
            raise InputError("label probabilities must be finite and in [0, 1]")
        if np.max(np.abs(p.sum(axis=2) - 1.0)) > 1e-6:
            raise InputError("label distributions must sum to 1 within 1e-6")
        p = p.copy()
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @classmethod
    def normalized(cls, probs) -> "LabelProbMap":
        return cls(renormalize(probs))

    @classmethod
    def one_hot(cls, labels, classes: int, confidence: float = 1.0) -> "LabelProbMap":
        labels = np.asarray(labels)
        off = (1.0 - confidence) / (classes - 1) if classes > 1 else 0.0
        p = np.full(labels.shape + (classes,), off)
        np.put_along_axis(p, labels[..., None], confidence, axis=2)
        return cls(p)

    @property
    def height(self) -> int:
        return self.probs.shape[0]

    @property
    def width(self) -> int:
        return self.probs.shape[1]

    @property
    def classes(self) -> int:
        return self.probs.shape[2]

    def argmax(self) -> np.ndarray:
        return np.argmax(self.probs, axis=2)


_SIMPLEX_TOL = 1e-12


def renormalize(probs) -> np.ndarray:
    """Project per-pixel vectors onto the simplex by clipping and rescaling.

    Rows that are all zero become uniform.  Applying this twice is the same
    as applying it once.
    """
    p = np.clip(np.asarray(probs, dtype=np.float64), 0.0, None)
    s = p.sum(axis=-1, keepdims=True)
    uniform = np.full_like(p, 1.0 / p.shape[-1])
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(s > 0, p / s, uniform)
    # rows already on the simplex up to rounding are left alone, which makes
    # the map exactly idempotent
    return np.where(np.abs(s - 1.0) <= _SIMPLEX_TOL, p, out)


class BoundaryLabel(enum.IntEnum):
    COPLANAR = 0
    HINGE = 1
    LEFT_OCC = 2  # first superpixel of the (i < j) pair is in front
    RIGHT_OCC = 3  # second superpixel is in front

    @property
    def is_occlusion(self) -> bool:
        return self in (BoundaryLabel.LEFT_OCC, BoundaryLabel.RIGHT_OCC)


@dataclass(frozen=True)
class OcclusionState:
    """Pixel occlusion mask plus one boundary label per adjacency edge.

    ``edge_sets`` optionally attributes occluded pixels to the edge that
    explains them (flat pixel indices inside the edge's two superpixels).
    When given, the connectivity potentials of an edge look only at the
    pixels that edge owns and ``mask`` must equal the union of all sets.
    When omitted, every edge sees the global mask restricted to its two
    superpixels.
    """

    mask: np.ndarray
    edge_labels: dict
    edge_sets: dict | None = None

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool).copy()
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)
        labels = {tuple(k): BoundaryLabel(v) for k, v in self.edge_labels.items()}
        object.__setattr__(self, "edge_labels", labels)
        if self.edge_sets is not None:
            sets = {tuple(k): np.unique(np.asarray(v, dtype=np.int64)) for k, v in self.edge_sets.items()}
            union = np.zeros(mask.size, dtype=bool)
            for v in sets.values():
                union[v] = True
            if not np.array_equal(union, mask.ravel()):
                raise InputError("occlusion mask must equal the union of the per-edge sets")
            object.__setattr__(self, "edge_sets", sets)

    @classmethod
    def empty(cls, seg: SuperpixelSegmentation, label=BoundaryLabel.COPLANAR) -> "OcclusionState":
        return cls(
            mask=np.zeros(seg.shape, dtype=bool),
            edge_labels={e: label for e in seg.edges},
            edge_sets={e: np.zeros(0, dtype=np.int64) for e in seg.edges},
        )

    def check(self, seg: SuperpixelSegmentation) -> None:
        if self.mask.shape != seg.shape:
            raise InputError("occlusion mask shape does not match the segmentation")
        if set(self.edge_labels) != set(seg.edges):
            raise InputError("edge labels must be keyed exactly by the adjacency set")
        if self.edge_sets is not None and set(self.edge_sets) != set(seg.edges):
            raise InputError("edge sets must be keyed exactly by the adjacency set")

    def owned(self, seg: SuperpixelSegmentation, edge) -> np.ndarray:
        """Boolean flags over ``seg.union(*edge)``: which pixels this edge treats as occluded."""
        union = seg.union(*edge)
        if self.edge_sets is None:
            return self.mask.ravel()[union]
        return np.isin(union, self.edge_sets[edge])


# ---------------------------------------------------------------------------
# semantic classes and configuration


@dataclass(frozen=True)
class SemanticClass:
    id: int
    name: str
    is_static: bool


@dataclass(frozen=True)
class SemanticClassTable:
    classes: tuple

    def __post_init__(self):
        ids = [c.id for c in self.classes]
        if ids != list(range(len(ids))):
            raise InputError("class ids must be contiguous 0..L-1")
        flags = {c.is_static for c in self.classes}
        if flags != {True, False}:
            raise InputError("class table needs at least one static and one non-static class")

    @classmethod
    def from_static(cls, count: int, static: Iterable[int], names=None) -> "SemanticClassTable":
        static = set(static)
        names = names or [f"class{i}" for i in range(count)]
        return cls(tuple(SemanticClass(i, names[i], i in static) for i in range(count)))

    def __len__(self) -> int:
        return len(self.classes)

    @property
    def static_mask(self) -> np.ndarray:
        return np.array([c.is_static for c in self.classes])


@dataclass(frozen=True)
class EnergyConfig:
    """Weights and solver settings.

    Defaults are hand-set for synthetic scenes of a few thousand pixels; all
    of them can be overridden from a ``key = value`` config file.
    """

    lambda_L: float = 1.0
    lambda_P: float = 1.0
    lambda_C: float = 0.1
    lambda_B: float = 1.0
    lambda_o: float = 6.0
    alpha: float = 0.5
    lambda_non_st: float = 0.5
    beta: float = 1.5
    lambda_imp: float = 1e6
    lambda_co: float = 0.5
    lambda_h: float = 1.0
    lambda_occ: float = 1.5
    tau_D: float = 24.0
    census_radius: int = 3
    census_eps: float = 0.0078
    particle_count: int = 5
    inner_iters: int = 2
    outer_iters: int = 5
    rng_seed: int = 0
    sigma0: float = 3.0
    gamma: float = 0.5
    max_disp: int = 64
    lk_iters: int = 20
    f_gate: float = 2.0
    ransac_iters: int = 1000
    ransac_thresh: float = 1.0
    static_classes: tuple = (0,)

    def replace(self, **changes) -> "EnergyConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return EnergyConfig(**values)

    def finite_bound(self, n_pixels: int, n_superpixels: int, n_edges: int, extent: float) -> float:
        """Upper bound on the finite part of the energy for one instance.

        ``extent`` bounds the L1 distance between two mapped points, e.g. twice
        the image width plus height plus the motion search window.
        """
        data = n_superpixels * max(self.tau_D, self.lambda_o)
        label = self.lambda_L * n_superpixels
        phys = self.lambda_P * n_superpixels * (self.lambda_non_st + self.beta)
        conn = self.lambda_C * n_edges * extent
        prior = self.lambda_B * n_edges * max(self.lambda_co, self.lambda_h, self.lambda_occ)
        return data + label + phys + conn + prior


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    messages: tuple = field(default_factory=tuple)

    def __bool__(self) -> bool:
        return self.ok


def validate_config(cfg: EnergyConfig, table: SemanticClassTable | None = None,
                    instance_bound: float | None = None) -> ValidationReport:
    """Check every configuration invariant; never raises."""
    msgs = []
    for name in ("lambda_L", "lambda_P", "lambda_C", "lambda_B", "lambda_o", "lambda_non_st",
                 "beta", "lambda_imp", "lambda_co", "lambda_h", "lambda_occ", "tau_D", "census_eps",
                 "sigma0", "f_gate", "ransac_thresh"):
        v = getattr(cfg, name)
        if not np.isfinite(v) or v < 0:
            msgs.append(f"{name} must be finite and >= 0 (got {v})")
    if not (cfg.lambda_occ > cfg.lambda_h > cfg.lambda_co > 0):
        msgs.append("boundary priors must satisfy lambda_occ > lambda_h > lambda_co > 0 "
                    f"(got {cfg.lambda_occ}, {cfg.lambda_h}, {cfg.lambda_co})")
    if not 0.0 <= cfg.alpha <= 1.0:
        msgs.append(f"alpha must lie in [0, 1] (got {cfg.alpha})")
    if not 0.0 < cfg.gamma <= 1.0:
        msgs.append(f"gamma must lie in (0, 1] (got {cfg.gamma})")
    for name in ("census_radius", "particle_count", "inner_iters", "outer_iters", "lk_iters",
                 "ransac_iters", "max_disp"):
        v = getattr(cfg, name)
        if int(v) != v or v < 1:
            msgs.append(f"{name} must be a positive integer (got {v})")
    if int(cfg.rng_seed) != cfg.rng_seed:
        msgs.append(f"rng_seed must be an integer (got {cfg.rng_seed})")
    if table is not None:
        bad = [c for c in cfg.static_classes if not 0 <= c < len(table)]
        if bad:
            msgs.append(f"static_classes {bad} are not in the class table")
    if instance_bound is not None and not cfg.lambda_imp > instance_bound:
        msgs.append(f"lambda_imp={cfg.lambda_imp} must exceed the finite energy bound {instance_bound:.6g}")
    return ValidationReport(ok=not msgs, messages=tuple(msgs))


# ---------------------------------------------------------------------------
# flow


@dataclass(frozen=True)
class FlowField:
    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if u.shape != v.shape or u.shape != valid.shape or u.ndim != 2:
            raise InputError("flow components and validity must share one 2-D shape")
        u = np.where(valid, u, 0.0)
        v = np.where(valid, v, 0.0)
        for a in (u, v, valid):
            a.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def zeros(cls, height: int, width: int) -> "FlowField":
        z = np.zeros((height, width))
        return cls(z, z, np.ones((height, width), dtype=bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape


def pixel_grid(height: int, width: int) -> np.ndarray:
    """Homogeneous coordinates of every pixel, shape ``(h*w, 3)`` in flat order."""
    ys, xs = np.mgrid[0:height, 0:width]
    return np.stack([xs.ravel(), ys.ravel(), np.ones(height * width)], axis=1).astype(np.float64)


def project(mats: np.ndarray, pts: np.ndarray):
    """Apply homographies to homogeneous points.

    ``mats`` is ``(3, 3)`` or ``(k, 3, 3)``; ``pts`` is ``(n, 3)``.  Returns the
    dehomogenized ``(..., n, 2)`` points and a validity mask; degenerate points
    come back as NaN.
    """
    hp = pts @ np.swapaxes(mats, -1, -2)
    w = hp[..., 2]
    ok = w > DEGENERATE_W
    with np.errstate(divide="ignore", invalid="ignore"):
        xy = hp[..., :2] / np.where(ok, w, np.nan)[..., None]
    return xy, ok


def dense_flow(mf: MotionField, seg: SuperpixelSegmentation) -> FlowField:
    """Per-pixel displacement induced by each superpixel's homography."""
    if len(mf) != seg.count:
        raise InputError(f"motion field has {len(mf)} homographies for {seg.count} superpixels")
    h, w = seg.shape
    pts = pixel_grid(h, w)
    hp = np.einsum("nij,nj->ni", mf.mats[seg.id_map.ravel()], pts)
    wz = hp[:, 2]
    valid = wz > DEGENERATE_W
    safe = np.where(valid, wz, 1.0)
    u = np.where(valid, hp[:, 0] / safe - pts[:, 0], 0.0)
    v = np.where(valid, hp[:, 1] / safe - pts[:, 1], 0.0)
    return FlowField(u.reshape(h, w), v.reshape(h, w), valid.reshape(h, w))
