"""Exact box/point arithmetic: conversions, IoU, anchor prototypes, delta
encoding, and the two stochastic samplers (ellipse click, box perturbation).

Everything here is pure and dependency-free (numpy only for array helpers);
stochastic functions take an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError, InvalidGeometryError, PointOutsideBoxError

# log-size components of a BoxDelta are clamped to this magnitude before
# exponentiation, keeping decoded boxes finite
DELTA_CLAMP = 4.0


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InvalidGeometryError(f"point coordinates must be finite, got ({self.x}, {self.y})")
        if self.x < 0 or self.y < 0:
            raise InvalidGeometryError(f"point coordinates must be >= 0, got ({self.x}, {self.y})")


@dataclass(frozen=True)
class Box:
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        vals = (self.x0, self.y0, self.x1, self.y1)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidGeometryError(f"box coordinates must be finite, got {vals}")
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise InvalidGeometryError(f"box must have strictly positive area, got {vals}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> Point:
        return Point((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)

    def contains(self, p: Point) -> bool:
        """Strict interior containment."""
        return self.x0 < p.x < self.x1 and self.y0 < p.y < self.y1

    def to_list(self) -> list[float]:
        return [float(self.x0), float(self.y0), float(self.x1), float(self.y1)]

    @staticmethod
    def from_list(vals) -> "Box":
        x0, y0, x1, y1 = (float(v) for v in vals)
        return Box(x0, y0, x1, y1)

    def as_array(self) -> np.ndarray:
        return np.array([self.x0, self.y0, self.x1, self.y1], dtype=np.float64)

    def clipped(self, width: float, height: float) -> "Box":
        """Clip to [0, width] x [0, height]; degenerate results raise."""
        x0 = max(0.0, self.x0)
        y0 = max(0.0, self.y0)
        x1 = min(float(width), self.x1)
        y1 = min(float(height), self.y1)
        if not (x0 < x1 and y0 < y1):
            raise InvalidGeometryError(f"box {self} lies fully outside a {width}x{height} image")
        return Box(x0, y0, x1, y1)


@dataclass(frozen=True)
class EdgeDistances:
    l: float
    t: float
    r: float
    b: float

    def __post_init__(self):
        vals = (self.l, self.t, self.r, self.b)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidGeometryError(f"edge distances must be finite, got {vals}")
        if any(v < 0 for v in vals):
            raise InvalidGeometryError(f"edge distances must be >= 0, got {vals}")


@dataclass(frozen=True)
class AnchorConfig:
    """Anchor prototype grid: ``scales`` are areas in pixels^2, ``ratios``
    are width:height. The grid yields k = len(scales) * len(ratios) boxes."""

    scales: tuple[float, ...] = (32.0**2, 64.0**2, 128.0**2, 256.0**2)
    ratios: tuple[float, ...] = (2.0, 1.0, 0.5)

    def __post_init__(self):
        if not self.scales or not self.ratios:
            raise InvalidGeometryError("anchor config needs at least one scale and one ratio")
        if any(s <= 0 for s in self.scales) or any(r <= 0 for r in self.ratios):
            raise InvalidGeometryError("anchor scales and ratios must be positive")

    @property
    def count(self) -> int:
        return len(self.scales) * len(self.ratios)


@dataclass(frozen=True)
class BoxDelta:
    dx: float
    dy: float
    dw: float
    dh: float

    def __post_init__(self):
        vals = (self.dx, self.dy, self.dw, self.dh)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidGeometryError(f"box delta must be finite, got {vals}")


def box_from_point_distances(p: Point, d: EdgeDistances) -> Box:
    """Expand a point into a box by its distances to the four edges."""
    if d.l + d.r <= 0 or d.t + d.b <= 0:
        raise InvalidGeometryError(f"distances {d} give a zero-area box")
    return Box(p.x - d.l, p.y - d.t, p.x + d.r, p.y + d.b)


def distances_from_box(p: Point, b: Box) -> EdgeDistances:
    """Distances from an interior point to the four edges of a box."""
    if not b.contains(p):
        raise PointOutsideBoxError(f"point ({p.x}, {p.y}) is not strictly inside {b}")
    return EdgeDistances(p.x - b.x0, p.y - b.y0, b.x1 - p.x, b.y1 - p.y)


def iou(a: Box, b: Box) -> float:
    ix0 = max(a.x0, b.x0)
    iy0 = max(a.y0, b.y0)
    ix1 = min(a.x1, b.x1)
    iy1 = min(a.y1, b.y1)
    iw = max(0.0, ix1 - ix0)
    ih = max(0.0, iy1 - iy0)
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of (n, 4) and (m, 4) box arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ix0 = np.maximum(a[:, None, 0], b[None, :, 0])
    iy0 = np.maximum(a[:, None, 1], b[None, :, 1])
    ix1 = np.minimum(a[:, None, 2], b[None, :, 2])
    iy1 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.clip(ix1 - ix0, 0, None) * np.clip(iy1 - iy0, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    return inter / (area_a[:, None] + area_b[None, :] - inter)


def generate_prototypes(p: Point, cfg: AnchorConfig, image_size: tuple[int, int]) -> list[Box]:
    """Anchor boxes centered on a point, clipped to the image.

    ``image_size`` is (height, width). Output order is scales-major,
    ratios-minor, so the layout is deterministic for a given config.
    """
    height, width = image_size
    if not (0 <= p.x <= width and 0 <= p.y <= height):
        raise PointOutsideBoxError(f"point ({p.x}, {p.y}) outside {width}x{height} image")
    out = []
    for area in cfg.scales:
        for ratio in cfg.ratios:
            w = math.sqrt(area * ratio)
            h = math.sqrt(area / ratio)
            raw = Box(p.x - w / 2.0, p.y - h / 2.0, p.x + w / 2.0, p.y + h / 2.0)
            out.append(raw.clipped(width, height))
    return out


def encode_delta(anchor: Box, target: Box) -> BoxDelta:
    """Center-offset / log-size encoding of a target box against an anchor."""
    dx = ((target.x0 + target.x1) - (anchor.x0 + anchor.x1)) / 2.0 / anchor.width
    dy = ((target.y0 + target.y1) - (anchor.y0 + anchor.y1)) / 2.0 / anchor.height
    dw = math.log(target.width / anchor.width)
    dh = math.log(target.height / anchor.height)
    return BoxDelta(dx, dy, dw, dh)


def apply_delta(anchor: Box, d: BoxDelta) -> Box:
    cx = (anchor.x0 + anchor.x1) / 2.0 + d.dx * anchor.width
    cy = (anchor.y0 + anchor.y1) / 2.0 + d.dy * anchor.height
    w = anchor.width * math.exp(max(-DELTA_CLAMP, min(DELTA_CLAMP, d.dw)))
    h = anchor.height * math.exp(max(-DELTA_CLAMP, min(DELTA_CLAMP, d.dh)))
    return Box(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)


def encode_deltas(anchors: np.ndarray, target: Box) -> np.ndarray:
    """Array form of :func:`encode_delta` for (k, 4) anchors vs one target."""
    a = np.asarray(anchors, dtype=np.float64)
    aw = a[:, 2] - a[:, 0]
    ah = a[:, 3] - a[:, 1]
    dx = ((target.x0 + target.x1) - (a[:, 0] + a[:, 2])) / 2.0 / aw
    dy = ((target.y0 + target.y1) - (a[:, 1] + a[:, 3])) / 2.0 / ah
    dw = np.log(target.width / aw)
    dh = np.log(target.height / ah)
    return np.stack([dx, dy, dw, dh], axis=1)


def sample_click(gt: Box, rng: np.random.Generator) -> Point:
    """Uniform sample from the ellipse centered on the box with semi-axes a
    quarter of the box width and height; always strictly inside the box."""
    while True:
        u = rng.uniform(-1.0, 1.0)
        v = rng.uniform(-1.0, 1.0)
        if u * u + v * v <= 1.0:
            break
    c = gt.center
    return Point(c.x + u * gt.width / 4.0, c.y + v * gt.height / 4.0)


def perturb_box(gt: Box, rate: float, rng: np.random.Generator) -> Box:
    """Displace each edge independently by uniform(-rate, +rate) times the
    corresponding side length. rate 0 returns the box unchanged."""
    if not 0.0 <= rate <= 0.5:
        raise InputError(f"deviation rate must be in [0, 0.5], got {rate}")
    if rate == 0.0:
        return gt
    w, h = gt.width, gt.height
    for _ in range(16):
        dx0, dx1 = rng.uniform(-rate, rate, 2) * w
        dy0, dy1 = rng.uniform(-rate, rate, 2) * h
        x0, x1 = gt.x0 + dx0, gt.x1 + dx1
        y0, y1 = gt.y0 + dy0, gt.y1 + dy1
        if x0 < x1 and y0 < y1:
            return Box(x0, y0, x1, y1)
    raise InvalidGeometryError(f"could not perturb {gt} at rate {rate} without collapsing it")
