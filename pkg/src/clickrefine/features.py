"""Image encoding and feature extraction.

The backbone is a small from-scratch convolutional encoder: four 3x3 conv
blocks, the first three with stride 2, giving a stride-8 feature map with C
output channels. RoI features and point features are both read from this one
map by bilinear interpolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import geometry as geo
from .errors import DegenerateRegionError, InputError

IMAGE_MIN_SIDE = 32
FEATURE_STRIDE = 8

#: (conv output channels per block); strides are (2, 2, 2, 1)
DEFAULT_CHANNELS = (16, 32, 64, 64)
BLOCK_STRIDES = (2, 2, 2, 1)


def validate_image(img: np.ndarray) -> np.ndarray:
    if img.ndim != 3 or img.shape[2] != 3:
        raise InputError(f"expected (H, W, 3) image, got shape {img.shape}")
    h, w = img.shape[:2]
    if h < IMAGE_MIN_SIDE or w < IMAGE_MIN_SIDE:
        raise InputError(f"image must be at least {IMAGE_MIN_SIDE}px per side, got {h}x{w}")
    if not np.isfinite(img).all():
        raise InputError("image contains non-finite values")
    lo, hi = float(img.min()), float(img.max())
    if lo < 0.0 or hi > 1.0:
        raise InputError(f"image values must lie in [0, 1], got [{lo}, {hi}]")
    return img


@dataclass
class FeatureMap:
    tensor: ad.Tensor  # (H', W', C)
    stride: int

    @property
    def channels(self) -> int:
        return self.tensor.shape[2]


def init_backbone_params(
    rng: np.random.Generator,
    channels=DEFAULT_CHANNELS,
    in_channels: int = 3,
    dtype=np.float32,
) -> dict[str, ad.Tensor]:
    params: dict[str, ad.Tensor] = {}
    cin = in_channels
    for i, cout in enumerate(channels):
        std = math.sqrt(2.0 / (9 * cin))
        params[f"backbone.conv{i}.w"] = ad.parameter(
            rng.normal(0.0, std, size=(3, 3, cin, cout)).astype(dtype)
        )
        params[f"backbone.conv{i}.b"] = ad.parameter(np.zeros(cout, dtype=dtype))
        cin = cout
    return params


def backbone_stride(channels=DEFAULT_CHANNELS) -> int:
    out = 1
    for s in BLOCK_STRIDES[: len(channels)]:
        out *= s
    return out


def encode_image(
    params: dict[str, ad.Tensor], img: np.ndarray, channels=DEFAULT_CHANNELS, dtype=np.float32
) -> FeatureMap:
    """Run the backbone; with the default depth the output spatial dims are
    ceil(H/8) x ceil(W/8).

    Deterministic given the weights; differentiable with respect to them.
    """
    validate_image(img)
    x = ad.wrap(np.ascontiguousarray(img, dtype=dtype))
    x = ad.mul(ad.sub(x, 0.5), 2.0)  # center to [-1, 1]
    for i in range(len(channels)):
        x = ad.conv2d(x, params[f"backbone.conv{i}.w"], params[f"backbone.conv{i}.b"], stride=BLOCK_STRIDES[i], pad=1)
        x = ad.relu(x)
    return FeatureMap(tensor=x, stride=backbone_stride(channels))


def _boxes_to_feature_coords(fm: FeatureMap, boxes) -> ad.Tensor:
    if isinstance(boxes, ad.Tensor):
        return ad.mul(boxes, 1.0 / fm.stride)
    if isinstance(boxes, geo.Box):
        arr = boxes.as_array().reshape(1, 4)
    elif isinstance(boxes, (list, tuple)) and boxes and isinstance(boxes[0], geo.Box):
        arr = np.stack([b.as_array() for b in boxes])
    else:
        arr = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    return ad.wrap(arr / fm.stride)


def roi_align(fm: FeatureMap, boxes, out_size: int, samples: int = 2) -> ad.Tensor:
    """Pool RoI features for boxes given in image coordinates.

    ``boxes`` may be a Box, a list of Boxes, an (n, 4) array, or an (n, 4)
    Tensor (in which case gradients flow into the box coordinates).
    Out-of-bounds samples read as zero.
    """
    fboxes = _boxes_to_feature_coords(fm, boxes)
    if fboxes.data.ndim != 2 or fboxes.data.shape[1] != 4:
        raise InputError(f"boxes must be (n, 4), got {fboxes.data.shape}")
    return ad.roi_align(fm.tensor, fboxes, out_size, samples)


def point_feature(fm: FeatureMap, p: geo.Point) -> ad.Tensor:
    """Bilinear lookup of the feature map at the point's fractional position."""
    return ad.point_sample(fm.tensor, p.y / fm.stride, p.x / fm.stride)


def bfr_region(p: geo.Point, image_size: tuple[int, int]) -> geo.Box:
    """Square region centered on the click whose half-side is the shortest
    distance from the click to the image boundary. ``image_size`` is (H, W)."""
    height, width = image_size
    half = min(p.x, p.y, width - p.x, height - p.y)
    if half < 1.0:
        raise DegenerateRegionError(
            f"point ({p.x}, {p.y}) is within 1px of the {width}x{height} image boundary"
        )
    return geo.Box(p.x - half, p.y - half, p.x + half, p.y + half)
