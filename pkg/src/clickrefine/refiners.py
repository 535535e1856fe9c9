"""Point-to-box refiners.

Three refiners share one backbone:

* ``gcr`` — guidance-conditioned anchor refinement: anchor prototypes around
  the click are adjusted and scored by guided-convolution blocks, the best
  one is sharpened further by a cascade of refinement stages.
* ``pfr`` — a linear head on the single point feature.
* ``bfr`` — a linear head on RoI features of the boundary-bounded square
  around the click.

A guided-convolution block mixes RoI features with dynamic parameters
generated from a guidance vector (either one shared learned vector or a
category embedding), so the same click can resolve to different boxes under
different category guidance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import features as ft
from . import geometry as geo
from . import vocab
from .errors import (
    NumericError,
    PointOutsideBoxError,
    RefinementFailedError,
    VocabularyError,
)

REFINER_NAMES = ("gcr", "bfr", "pfr")


@dataclass(frozen=True)
class ModelConfig:
    channels: tuple[int, ...] = ft.DEFAULT_CHANNELS
    roi_size: int = 7
    mid_channels: int = 16
    anchor_scales: tuple[float, ...] = (32.0**2, 64.0**2, 128.0**2, 256.0**2)
    anchor_ratios: tuple[float, ...] = (2.0, 1.0, 0.5)
    stages: int = 2
    categories: tuple[str, ...] = vocab.CATEGORIES
    dtype: str = "f32"

    @property
    def feature_channels(self) -> int:
        return self.channels[-1]

    @property
    def anchor_config(self) -> geo.AnchorConfig:
        return geo.AnchorConfig(scales=self.anchor_scales, ratios=self.anchor_ratios)

    @property
    def num_anchors(self) -> int:
        return len(self.anchor_scales) * len(self.anchor_ratios)

    @property
    def np_dtype(self):
        return {"f32": np.float32, "f64": np.float64}[self.dtype]


TINY_CONFIG = ModelConfig(
    channels=(4, 8),
    roi_size=3,
    mid_channels=4,
    anchor_scales=(24.0**2, 48.0**2),
    anchor_ratios=(1.0,),
    stages=1,
    dtype="f64",
)


@dataclass
class RefinerOutput:
    final_box: geo.Box
    stage_boxes: list[geo.Box]  # selected prototype, then one per cascade stage
    iou_scores: np.ndarray  # (k,) predicted overlap quality per refined anchor
    selected_index: int
    guidance_kind: str


@dataclass
class GcrForward:
    """Tensor-level trace of one gcr forward pass (kept for the loss)."""

    anchors: np.ndarray  # (k, 4) clipped prototypes
    ps_deltas: ad.Tensor  # (k, 4)
    refined: ad.Tensor  # (k, 4) prototype boxes after first adjustment
    scores: ad.Tensor  # (k,) in (0, 1)
    selected_index: int
    trace: list[ad.Tensor]  # [(4,) selected, then one per stage]
    guidance_kind: str


def _backbone_strides(cfg: ModelConfig):
    return ft.BLOCK_STRIDES[: len(cfg.channels)]


# ---------------------------------------------------------------------------
# parameter initialization
# ---------------------------------------------------------------------------


def _init_gc_params(rng, prefix: str, cfg: ModelConfig, params: dict, dtype) -> None:
    c = cfg.feature_channels
    mc = cfg.mid_channels
    s = cfg.roi_size
    gen_std = 1.0 / c
    params[f"{prefix}.gen1.w"] = ad.parameter(rng.normal(0, gen_std, size=(c, c * mc)).astype(dtype))
    params[f"{prefix}.gen1.b"] = ad.parameter(np.zeros(c * mc, dtype=dtype))
    params[f"{prefix}.gen2.w"] = ad.parameter(rng.normal(0, gen_std, size=(c, mc * c)).astype(dtype))
    params[f"{prefix}.gen2.b"] = ad.parameter(np.zeros(mc * c, dtype=dtype))
    post_std = 1.0 / math.sqrt(s * s * c)
    params[f"{prefix}.post.w"] = ad.parameter(rng.normal(0, post_std, size=(s * s * c, c)).astype(dtype))
    params[f"{prefix}.post.b"] = ad.parameter(np.zeros(c, dtype=dtype))


def _init_linear(rng, prefix: str, n_in: int, n_out: int, params: dict, dtype, std=0.0, bias=0.0):
    w = rng.normal(0, std, size=(n_in, n_out)) if std > 0 else np.zeros((n_in, n_out))
    params[f"{prefix}.w"] = ad.parameter(w.astype(dtype))
    params[f"{prefix}.b"] = ad.parameter(np.full(n_out, bias, dtype=dtype))


def init_model_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, ad.Tensor]:
    dtype = cfg.np_dtype
    params = ft.init_backbone_params(rng, channels=cfg.channels, dtype=dtype)
    c = cfg.feature_channels
    s = cfg.roi_size
    # guidance vectors
    params["guidance.table"] = ad.parameter(rng.normal(0, 1.0, size=(len(cfg.categories), c)).astype(dtype))
    params["guidance.learned"] = ad.parameter(rng.normal(0, 1.0, size=(c,)).astype(dtype))
    # prototype selection: adjust + score
    _init_gc_params(rng, "ps.gc1", cfg, params, dtype)
    _init_linear(rng, "ps.delta", c, 4, params, dtype)
    _init_gc_params(rng, "ps.gc2", cfg, params, dtype)
    _init_linear(rng, "ps.iou", c, 1, params, dtype)
    # cascade stages
    for i in range(cfg.stages):
        _init_gc_params(rng, f"ir.stage{i}.gc", cfg, params, dtype)
        _init_linear(rng, f"ir.stage{i}.delta", c, 4, params, dtype)
    # baselines: positive-squashed edge distances, start near 20px half-extent
    beta0 = 20.0
    _init_linear(rng, "bfr.head", s * s * c, 4, params, dtype, bias=beta0)
    _init_linear(rng, "pfr.head", c, 4, params, dtype, bias=beta0)
    return params


class RefinerModel:
    """Parameter container shared by all three refiners."""

    def __init__(self, cfg: ModelConfig, params: dict[str, ad.Tensor], step: int = 0):
        self.cfg = cfg
        self.params = params
        self.step = step

    @classmethod
    def initialize(cls, cfg: ModelConfig = ModelConfig(), seed: int = 0) -> "RefinerModel":
        return cls(cfg, init_model_params(cfg, np.random.default_rng(seed)))

    def encode(self, img: np.ndarray) -> ft.FeatureMap:
        return ft.encode_image(self.params, img, channels=self.cfg.channels, dtype=self.cfg.np_dtype)

    def refine(self, img, p, category=None, refiner: str = "gcr"):
        if refiner == "gcr":
            return gcr_refine(self, img, p, category)
        if refiner == "bfr":
            return bfr_refine(self, img, p)
        if refiner == "pfr":
            return pfr_refine(self, img, p)
        raise VocabularyError(f"unknown refiner {refiner!r}; expected one of {REFINER_NAMES}")


# ---------------------------------------------------------------------------
# guidance
# ---------------------------------------------------------------------------


def make_guidance(model: RefinerModel, category: str | None) -> tuple[ad.Tensor, str]:
    """Guidance vector for a refinement: the shared learned vector when no
    category is given, otherwise the category's embedding."""
    if category is None:
        return model.params["guidance.learned"], "learnable"
    if category not in model.cfg.categories:
        raise VocabularyError(f"category {category!r} not in vocabulary {model.cfg.categories}")
    idx = model.cfg.categories.index(category)
    return ad.getitem(model.params["guidance.table"], idx), f"category:{category}"


# ---------------------------------------------------------------------------
# guided convolution
# ---------------------------------------------------------------------------


def guided_conv(params: dict, prefix: str, f_roi: ad.Tensor, f_g: ad.Tensor, cfg: ModelConfig) -> ad.Tensor:
    """Mix RoI features with parameters generated from the guidance vector.

    ``f_roi`` is (k, S, S, C) (or (S, S, C) for a single RoI), ``f_g`` is
    (C,). Returns (k, C) fused vectors (or (C,)). Linear in ``f_roi`` for a
    fixed guidance vector.
    """
    single = f_roi.data.ndim == 3
    c = cfg.feature_channels
    mc = cfg.mid_channels
    s = cfg.roi_size
    k = 1 if single else f_roi.shape[0]
    g_row = ad.reshape(f_g, (1, c))
    p1 = ad.reshape(ad.add(ad.matmul(g_row, params[f"{prefix}.gen1.w"]), params[f"{prefix}.gen1.b"]), (c, mc))
    p2 = ad.reshape(ad.add(ad.matmul(g_row, params[f"{prefix}.gen2.w"]), params[f"{prefix}.gen2.b"]), (mc, c))
    flat = ad.reshape(f_roi, (k, s * s, c))
    fused = ad.matmul(ad.matmul(flat, p1), p2)  # (k, S*S, C)
    out = ad.add(ad.matmul(ad.reshape(fused, (k, s * s * c)), params[f"{prefix}.post.w"]), params[f"{prefix}.post.b"])
    if not np.isfinite(out.data).all():
        raise NumericError("guided convolution produced non-finite values")
    if single:
        return ad.reshape(out, (c,))
    return out


# ---------------------------------------------------------------------------
# tensor-level box arithmetic (mirrors geometry.apply_delta)
# ---------------------------------------------------------------------------


def apply_delta_tensor(anchors, deltas: ad.Tensor) -> ad.Tensor:
    """Differentiable form of :func:`geometry.apply_delta` for (k, 4) inputs;
    ``anchors`` may be a constant array or a Tensor from a previous stage."""
    a = anchors if isinstance(anchors, ad.Tensor) else ad.wrap(np.asarray(anchors, dtype=deltas.data.dtype))
    ax0, ay0 = a[:, 0], a[:, 1]
    ax1, ay1 = a[:, 2], a[:, 3]
    aw = ad.sub(ax1, ax0)
    ah = ad.sub(ay1, ay0)
    acx = ad.mul(ad.add(ax0, ax1), 0.5)
    acy = ad.mul(ad.add(ay0, ay1), 0.5)
    cx = ad.add(acx, ad.mul(deltas[:, 0], aw))
    cy = ad.add(acy, ad.mul(deltas[:, 1], ah))
    w = ad.mul(aw, ad.exp(ad.clip(deltas[:, 2], -geo.DELTA_CLAMP, geo.DELTA_CLAMP)))
    h = ad.mul(ah, ad.exp(ad.clip(deltas[:, 3], -geo.DELTA_CLAMP, geo.DELTA_CLAMP)))
    half_w = ad.mul(w, 0.5)
    half_h = ad.mul(h, 0.5)
    return ad.stack(
        [ad.sub(cx, half_w), ad.sub(cy, half_h), ad.add(cx, half_w), ad.add(cy, half_h)],
        axis=1,
    )


def _box_from_row(row: np.ndarray) -> geo.Box:
    return geo.Box(float(row[0]), float(row[1]), float(row[2]), float(row[3]))


# ---------------------------------------------------------------------------
# prototype selection
# ---------------------------------------------------------------------------


def prototype_select(
    model: RefinerModel,
    fm: ft.FeatureMap,
    p: geo.Point,
    f_g: ad.Tensor,
    image_size: tuple[int, int],
) -> GcrForward:
    cfg = model.cfg
    prototypes = geo.generate_prototypes(p, cfg.anchor_config, image_size)
    anchors = np.stack([b.as_array() for b in prototypes])
    roi1 = ft.roi_align(fm, anchors, cfg.roi_size)
    fused1 = guided_conv(model.params, "ps.gc1", roi1, f_g, cfg)
    deltas = ad.add(ad.matmul(fused1, model.params["ps.delta.w"]), model.params["ps.delta.b"])
    refined = apply_delta_tensor(anchors, deltas)
    if not np.isfinite(refined.data).all():
        raise NumericError("prototype adjustment produced non-finite boxes")
    widths = refined.data[:, 2] - refined.data[:, 0]
    heights = refined.data[:, 3] - refined.data[:, 1]
    if bool(np.all((widths < 1e-3) | (heights < 1e-3))):
        raise RefinementFailedError("all refined prototypes are degenerate")
    roi2 = ft.roi_align(fm, refined, cfg.roi_size)
    fused2 = guided_conv(model.params, "ps.gc2", roi2, f_g, cfg)
    raw = ad.add(ad.matmul(fused2, model.params["ps.iou.w"]), model.params["ps.iou.b"])
    scores = ad.reshape(ad.sigmoid(raw), (cfg.num_anchors,))
    selected = int(np.argmax(scores.data))  # ties resolve to the lowest index
    return GcrForward(
        anchors=anchors,
        ps_deltas=deltas,
        refined=refined,
        scores=scores,
        selected_index=selected,
        trace=[],
        guidance_kind="",
    )


# ---------------------------------------------------------------------------
# iterative refinement cascade
# ---------------------------------------------------------------------------


def iterative_refine(
    model: RefinerModel,
    fm: ft.FeatureMap,
    box: ad.Tensor,
    f_g: ad.Tensor,
    stages: int | None = None,
) -> list[ad.Tensor]:
    """Cascade of per-stage adjustments; returns the trace [input, stage1,
    ..., stageN]. ``stages=0`` returns just the input."""
    cfg = model.cfg
    n = cfg.stages if stages is None else stages
    if n > cfg.stages:
        raise RefinementFailedError(f"model has {cfg.stages} cascade stages, requested {n}")
    current = box
    trace = [current]
    for i in range(n):
        roi = ft.roi_align(fm, ad.reshape(current, (1, 4)), cfg.roi_size)
        fused = guided_conv(model.params, f"ir.stage{i}.gc", roi, f_g, cfg)
        delta = ad.add(
            ad.matmul(ad.reshape(fused, (1, cfg.feature_channels)), model.params[f"ir.stage{i}.delta.w"]),
            model.params[f"ir.stage{i}.delta.b"],
        )
        nxt = ad.reshape(apply_delta_tensor(ad.reshape(current, (1, 4)), delta), (4,))
        if not np.isfinite(nxt.data).all():
            raise NumericError(f"cascade stage {i} produced non-finite box")
        if nxt.data[2] - nxt.data[0] < 1e-3 or nxt.data[3] - nxt.data[1] < 1e-3:
            raise RefinementFailedError(f"cascade stage {i} collapsed the box")
        current = nxt
        trace.append(current)
    return trace


# ---------------------------------------------------------------------------
# full refiners
# ---------------------------------------------------------------------------


def gcr_forward(
    model: RefinerModel,
    img: np.ndarray,
    p: geo.Point,
    category: str | None = None,
    fm: ft.FeatureMap | None = None,
    stages: int | None = None,
    guidance: ad.Tensor | None = None,
    guidance_kind: str | None = None,
) -> GcrForward:
    image_size = img.shape[:2]
    _require_inside(p, image_size)
    if fm is None:
        fm = model.encode(img)
    if guidance is None:
        guidance, guidance_kind = make_guidance(model, category)
    out = prototype_select(model, fm, p, guidance, image_size)
    selected_box = ad.reshape(ad.getitem(out.refined, out.selected_index), (4,))
    out.trace = iterative_refine(model, fm, selected_box, guidance, stages)
    out.guidance_kind = guidance_kind or "learnable"
    return out


def forward_to_output(fwd: GcrForward) -> RefinerOutput:
    return RefinerOutput(
        final_box=_box_from_row(fwd.trace[-1].data),
        stage_boxes=[_box_from_row(t.data) for t in fwd.trace],
        iou_scores=fwd.scores.data.astype(np.float64).copy(),
        selected_index=fwd.selected_index,
        guidance_kind=fwd.guidance_kind,
    )


def gcr_refine(
    model: RefinerModel,
    img: np.ndarray,
    p: geo.Point,
    category: str | None = None,
    fm: ft.FeatureMap | None = None,
    stages: int | None = None,
) -> RefinerOutput:
    return forward_to_output(gcr_forward(model, img, p, category, fm=fm, stages=stages))


def _edge_distance_tensor(model: RefinerModel, feat_row: ad.Tensor, head: str) -> ad.Tensor:
    raw = ad.add(ad.matmul(feat_row, model.params[f"{head}.w"]), model.params[f"{head}.b"])
    return ad.reshape(ad.softplus(raw), (4,))


def _distances_to_box_tensor(p: geo.Point, d: ad.Tensor) -> ad.Tensor:
    sign = np.array([-1.0, -1.0, 1.0, 1.0], dtype=d.data.dtype)
    base = np.array([p.x, p.y, p.x, p.y], dtype=d.data.dtype)
    return ad.add(ad.wrap(base), ad.mul(d, sign))


def bfr_forward(model, img, p, fm=None) -> tuple[ad.Tensor, ad.Tensor]:
    """Returns (edge distances (4,), box (4,)) tensors; distances are (l, t, r, b)."""
    image_size = img.shape[:2]
    _require_inside(p, image_size)
    region = ft.bfr_region(p, image_size)
    if fm is None:
        fm = model.encode(img)
    cfg = model.cfg
    roi = ft.roi_align(fm, region, cfg.roi_size)
    flat = ad.reshape(roi, (1, cfg.roi_size * cfg.roi_size * cfg.feature_channels))
    d = _edge_distance_tensor(model, flat, "bfr.head")
    return d, _distances_to_box_tensor(p, d)


def pfr_forward(model, img, p, fm=None) -> tuple[ad.Tensor, ad.Tensor]:
    image_size = img.shape[:2]
    _require_inside(p, image_size)
    if fm is None:
        fm = model.encode(img)
    cfg = model.cfg
    feat = ad.reshape(ft.point_feature(fm, p), (1, cfg.feature_channels))
    d = _edge_distance_tensor(model, feat, "pfr.head")
    return d, _distances_to_box_tensor(p, d)


def bfr_refine(model, img, p, fm=None) -> geo.Box:
    _, box = bfr_forward(model, img, p, fm=fm)
    return _box_from_row(box.data)


def pfr_refine(model, img, p, fm=None) -> geo.Box:
    _, box = pfr_forward(model, img, p, fm=fm)
    return _box_from_row(box.data)


def _require_inside(p: geo.Point, image_size: tuple[int, int]) -> None:
    h, w = image_size
    if not (0 <= p.x < w and 0 <= p.y < h):
        raise PointOutsideBoxError(f"click ({p.x}, {p.y}) outside {w}x{h} image")
