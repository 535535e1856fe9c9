"""Synthetic corpus: textured scenes with optional nested whole/part pairs,
smooth motion sequences, and the on-disk layout
``scenes/<id>/frame_<n:05>.png`` + ``annotations.json``.

Category appearance is what the refiners learn from, so each category has a
distinct shape/texture/palette family. Parts (plate, head, door) are always
rendered strictly inside their parent, producing the click ambiguity the
guidance mechanism is meant to resolve.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from . import geometry as geo
from . import vocab
from .errors import InputError

FORMAT_VERSION = 1


@dataclass
class SyntheticObject:
    id: int
    category: str
    parent: int | None
    boxes: list[geo.Box]
    shape: str  # "rect" | "ellipse"
    texture: dict
    velocity: tuple[float, float] = (0.0, 0.0)
    occluded: list[bool] = field(default_factory=list)


@dataclass
class SyntheticScene:
    frames: list[np.ndarray]  # (H, W, 3) float32 in [0, 1]
    objects: list[SyntheticObject]
    seed: int
    size: int

    @property
    def n_frames(self) -> int:
        return len(self.frames)


#: a sequence is a scene with more than one frame
FrameSequence = SyntheticScene


@dataclass(frozen=True)
class SceneConfig:
    size: int = 256
    min_objects: int = 2
    max_objects: int = 6
    nested_prob: float = 0.5
    margin: int = 6


@dataclass(frozen=True)
class MotionConfig:
    velocity: float = 2.0  # max per-axis speed, px/frame
    min_speed_frac: float = 0.25  # lower bound as fraction of velocity


# ---------------------------------------------------------------------------
# per-category blueprints
# ---------------------------------------------------------------------------


def _palette(rng, base, jitter=0.08):
    col = np.clip(np.asarray(base) + rng.uniform(-jitter, jitter, 3), 0.05, 0.95)
    return col.astype(np.float64)


def _spawn_blueprint(rng: np.random.Generator, category: str) -> dict:
    if category == "vehicle":
        return {
            "shape": "rect",
            "w": rng.uniform(74, 130),
            "ratio": rng.uniform(1.7, 2.3),
            "texture": {
                "kind": "stripes",
                "color_a": _palette(rng, (0.20, 0.35, 0.75)),
                "color_b": _palette(rng, (0.10, 0.18, 0.45)),
                "period": float(rng.uniform(5, 8)),
                "horizontal": True,
            },
        }
    if category == "plate":
        return {
            "shape": "rect",
            "frac_w": rng.uniform(0.30, 0.42),
            "ratio": rng.uniform(2.8, 3.6),
            "texture": {
                "kind": "solid",
                "color_a": _palette(rng, (0.92, 0.88, 0.35), 0.04),
                "border": _palette(rng, (0.10, 0.10, 0.10), 0.02),
            },
        }
    if category == "animal":
        return {
            "shape": "ellipse",
            "w": rng.uniform(58, 105),
            "ratio": rng.uniform(1.3, 1.7),
            "texture": {
                "kind": "dots",
                "color_a": _palette(rng, (0.62, 0.45, 0.25)),
                "color_b": _palette(rng, (0.35, 0.22, 0.10)),
                "period": float(rng.uniform(7, 10)),
                "radius": float(rng.uniform(1.6, 2.6)),
            },
        }
    if category == "head":
        return {
            "shape": "ellipse",
            "frac_w": rng.uniform(0.30, 0.38),
            "ratio": rng.uniform(0.9, 1.1),
            "texture": {
                "kind": "solid",
                "color_a": _palette(rng, (0.30, 0.18, 0.08)),
                "border": _palette(rng, (0.15, 0.09, 0.04), 0.02),
            },
        }
    if category == "house":
        return {
            "shape": "rect",
            "w": rng.uniform(66, 120),
            "ratio": rng.uniform(0.9, 1.2),
            "texture": {
                "kind": "checker",
                "color_a": _palette(rng, (0.70, 0.30, 0.22)),
                "color_b": _palette(rng, (0.82, 0.80, 0.76)),
                "period": float(rng.uniform(9, 13)),
            },
        }
    if category == "door":
        return {
            "shape": "rect",
            "frac_h": rng.uniform(0.38, 0.50),
            "ratio": rng.uniform(0.35, 0.50),
            "texture": {
                "kind": "solid",
                "color_a": _palette(rng, (0.25, 0.16, 0.10)),
                "border": _palette(rng, (0.55, 0.45, 0.30), 0.04),
            },
        }
    if category == "ball":
        return {
            "shape": "ellipse",
            "w": rng.uniform(28, 54),
            "ratio": 1.0,
            "texture": {
                "kind": "rings",
                "color_a": _palette(rng, (0.85, 0.20, 0.15)),
                "color_b": _palette(rng, (0.95, 0.92, 0.90)),
                "period": float(rng.uniform(4, 6)),
            },
        }
    if category == "tree":
        return {
            "shape": "ellipse",
            "w": rng.uniform(42, 76),
            "ratio": rng.uniform(0.55, 0.75),
            "texture": {
                "kind": "dots",
                "color_a": _palette(rng, (0.18, 0.50, 0.20)),
                "color_b": _palette(rng, (0.45, 0.75, 0.35)),
                "period": float(rng.uniform(5, 8)),
                "radius": float(rng.uniform(1.2, 2.0)),
            },
        }
    raise InputError(f"unknown category {category!r}")


def _box_from_center(cx, cy, w, h) -> geo.Box:
    return geo.Box(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def _place_box(rng, w, h, size, margin, existing: list[geo.Box], max_tries=60) -> geo.Box | None:
    for _ in range(max_tries):
        cx = rng.uniform(margin + w / 2, size - margin - w / 2)
        cy = rng.uniform(margin + h / 2, size - margin - h / 2)
        box = _box_from_center(cx, cy, w, h)
        if all(geo.iou(box, other) < 0.15 for other in existing):
            return box
    return None


def _place_part(rng, category: str, bp: dict, parent: geo.Box) -> geo.Box:
    """Place a part strictly inside its parent with a 2px margin."""
    eps = 2.0
    if category == "plate":
        w = bp["frac_w"] * parent.width
        h = w / bp["ratio"]
        cx = parent.center.x + rng.uniform(-0.08, 0.08) * parent.width
        cy = parent.y1 - eps - h / 2 - rng.uniform(0.02, 0.10) * parent.height
    elif category == "head":
        w = bp["frac_w"] * parent.width
        h = w / bp["ratio"]
        side = 1.0 if rng.random() < 0.5 else -1.0
        cx = parent.center.x + side * (parent.width / 2 - eps - w / 2) * rng.uniform(0.7, 1.0)
        cy = parent.y0 + eps + h / 2 + rng.uniform(0.00, 0.15) * parent.height
    elif category == "door":
        h = bp["frac_h"] * parent.height
        w = h * bp["ratio"]
        cx = parent.center.x + rng.uniform(-0.15, 0.15) * parent.width
        cy = parent.y1 - eps - h / 2
    else:
        raise InputError(f"{category!r} is not a part category")
    box = _box_from_center(cx, cy, w, h)
    # clamp fully inside the parent
    dx = max(0.0, parent.x0 + eps - box.x0) - max(0.0, box.x1 - (parent.x1 - eps))
    dy = max(0.0, parent.y0 + eps - box.y0) - max(0.0, box.y1 - (parent.y1 - eps))
    return _box_from_center(box.center.x + dx, box.center.y + dy, w, h)


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def _make_background(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    base = _palette(rng, (0.45, 0.48, 0.42), 0.10)
    fx, fy = rng.uniform(1.0, 3.0, 2)
    phase = rng.uniform(0, 2 * math.pi, 2)
    wave = 0.06 * np.sin(2 * math.pi * fx * xx + phase[0]) + 0.06 * np.sin(
        2 * math.pi * fy * yy + phase[1]
    )
    noise = rng.normal(0.0, 0.025, size=(size, size))
    img = base[None, None, :] + (wave + noise)[:, :, None]
    return np.clip(img, 0.0, 1.0)


def _texture_values(texture: dict, xx, yy, box: geo.Box, mask):
    """Pattern colors for pixels of one object; coordinates are anchored to
    the box origin so the pattern travels with the object."""
    kind = texture["kind"]
    u = xx - box.x0
    v = yy - box.y0
    ca = np.asarray(texture["color_a"])
    cb = np.asarray(texture.get("color_b", texture["color_a"]))
    if kind == "solid":
        t = np.zeros_like(u)
    elif kind == "stripes":
        period = texture["period"]
        coord = v if texture.get("horizontal", True) else u
        t = ((coord // period) % 2).astype(np.float64)
    elif kind == "checker":
        period = texture["period"]
        t = (((u // period) + (v // period)) % 2).astype(np.float64)
    elif kind == "dots":
        period = texture["period"]
        r = texture["radius"]
        du = (u % period) - period / 2
        dv = (v % period) - period / 2
        t = ((du * du + dv * dv) <= r * r).astype(np.float64)
    elif kind == "rings":
        period = texture["period"]
        cu = u - box.width / 2
        cv = v - box.height / 2
        rad = np.sqrt(cu * cu + cv * cv)
        t = ((rad // period) % 2).astype(np.float64)
    else:
        raise InputError(f"unknown texture kind {kind!r}")
    colors = ca[None, :] * (1.0 - t[mask][:, None]) + cb[None, :] * t[mask][:, None]
    return colors


def _render_object(img: np.ndarray, obj_shape: str, box: geo.Box, texture: dict) -> None:
    size = img.shape[0]
    x0 = max(0, int(math.floor(box.x0)))
    y0 = max(0, int(math.floor(box.y0)))
    x1 = min(size, int(math.ceil(box.x1)))
    y1 = min(size, int(math.ceil(box.y1)))
    if x1 <= x0 or y1 <= y0:
        return
    yy, xx = np.mgrid[y0:y1, x0:x1].astype(np.float64)
    xx += 0.5  # pixel centers
    yy += 0.5
    if obj_shape == "ellipse":
        cx, cy = box.center.x, box.center.y
        rx, ry = box.width / 2, box.height / 2
        mask = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
    else:
        mask = (xx >= box.x0) & (xx < box.x1) & (yy >= box.y0) & (yy < box.y1)
    if not mask.any():
        return
    colors = _texture_values(texture, xx, yy, box, mask)
    border = texture.get("border")
    if border is not None:
        # thin frame just inside the box edge
        edge = (
            (xx - box.x0 < 2.5) | (box.x1 - xx < 2.5) | (yy - box.y0 < 2.5) | (box.y1 - yy < 2.5)
        )[mask]
        colors[edge] = np.asarray(border)
    region = img[y0:y1, x0:x1].reshape(-1, 3)
    region[mask.reshape(-1)] = colors
    img[y0:y1, x0:x1] = region.reshape(y1 - y0, x1 - x0, 3)


def _render_frame(background: np.ndarray, objects: list[SyntheticObject], frame: int) -> np.ndarray:
    img = background.copy()
    # parents drawn before their parts
    order = sorted(range(len(objects)), key=lambda i: 0 if objects[i].parent is None else 1)
    for i in order:
        obj = objects[i]
        _render_object(img, obj.shape, obj.boxes[frame], obj.texture)
    return img.astype(np.float32)


# ---------------------------------------------------------------------------
# scene and sequence generation
# ---------------------------------------------------------------------------


def generate_scene(rng: np.random.Generator | int, config: SceneConfig = SceneConfig()) -> SyntheticScene:
    """Render one cluttered frame with 2-6 textured objects; with probability
    ``nested_prob`` one whole+part pair shares an overlap region.

    Deterministic given the seed: same seed, bit-identical frames.
    """
    seed = rng if isinstance(rng, (int, np.integer)) else None
    if seed is not None:
        rng = np.random.default_rng(seed)
    size = config.size
    n_objects = int(rng.integers(config.min_objects, config.max_objects + 1))
    objects: list[SyntheticObject] = []
    placed: list[geo.Box] = []
    next_id = 0

    def add_object(category, parent_id, box, bp):
        nonlocal next_id
        objects.append(
            SyntheticObject(
                id=next_id,
                category=category,
                parent=parent_id,
                boxes=[box],
                shape=bp["shape"],
                texture=bp["texture"],
                occluded=[False],
            )
        )
        next_id += 1

    remaining = n_objects
    if rng.random() < config.nested_prob and remaining >= 2:
        whole_cat = str(rng.choice(sorted(vocab.WHOLE_TO_PART)))
        part_cat = vocab.WHOLE_TO_PART[whole_cat]
        whole_bp = _spawn_blueprint(rng, whole_cat)
        w = whole_bp["w"]
        h = w / whole_bp["ratio"]
        box = _place_box(rng, w, h, size, config.margin, placed)
        if box is not None:
            whole_id = next_id
            add_object(whole_cat, None, box, whole_bp)
            placed.append(box)
            part_bp = _spawn_blueprint(rng, part_cat)
            part_box = _place_part(rng, part_cat, part_bp, box)
            add_object(part_cat, whole_id, part_box, part_bp)
            remaining -= 2

    standalone_pool = sorted(set(vocab.CATEGORIES) - set(vocab.PART_OF))
    while remaining > 0:
        category = str(rng.choice(standalone_pool))
        bp = _spawn_blueprint(rng, category)
        w = bp["w"]
        h = w / bp["ratio"]
        box = _place_box(rng, w, h, size, config.margin, placed)
        if box is None:
            remaining -= 1  # scene is crowded; skip
            continue
        add_object(category, None, box, bp)
        placed.append(box)
        remaining -= 1

    background = _make_background(rng, size)
    frame = _render_frame(background, objects, 0)
    scene = SyntheticScene(frames=[frame], objects=objects, seed=int(seed) if seed is not None else -1, size=size)
    scene._background = background  # type: ignore[attr-defined]
    return scene


def generate_sequence(
    scene: SyntheticScene,
    n_frames: int,
    motion: MotionConfig = MotionConfig(),
    rng: np.random.Generator | int = 0,
) -> SyntheticScene:
    """Extend a one-frame scene into a motion sequence: top-level objects
    translate with bounded per-frame velocity and bounce off the frame edges;
    parts ride along with their parent."""
    if n_frames < 2:
        raise InputError(f"a sequence needs at least 2 frames, got {n_frames}")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    size = scene.size
    margin = 2.0

    def draw_velocity():
        speed = rng.uniform(motion.min_speed_frac, 1.0, 2) * motion.velocity
        signs = rng.choice((-1.0, 1.0), 2)
        return speed * signs

    velocities = {}
    for obj in scene.objects:
        if obj.parent is None:
            velocities[obj.id] = draw_velocity()
    for obj in scene.objects:
        if obj.parent is not None:
            velocities[obj.id] = velocities[obj.parent]
        obj.velocity = (float(velocities[obj.id][0]), float(velocities[obj.id][1]))

    # integrate top-level motion with elastic bounces
    offsets = {obj.id: [(0.0, 0.0)] for obj in scene.objects}
    state = {}
    for obj in scene.objects:
        if obj.parent is None:
            state[obj.id] = [0.0, 0.0, float(velocities[obj.id][0]), float(velocities[obj.id][1])]
    for _ in range(1, n_frames):
        for obj in scene.objects:
            if obj.parent is not None:
                continue
            ox, oy, vx, vy = state[obj.id]
            box = obj.boxes[0]
            nx, ny = ox + vx, oy + vy
            if box.x0 + nx < margin or box.x1 + nx > size - margin:
                vx = -vx
                nx = ox + vx
            if box.y0 + ny < margin or box.y1 + ny > size - margin:
                vy = -vy
                ny = oy + vy
            state[obj.id] = [nx, ny, vx, vy]
            offsets[obj.id].append((nx, ny))
    for obj in scene.objects:
        if obj.parent is not None:
            offsets[obj.id] = offsets[obj.parent]

    background = getattr(scene, "_background", None)
    if background is None:
        background = scene.frames[0].astype(np.float64)

    objects = []
    for obj in scene.objects:
        base = obj.boxes[0]
        boxes = []
        occluded = []
        for f in range(n_frames):
            ox, oy = offsets[obj.id][f]
            moved = geo.Box(base.x0 + ox, base.y0 + oy, base.x1 + ox, base.y1 + oy)
            clipped_x0 = max(0.0, moved.x0)
            clipped_y0 = max(0.0, moved.y0)
            clipped_x1 = min(float(size), moved.x1)
            clipped_y1 = min(float(size), moved.y1)
            if clipped_x0 < clipped_x1 and clipped_y0 < clipped_y1:
                boxes.append(geo.Box(clipped_x0, clipped_y0, clipped_x1, clipped_y1))
                occluded.append(False)
            else:
                boxes.append(boxes[-1] if boxes else base)
                occluded.append(True)
        objects.append(
            SyntheticObject(
                id=obj.id,
                category=obj.category,
                parent=obj.parent,
                boxes=boxes,
                shape=obj.shape,
                texture=obj.texture,
                velocity=obj.velocity,
                occluded=occluded,
            )
        )

    frames = [_render_frame(background, objects, f) for f in range(n_frames)]
    seq = SyntheticScene(frames=frames, objects=objects, seed=scene.seed, size=size)
    seq._background = background  # type: ignore[attr-defined]
    return seq


# ---------------------------------------------------------------------------
# PNG and corpus disk layout
# ---------------------------------------------------------------------------


def frame_to_png_bytes(frame: np.ndarray) -> bytes:
    arr = np.clip(np.round(np.asarray(frame, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    PILImage.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def png_bytes_to_frame(data: bytes) -> np.ndarray:
    img = PILImage.open(io.BytesIO(data)).convert("RGB")
    return (np.asarray(img, dtype=np.float32) / 255.0).astype(np.float32)


def save_scene(scene: SyntheticScene, scene_dir: Path) -> None:
    scene_dir = Path(scene_dir)
    scene_dir.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(scene.frames):
        (scene_dir / f"frame_{i:05d}.png").write_bytes(frame_to_png_bytes(frame))
    ann = {
        "seed": scene.seed,
        "size": scene.size,
        "objects": [
            {
                "id": o.id,
                "category": o.category,
                "parent": o.parent,
                "boxes": [b.to_list() for b in o.boxes],
                "occluded": o.occluded,
            }
            for o in scene.objects
        ],
    }
    (scene_dir / "annotations.json").write_text(json.dumps(ann, indent=1))


def load_scene(scene_dir: Path) -> SyntheticScene:
    scene_dir = Path(scene_dir)
    ann_path = scene_dir / "annotations.json"
    if not ann_path.exists():
        raise InputError(f"no annotations.json in {scene_dir}")
    ann = json.loads(ann_path.read_text())
    frame_paths = sorted(scene_dir.glob("frame_*.png"))
    frames = [png_bytes_to_frame(p.read_bytes()) for p in frame_paths]
    objects = [
        SyntheticObject(
            id=o["id"],
            category=o["category"],
            parent=o.get("parent"),
            boxes=[geo.Box.from_list(b) for b in o["boxes"]],
            shape="",
            texture={},
            occluded=o.get("occluded", [False] * len(o["boxes"])),
        )
        for o in ann["objects"]
    ]
    return SyntheticScene(
        frames=frames, objects=objects, seed=ann.get("seed", -1), size=ann.get("size", frames[0].shape[0])
    )


@dataclass(frozen=True)
class CorpusConfig:
    n_train: int = 2000
    n_heldout: int = 300
    n_sequences: int = 100
    sequence_length: int = 60
    seed: int = 0
    scene: SceneConfig = SceneConfig()
    motion: MotionConfig = MotionConfig()


def _section_seeds(seed: int, n: int, offset: int) -> list[int]:
    ss = np.random.SeedSequence([seed, offset])
    return [int(s.generate_state(1)[0]) for s in ss.spawn(n)]


def build_corpus(root: Path, cfg: CorpusConfig = CorpusConfig(), progress=None) -> None:
    """Materialize the full corpus under ``root``."""
    root = Path(root)
    sections = [
        ("train", cfg.n_train, 1, False),
        ("heldout", cfg.n_heldout, 2, False),
        ("sequences", cfg.n_sequences, 3, True),
    ]
    for name, count, offset, is_seq in sections:
        seeds = _section_seeds(cfg.seed, count, offset)
        for i, s in enumerate(seeds):
            scene = generate_scene(s, cfg.scene)
            if is_seq:
                scene = generate_sequence(
                    scene, cfg.sequence_length, cfg.motion, rng=np.random.default_rng(s + 1)
                )
            save_scene(scene, root / name / "scenes" / f"{i:04d}")
            if progress is not None:
                progress(name, i, count)
    meta = {
        "format_version": FORMAT_VERSION,
        "seed": cfg.seed,
        "counts": {"train": cfg.n_train, "heldout": cfg.n_heldout, "sequences": cfg.n_sequences},
        "sequence_length": cfg.sequence_length,
        "size": cfg.scene.size,
        "categories": list(vocab.CATEGORIES),
    }
    (root / "meta.json").write_text(json.dumps(meta, indent=1))


class Corpus:
    """Read-side view of a corpus directory with a small decoded-scene cache."""

    def __init__(self, root: Path, cache_size: int = 64):
        self.root = Path(root)
        meta_path = self.root / "meta.json"
        if not meta_path.exists():
            raise InputError(f"{root} is not a corpus (missing meta.json)")
        self.meta = json.loads(meta_path.read_text())
        self._cache: dict[tuple[str, int], SyntheticScene] = {}
        self._cache_size = cache_size

    def count(self, section: str) -> int:
        return int(self.meta["counts"][section])

    def scene(self, section: str, index: int) -> SyntheticScene:
        key = (section, index)
        if key in self._cache:
            return self._cache[key]
        scene = load_scene(self.root / section / "scenes" / f"{index:04d}")
        if len(self._cache) >= self._cache_size:
            self._cache.pop(next(iter(self._cache)))
        self._cache[key] = scene
        return scene

    def scenes(self, section: str):
        for i in range(self.count(section)):
            yield self.scene(section, i)
