"""Dataset handling: tiling real bi-temporal pairs, generating synthetic
scenes for desk-scale training, confusion overlays, and collation.

Directory layout for datasets on disk:

    <root>/A/<id>.png        first-epoch image
    <root>/B/<id>.png        second-epoch image
    <root>/label/<id>.png    binary change mask (0 / 255)
    <root>/tiles.txt         manifest: "<id> A/<id>.png B/<id>.png label/<id>.png"
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .engine import Tensor
from .metrics import ConfusionStats


@dataclass
class SamplePair:
    img1: np.ndarray          # (H, W, 3) uint8
    img2: np.ndarray          # (H, W, 3) uint8
    mask: np.ndarray          # (H, W) uint8 in {0, 1}
    id: str

    def __post_init__(self):
        if self.img1.shape != self.img2.shape:
            raise ValueError(f"{self.id}: image shapes differ")
        if self.img1.shape[:2] != self.mask.shape:
            raise ValueError(f"{self.id}: mask extent does not match images")


# --------------------------------------------------------------------- synthetic

@dataclass
class SynthSpec:
    image_size: int = 64
    min_shapes: int = 3
    max_shapes: int = 6
    shape_kinds: tuple = ("rectangle", "ellipse", "lpolygon")
    p_appear: float = 0.16
    p_disappear: float = 0.16
    p_alter: float = 0.22
    min_extent: int = 10
    max_extent: int = 26
    contrast: float = 0.35        # shape/background intensity separation
    texture_jitter: float = 0.06  # background field amplitude
    illumination: float = 0.22    # smooth per-epoch illumination field amplitude
    pixel_noise: float = 0.02     # per-pixel sensor noise
    occluder_rate: float = 4.0    # mean count of small per-epoch occluder blobs
    shadow_rate: float = 2.0      # mean count of large translucent shadows
    degraded_prob: float = 0.6    # chance that one epoch is a noisy acquisition
    degraded_noise: tuple = (0.06, 0.14)  # sigma band for the degraded epoch
    p_vegetation: float = 0.4     # fraction of shapes that are seasonal vegetation
    seed: int = 0

    def __post_init__(self):
        if self.p_appear + self.p_disappear + self.p_alter > 1.0:
            raise ValueError("change probabilities exceed 1")
        if self.min_shapes > self.max_shapes:
            raise ValueError("min_shapes > max_shapes")
        if self.max_extent + 4 > self.image_size:
            raise ValueError(
                f"max_extent {self.max_extent} does not fit image_size "
                f"{self.image_size}")


@dataclass
class ShapeSpec:
    kind: str
    params: tuple             # geometry, kind-dependent
    color1: np.ndarray        # (3,) fill in epoch 1
    color2: np.ndarray        # (3,) fill in epoch 2
    change: str               # none | appear | disappear | alter | seasonal
    material: str = "built"   # built | vegetation


@dataclass
class Scene:
    size: int
    shapes: list = field(default_factory=list)


def shape_footprint(shape: ShapeSpec, size: int) -> np.ndarray:
    """Boolean raster of the shape on a size x size grid."""
    yy, xx = np.mgrid[0:size, 0:size]
    if shape.kind == "rectangle":
        cy, cx, hh, hw = shape.params
        return (np.abs(yy - cy) <= hh) & (np.abs(xx - cx) <= hw)
    if shape.kind == "ellipse":
        cy, cx, ry, rx = shape.params
        return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    if shape.kind == "lpolygon":
        cy, cx, hh, hw = shape.params
        arm = (np.abs(yy - cy) <= hh) & (np.abs(xx - cx) <= hw)
        leg = (np.abs(yy - (cy + hh)) <= hw) & (np.abs(xx - (cx - hw)) <= hh)
        return arm | leg
    raise ValueError(f"unknown shape kind {shape.kind!r}")


def _background(size: int, rng: np.random.Generator, spec: SynthSpec) -> np.ndarray:
    base = rng.uniform(0.35, 0.6, size=3)
    coarse = rng.normal(0.0, spec.texture_jitter, size=(4, 4, 3))
    reps = size // 4
    field_ = np.repeat(np.repeat(coarse, reps, axis=0), reps, axis=1)
    return np.clip(base[None, None, :] + field_, 0.0, 1.0)


def _shape_color(base: np.ndarray, rng: np.random.Generator,
                 spec: SynthSpec) -> np.ndarray:
    sign = rng.choice([-1.0, 1.0])
    offs = sign * rng.uniform(spec.contrast * 0.8, spec.contrast * 1.3, size=3)
    return np.clip(base + offs, 0.02, 0.98)


def _vegetation_color(rng: np.random.Generator) -> np.ndarray:
    """Green-dominant family; the material is readable from one epoch."""
    return np.array([rng.uniform(0.08, 0.28),
                     rng.uniform(0.45, 0.8),
                     rng.uniform(0.08, 0.25)])


def _seasonal_shift(color: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Large appearance change of a vegetation shape (browning/greening);
    overlaps the built-alter delta range so the difference alone cannot
    tell it from a real change."""
    factors = rng.uniform([0.9, 0.35, 0.7], [1.9, 0.9, 1.3])
    shifted = np.clip(color * factors + rng.uniform(0.0, 0.12, size=3),
                      0.02, 0.98)
    return shifted


def _sample_scene(rng: np.random.Generator, spec: SynthSpec) -> Scene:
    size = spec.image_size
    scene = Scene(size=size)
    n_shapes = int(rng.integers(spec.min_shapes, spec.max_shapes + 1))
    base = np.full(3, 0.5)
    boxes = []
    for _ in range(n_shapes):
        for _attempt in range(30):
            kind = spec.shape_kinds[int(rng.integers(len(spec.shape_kinds)))]
            ext_h = int(rng.integers(spec.min_extent, spec.max_extent + 1)) // 2
            ext_w = int(rng.integers(spec.min_extent, spec.max_extent + 1)) // 2
            cy = int(rng.integers(ext_h + 1, size - ext_h - 1))
            cx = int(rng.integers(ext_w + 1, size - ext_w - 1))
            box = (cy - ext_h - 2, cy + ext_h + 2, cx - ext_w - 2, cx + ext_w + 2)
            if any(not (box[1] < b[0] or box[0] > b[1] or box[3] < b[2] or box[2] > b[3])
                   for b in boxes):
                continue
            boxes.append(box)
            if rng.random() < spec.p_vegetation:
                # vegetation never appears or disappears; its appearance
                # swings seasonally without counting as change
                color1 = _vegetation_color(rng)
                scene.shapes.append(ShapeSpec(
                    kind, (cy, cx, ext_h, ext_w), color1,
                    _seasonal_shift(color1, rng), "seasonal", "vegetation"))
                break
            u = rng.random()
            if u < spec.p_appear:
                change = "appear"
            elif u < spec.p_appear + spec.p_disappear:
                change = "disappear"
            elif u < spec.p_appear + spec.p_disappear + spec.p_alter:
                change = "alter"
            else:
                change = "none"
            color1 = _shape_color(base, rng, spec)
            if change == "alter":
                color2 = _shape_color(base, rng, spec)
                while np.abs(color2 - color1).mean() < 0.25:
                    color2 = _shape_color(base, rng, spec)
            elif change == "none":
                color2 = np.clip(
                    color1 + rng.normal(0.0, spec.texture_jitter, size=3), 0.02, 0.98)
            else:
                color2 = color1.copy()
            scene.shapes.append(ShapeSpec(kind, (cy, cx, ext_h, ext_w),
                                          color1, color2, change))
            break
    return scene


def _draw_occluders(img: np.ndarray, rng: np.random.Generator,
                    spec: SynthSpec) -> None:
    size = spec.image_size
    count = int(rng.poisson(spec.occluder_rate))
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(count):
        cy, cx = rng.integers(2, size - 2, size=2)
        r = rng.uniform(1.0, 2.2)
        blob = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        img[blob] = rng.uniform(0.08, 0.22, size=3)


def _draw_shadows(img: np.ndarray, rng: np.random.Generator,
                  spec: SynthSpec) -> None:
    """Large translucent darkening ellipses: pseudo-changes that scale the
    underlying content instead of replacing it."""
    size = spec.image_size
    count = int(rng.poisson(spec.shadow_rate))
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(count):
        cy, cx = rng.integers(4, size - 4, size=2)
        ry = rng.uniform(5.0, 14.0)
        rx = rng.uniform(5.0, 14.0)
        factor = rng.uniform(0.65, 0.85)
        blob = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        img[blob] *= factor


def _illumination_field(size: int, rng: np.random.Generator,
                        amplitude: float) -> np.ndarray:
    """Smooth multiplicative gain field around 1."""
    coarse = rng.uniform(-amplitude, amplitude, size=(4, 4))
    reps = size // 4
    return 1.0 + np.repeat(np.repeat(coarse, reps, axis=0), reps, axis=1)


def render_scene(scene: Scene, rng: np.random.Generator, spec: SynthSpec):
    """Rasterize both epochs plus the change mask; returns float images."""
    size = scene.size
    bg = _background(size, rng, spec)
    img1 = bg.copy()
    gain = _illumination_field(size, rng, spec.illumination)[:, :, None]
    offset = rng.uniform(-spec.illumination / 3, spec.illumination / 3)
    img2 = np.clip(bg * gain + offset, 0.0, 1.0)
    mask = np.zeros((size, size), dtype=bool)
    for shape in scene.shapes:
        fp = shape_footprint(shape, size)
        if shape.change == "appear":
            img2[fp] = shape.color2
            mask |= fp
        elif shape.change == "disappear":
            img1[fp] = shape.color1
            mask |= fp
        elif shape.change == "alter":
            img1[fp] = shape.color1
            img2[fp] = shape.color2
            mask |= fp
        elif shape.change == "seasonal":
            img1[fp] = shape.color1
            img2[fp] = shape.color2  # big shift, but not a change
        else:
            img1[fp] = shape.color1
            img2[fp] = np.clip((shape.color2[None, :] * gain[fp]) + offset,
                               0.0, 1.0)
    _draw_occluders(img1, rng, spec)
    _draw_occluders(img2, rng, spec)
    _draw_shadows(img1, rng, spec)
    _draw_shadows(img2, rng, spec)
    sigma1 = sigma2 = spec.pixel_noise
    if rng.random() < spec.degraded_prob:
        # one acquisition is unreliable: heavy sensor noise on a random epoch
        heavy = rng.uniform(*spec.degraded_noise)
        if rng.random() < 0.5:
            sigma1 = heavy
        else:
            sigma2 = heavy
    img1 = np.clip(img1 + rng.normal(0.0, sigma1, img1.shape), 0.0, 1.0)
    img2 = np.clip(img2 + rng.normal(0.0, sigma2, img2.shape), 0.0, 1.0)
    return img1, img2, mask


def generate_synthetic(spec: SynthSpec, n: int, return_scenes: bool = False):
    """n reproducible synthetic pairs; the mask is exactly the union of the
    changed shapes' footprints."""
    rng = np.random.default_rng(spec.seed)
    pairs, scenes = [], []
    for i in range(n):
        scene = _sample_scene(rng, spec)
        img1, img2, mask = render_scene(scene, rng, spec)
        pairs.append(SamplePair(
            img1=(img1 * 255).round().astype(np.uint8),
            img2=(img2 * 255).round().astype(np.uint8),
            mask=mask.astype(np.uint8),
            id=f"synth{spec.seed}_{i:05d}",
        ))
        scenes.append(scene)
    if return_scenes:
        return pairs, scenes
    return pairs


# ----------------------------------------------------------------------- tiling

def tile_pair(img1: np.ndarray, img2: np.ndarray, mask: np.ndarray,
              pair_id: str, tile: int = 256):
    """Cut one aligned pair into non-overlapping tiles, row-major order.

    Residual strips smaller than the tile are dropped.
    """
    H, W = mask.shape
    tiles = []
    for r in range(H // tile):
        for c in range(W // tile):
            ys, xs = r * tile, c * tile
            tiles.append(SamplePair(
                img1=img1[ys:ys + tile, xs:xs + tile].copy(),
                img2=img2[ys:ys + tile, xs:xs + tile].copy(),
                mask=mask[ys:ys + tile, xs:xs + tile].copy(),
                id=f"{pair_id}_{r}_{c}",
            ))
    return tiles


def _read_image(path: str) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"))


def _read_mask(path: str) -> np.ndarray:
    return (np.asarray(Image.open(path).convert("L")) > 127).astype(np.uint8)


def tile_dataset(src_dir: str, tile: int = 256, out_dir: str | None = None,
                 log=print):
    """Tile every aligned A/B/label triple under src_dir.

    Misaligned triples are skipped with a report. Returns the tiles; when
    out_dir is given they are also written to disk with a manifest.
    """
    a_dir = os.path.join(src_dir, "A")
    names = sorted(os.listdir(a_dir))
    tiles, skipped = [], []
    for name in names:
        stem = os.path.splitext(name)[0]
        try:
            img1 = _read_image(os.path.join(src_dir, "A", name))
            img2 = _read_image(os.path.join(src_dir, "B", name))
            mask = _read_mask(os.path.join(src_dir, "label", name))
        except FileNotFoundError as exc:
            skipped.append((name, str(exc)))
            continue
        if img1.shape != img2.shape or img1.shape[:2] != mask.shape:
            skipped.append((name, f"size mismatch {img1.shape} / {img2.shape} "
                                  f"/ {mask.shape}"))
            continue
        tiles.extend(tile_pair(img1, img2, mask, stem, tile))
    for name, why in skipped:
        log(f"skipped {name}: {why}")
    log(f"tiled {len(names) - len(skipped)} pairs into {len(tiles)} tiles "
        f"({tile}x{tile})")
    if out_dir is not None:
        save_pairs(out_dir, tiles)
    return tiles


def save_pairs(root: str, pairs) -> None:
    for sub in ("A", "B", "label"):
        os.makedirs(os.path.join(root, sub), exist_ok=True)
    lines = []
    for p in pairs:
        Image.fromarray(p.img1).save(os.path.join(root, "A", f"{p.id}.png"))
        Image.fromarray(p.img2).save(os.path.join(root, "B", f"{p.id}.png"))
        Image.fromarray(p.mask * 255).save(os.path.join(root, "label", f"{p.id}.png"))
        lines.append(f"{p.id} A/{p.id}.png B/{p.id}.png label/{p.id}.png")
    with open(os.path.join(root, "tiles.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_pairs(root: str):
    manifest = os.path.join(root, "tiles.txt")
    pairs = []
    with open(manifest) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            pid, a_rel, b_rel, m_rel = parts
            pairs.append(SamplePair(
                img1=_read_image(os.path.join(root, a_rel)),
                img2=_read_image(os.path.join(root, b_rel)),
                mask=_read_mask(os.path.join(root, m_rel)),
                id=pid,
            ))
    return pairs


def split_by_hash(pairs, val_fraction: float = 0.15, salt: str = ""):
    """Deterministic train/val split keyed by a hash of each tile id."""
    train, val = [], []
    threshold = int(val_fraction * 2 ** 32)
    for p in pairs:
        digest = hashlib.sha256((salt + p.id).encode()).digest()
        bucket = int.from_bytes(digest[:4], "little")
        (val if bucket < threshold else train).append(p)
    return train, val


# -------------------------------------------------------------------- overlays

def render_overlay(pred: np.ndarray, gt: np.ndarray,
                   img: np.ndarray) -> np.ndarray:
    """False positives red, false negatives green, hits white, rest dimmed."""
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape or pred.shape != img.shape[:2]:
        raise ValueError("overlay inputs must share spatial extents")
    out = (img.astype(np.float64) * 0.35).astype(np.uint8)
    out[pred & gt] = (255, 255, 255)
    out[pred & ~gt] = (255, 0, 0)
    out[~pred & gt] = (0, 255, 0)
    return out


def save_overlay(path: str, pred, gt, img) -> None:
    Image.fromarray(render_overlay(pred, gt, img)).save(path)


# ------------------------------------------------------------------- collation

def collate(pairs, dtype=None) -> tuple:
    """Stack pairs into (img1, img2) Tensors scaled to [0,1] plus the mask
    array (B, H, W) float."""
    x1 = np.stack([p.img1 for p in pairs]).transpose(0, 3, 1, 2) / 255.0
    x2 = np.stack([p.img2 for p in pairs]).transpose(0, 3, 1, 2) / 255.0
    masks = np.stack([p.mask for p in pairs]).astype(np.float64)
    return Tensor(x1), Tensor(x2), masks


def augment_pair(pair: SamplePair, rng: np.random.Generator) -> SamplePair:
    """Random flips and 90-degree rotations, applied identically to all
    three rasters (opt-in)."""
    img1, img2, mask = pair.img1, pair.img2, pair.mask
    if rng.random() < 0.5:
        img1, img2, mask = img1[:, ::-1], img2[:, ::-1], mask[:, ::-1]
    if rng.random() < 0.5:
        img1, img2, mask = img1[::-1], img2[::-1], mask[::-1]
    k = int(rng.integers(4))
    if k:
        img1 = np.rot90(img1, k)
        img2 = np.rot90(img2, k)
        mask = np.rot90(mask, k)
    return SamplePair(np.ascontiguousarray(img1), np.ascontiguousarray(img2),
                      np.ascontiguousarray(mask), pair.id)


def stats_for_pairs(pred_masks, pairs) -> ConfusionStats:
    total = ConfusionStats()
    for pred, pair in zip(pred_masks, pairs):
        total = total + ConfusionStats.from_masks(pred, pair.mask)
    return total
