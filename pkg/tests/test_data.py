import os

import numpy as np
import pytest

from srcnet.data import (
    SamplePair, SynthSpec, augment_pair, collate, generate_synthetic,
    load_pairs, render_overlay, save_pairs, shape_footprint, split_by_hash,
    tile_dataset, tile_pair,
)
from srcnet.metrics import ConfusionStats

from oracles import overlay_reference


def checkerboard_pair(size=512, tile=256):
    rng = np.random.default_rng(0)
    img1 = rng.integers(0, 255, (size, size, 3), dtype=np.uint8)
    img2 = rng.integers(0, 255, (size, size, 3), dtype=np.uint8)
    yy, xx = np.mgrid[0:size, 0:size]
    mask = (((yy // tile) + (xx // tile)) % 2).astype(np.uint8)
    return img1, img2, mask


def test_tile_counts():
    img1, img2, mask = checkerboard_pair(1024, 256)
    tiles = tile_pair(img1, img2, mask, "pair", 256)
    assert len(tiles) == 16
    assert [t.id for t in tiles[:3]] == ["pair_0_0", "pair_0_1", "pair_0_2"]


def test_single_tile_identity():
    img1, img2, mask = checkerboard_pair(256, 256)
    tiles = tile_pair(img1, img2, mask, "one", 256)
    assert len(tiles) == 1
    assert np.array_equal(tiles[0].img1, img1)
    assert np.array_equal(tiles[0].mask, mask)


def test_residual_strips_dropped():
    img1, img2, mask = checkerboard_pair(300, 256)
    tiles = tile_pair(img1, img2, mask, "crop", 256)
    assert len(tiles) == 1


def test_tiles_remosaic_exactly():
    img1, img2, mask = checkerboard_pair(512, 256)
    tiles = tile_pair(img1, img2, mask, "mosaic", 256)
    rebuilt = np.zeros_like(mask)
    for t in tiles:
        r, c = map(int, t.id.split("_")[1:])
        rebuilt[r * 256:(r + 1) * 256, c * 256:(c + 1) * 256] = t.mask
    assert np.array_equal(rebuilt, mask)


def test_tiled_confusion_merges_to_whole_image():
    rng = np.random.default_rng(1)
    img1, img2, mask = checkerboard_pair(512, 256)
    pred = (rng.random(mask.shape) < 0.5).astype(np.uint8)
    tiles = tile_pair(img1, img2, mask, "m", 256)
    merged = ConfusionStats()
    for t in tiles:
        r, c = map(int, t.id.split("_")[1:])
        merged = merged + ConfusionStats.from_masks(
            pred[r * 256:(r + 1) * 256, c * 256:(c + 1) * 256], t.mask)
    assert merged == ConfusionStats.from_masks(pred, mask)


def test_tile_dataset_reads_and_skips(tmp_path):
    img1, img2, mask = checkerboard_pair(512, 256)
    src = tmp_path / "src"
    save_pairs(str(src), [SamplePair(img1, img2, mask, "good")])
    # misaligned pair: smaller B image
    from PIL import Image
    Image.fromarray(img1).save(src / "A" / "bad.png")
    Image.fromarray(img2[:256]).save(src / "B" / "bad.png")
    Image.fromarray(mask * 255).save(src / "label" / "bad.png")
    messages = []
    tiles = tile_dataset(str(src), tile=256, log=messages.append)
    assert len(tiles) == 4
    assert any("skipped bad" in m for m in messages)


def test_manifest_round_trip(tmp_path):
    spec = SynthSpec(image_size=32, seed=3)
    pairs = generate_synthetic(spec, 4)
    save_pairs(str(tmp_path), pairs)
    assert os.path.exists(tmp_path / "tiles.txt")
    loaded = load_pairs(str(tmp_path))
    assert [p.id for p in loaded] == [p.id for p in pairs]
    for a, b in zip(loaded, pairs):
        assert np.array_equal(a.img1, b.img1)
        assert np.array_equal(a.img2, b.img2)
        assert np.array_equal(a.mask, b.mask)


def test_synthetic_determinism():
    spec = SynthSpec(image_size=48, seed=11)
    a = generate_synthetic(spec, 6)
    b = generate_synthetic(spec, 6)
    for x, y in zip(a, b):
        assert np.array_equal(x.img1, y.img1)
        assert np.array_equal(x.img2, y.img2)
        assert np.array_equal(x.mask, y.mask)


def test_zero_change_probability_gives_empty_masks():
    spec = SynthSpec(image_size=48, seed=4, p_appear=0, p_disappear=0, p_alter=0)
    for pair in generate_synthetic(spec, 5):
        assert pair.mask.sum() == 0


def test_appear_only_mask_matches_scene_graph():
    spec = SynthSpec(image_size=48, seed=5, p_appear=0.9, p_disappear=0,
                     p_alter=0, p_vegetation=0.0)
    pairs, scenes = generate_synthetic(spec, 5, return_scenes=True)
    for pair, scene in zip(pairs, scenes):
        union = np.zeros((48, 48), dtype=bool)
        for shape in scene.shapes:
            assert shape.change in ("appear", "none")
            if shape.change == "appear":
                union |= shape_footprint(shape, 48)
        assert np.array_equal(pair.mask.astype(bool), union)


def test_mask_pixels_inside_changed_footprints():
    spec = SynthSpec(image_size=48, seed=6)
    pairs, scenes = generate_synthetic(spec, 8, return_scenes=True)
    for pair, scene in zip(pairs, scenes):
        union = np.zeros((48, 48), dtype=bool)
        for shape in scene.shapes:
            if shape.change in ("appear", "disappear", "alter"):
                union |= shape_footprint(shape, 48)
        assert np.array_equal(pair.mask.astype(bool), union)


def test_seasonal_vegetation_not_in_mask():
    spec = SynthSpec(image_size=48, seed=13, p_vegetation=1.0)
    pairs, scenes = generate_synthetic(spec, 5, return_scenes=True)
    for pair, scene in zip(pairs, scenes):
        assert all(s.change == "seasonal" for s in scene.shapes)
        assert pair.mask.sum() == 0
        # the appearance nevertheless moved substantially somewhere
        if scene.shapes:
            diff = np.abs(pair.img2.astype(int) - pair.img1.astype(int))
            assert diff.max() > 40


def test_change_probabilities_validate():
    with pytest.raises(ValueError):
        SynthSpec(p_appear=0.5, p_disappear=0.4, p_alter=0.3)


def test_overlay_trivials():
    img = np.full((4, 4, 3), 200, dtype=np.uint8)
    all_change = np.ones((4, 4), dtype=np.uint8)
    none = np.zeros((4, 4), dtype=np.uint8)
    assert np.all(render_overlay(all_change, all_change, img) == 255)
    red = render_overlay(all_change, none, img)
    assert np.all(red == (255, 0, 0))
    green = render_overlay(none, all_change, img)
    assert np.all(green == (0, 255, 0))


def test_overlay_matches_per_pixel_reference():
    rng = np.random.default_rng(7)
    pred = rng.random((8, 8)) < 0.5
    gt = rng.random((8, 8)) < 0.5
    img = rng.integers(0, 255, (8, 8, 3), dtype=np.uint8)
    assert np.array_equal(render_overlay(pred, gt, img),
                          overlay_reference(pred, gt, img))


def test_split_by_hash_deterministic():
    pairs = generate_synthetic(SynthSpec(image_size=32, seed=8), 40)
    t1, v1 = split_by_hash(pairs, val_fraction=0.25, salt="x")
    t2, v2 = split_by_hash(pairs, val_fraction=0.25, salt="x")
    assert [p.id for p in t1] == [p.id for p in t2]
    assert [p.id for p in v1] == [p.id for p in v2]
    assert len(t1) + len(v1) == 40
    assert 2 <= len(v1) <= 20  # loose band around the 25% target


def test_collate_scales_and_stacks():
    pairs = generate_synthetic(SynthSpec(image_size=32, seed=9), 3)
    x1, x2, masks = collate(pairs)
    assert x1.shape == (3, 3, 32, 32)
    assert 0.0 <= x1.data.min() and x1.data.max() <= 1.0
    assert masks.shape == (3, 32, 32)
    assert set(np.unique(masks)) <= {0.0, 1.0}


def test_augment_preserves_alignment():
    pairs = generate_synthetic(SynthSpec(image_size=32, seed=10), 2)
    rng = np.random.default_rng(0)
    for pair in pairs:
        aug = augment_pair(pair, rng)
        assert aug.img1.shape == pair.img1.shape
        assert aug.mask.sum() == pair.mask.sum()  # flips/rotations keep area
