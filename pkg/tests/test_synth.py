"""Synthetic worlds: geometry, ground truth, edits, and the port suite."""

from __future__ import annotations

import io

import numpy as np
import pytest

from worldlets import small_generator, small_template
from vsmatch.correspond import argmax_match, flatten_layer, similarity
from vsmatch.errors import IntegrityError, PortError
from vsmatch.store import Mask, load_pairs, read_stack, write_stack
from vsmatch.synth import (
    NOISE_GAIN,
    GeneratorConfig,
    SynthWorldConfig,
    generate_pairs,
    synth_world,
    world_config_for_index,
)


@pytest.fixture(scope="module")
def world():
    return synth_world(small_template(layout_seed=3, semantic_seed=5, appearance_seed=7))


@pytest.fixture(scope="module")
def flipped_world():
    return synth_world(
        small_template(layout_seed=11, semantic_seed=12, appearance_seed=13, flip=True)
    )


# ---------------------------------------------------------------------------
# configuration validation
# ---------------------------------------------------------------------------

def test_config_rejects_bad_values():
    with pytest.raises(IntegrityError):
        small_template(part_count=0).validate()
    with pytest.raises(IntegrityError):
        small_template(subject_frac=1.5).validate()
    with pytest.raises(IntegrityError):
        small_template(layer_ids=(5, 5, 8)).validate()
    with pytest.raises(IntegrityError):
        small_template(layer_channels=(12, 48)).validate()
    with pytest.raises(IntegrityError):
        # distinctive layer must hold at least base_dim channels
        small_template(layer_channels=(12, 40, 12)).validate()
    with pytest.raises(IntegrityError):
        small_template(noise_scale=-0.1).validate()
    with pytest.raises(IntegrityError):
        # more parts than subject cells
        small_template(grid=4, subject_frac=0.5, part_count=5).validate()


def test_config_json_round_trip_preserves_tuples():
    cfg = small_template(textured_parts=(0, 2), flip=True)
    back = SynthWorldConfig.from_json(cfg.to_json())
    assert back == cfg
    assert back.layer_ids == (5, 6, 8)
    assert back.textured_parts == (0, 2)


def test_config_derived_dimensions():
    cfg = small_template()
    assert cfg.base_dim == 4 + 14 + 30
    assert cfg.subject_side == round(12 * 0.6)
    assert cfg.channels_for(6) == 48
    assert cfg.app_slice == slice(18, 48)


# ---------------------------------------------------------------------------
# realized worlds
# ---------------------------------------------------------------------------

def test_world_shapes_and_masks(world):
    cfg = world.cfg
    for stack in (world.stack_1, world.stack_2):
        assert stack.layer_ids() == list(cfg.layer_ids)
        for lid, channels in zip(cfg.layer_ids, cfg.layer_channels):
            block = stack.layer(lid)
            assert (block.height, block.width, block.channels) == (cfg.grid, cfg.grid, channels)
    side = cfg.subject_side
    assert world.subject_mask_1.area == side * side
    assert world.subject_mask_2.area == side * side


def test_world_is_deterministic():
    a = synth_world(small_template(layout_seed=3, semantic_seed=5, appearance_seed=7))
    b = synth_world(small_template(layout_seed=3, semantic_seed=5, appearance_seed=7))
    buf_a, buf_b = io.BytesIO(), io.BytesIO()
    write_stack(a.stack_1, buf_a)
    write_stack(b.stack_1, buf_b)
    assert buf_a.getvalue() == buf_b.getvalue()
    np.testing.assert_array_equal(a.subject_mask_2.bits, b.subject_mask_2.bits)
    np.testing.assert_array_equal(a.gt_corr.points_b, b.gt_corr.points_b)


def test_different_appearance_seed_changes_features():
    a = synth_world(small_template(layout_seed=3, semantic_seed=5, appearance_seed=7))
    b = synth_world(small_template(layout_seed=3, semantic_seed=5, appearance_seed=8))
    assert not np.array_equal(a.stack_1.layer(6).values, b.stack_1.layer(6).values)


def test_parts_partition_the_subject(world):
    for view in (1, 2):
        labels = world.labels(view)
        subject = world.subject_mask(view).bits.astype(bool)
        assert (labels[subject] >= 0).all()
        assert (labels[~subject] == -1).all()
        present = np.unique(labels[subject])
        np.testing.assert_array_equal(present, np.arange(world.cfg.part_count))


def test_ground_truth_links_subject_cells_bijectively(world):
    corr = world.gt_corr
    n = world.subject_mask_1.area
    assert len(corr) == n
    w = world.cfg.grid
    flat_a = corr.points_a[:, 1] * w + corr.points_a[:, 0]
    flat_b = corr.points_b[:, 1] * w + corr.points_b[:, 0]
    assert np.unique(flat_a).size == n and np.unique(flat_b).size == n
    np.testing.assert_array_equal(np.sort(flat_a), np.flatnonzero(world.subject_mask_1.bits.ravel()))
    np.testing.assert_array_equal(np.sort(flat_b), np.flatnonzero(world.subject_mask_2.bits.ravel()))
    np.testing.assert_allclose(corr.scores, 1.0)
    np.testing.assert_allclose(corr.skewness, 0.0)


def test_matched_cells_share_features_when_noise_free():
    world = synth_world(
        small_template(layout_seed=3, semantic_seed=5, appearance_seed=7, noise_scale=0.0)
    )
    for lid in world.cfg.layer_ids:
        f1 = flatten_layer(world.stack_1, lid, normalize=False).values
        f2 = flatten_layer(world.stack_2, lid, normalize=False).values
        np.testing.assert_allclose(f1[world.cells_1], f2[world.cells_2], atol=1e-4)


def test_flip_mirrors_the_subject_columns(flipped_world):
    corr = flipped_world.gt_corr
    # x offsets within each subject row must be mirrored between the views
    x0_1, _, _, _ = flipped_world.subject_mask_1.bbox()
    x0_2, _, x1_2, _ = flipped_world.subject_mask_2.bbox()
    off_1 = corr.points_a[:, 0] - x0_1
    off_2 = corr.points_b[:, 0] - x0_2
    side = flipped_world.cfg.subject_side
    np.testing.assert_array_equal(off_2, side - 1 - off_1)
    assert x1_2 - x0_2 == side


def test_argmax_matching_recovers_ground_truth(world):
    f1 = flatten_layer(world.stack_1, world.cfg.distinctive_layer)
    f2 = flatten_layer(world.stack_2, world.cfg.distinctive_layer)
    corr = argmax_match(similarity(f1, f2), world.subject_mask_1, world.subject_mask_2)
    gt = {tuple(p): tuple(q) for p, q in zip(world.gt_corr.points_a, world.gt_corr.points_b)}
    hits = sum(gt[tuple(p)] == tuple(q) for p, q in zip(corr.points_a, corr.points_b))
    assert hits == len(corr)


# ---------------------------------------------------------------------------
# controlled edits
# ---------------------------------------------------------------------------

def test_inpaint_changes_only_the_given_cells(world):
    rng = np.random.default_rng(123)
    region = world.part_region([0], view=1)
    flat = np.flatnonzero(region.bits.ravel())
    edited = world.inpaint_cells(1, flat, rng)
    assert edited.image_id == world.stack_1.image_id + "p"
    for lid in world.cfg.layer_ids:
        before = flatten_layer(world.stack_1, lid, normalize=False).values
        after = flatten_layer(edited, lid, normalize=False).values
        untouched = np.setdiff1d(np.arange(before.shape[0]), flat)
        np.testing.assert_array_equal(after[untouched], before[untouched])
        assert not np.allclose(after[flat], before[flat])


def test_inpaint_blend_zero_reconstructs_the_original(world):
    rng = np.random.default_rng(123)
    flat = np.flatnonzero(world.part_region([1], view=2).bits.ravel())
    edited = world.inpaint_cells(2, flat, rng, blend=0.0)
    for lid in world.cfg.layer_ids:
        np.testing.assert_allclose(
            edited.layer(lid).values, world.stack_2.layer(lid).values, atol=1e-5
        )


def test_inpaint_empty_region_is_a_port_error(world):
    with pytest.raises(PortError, match="empty"):
        world.inpaint_cells(1, np.array([], dtype=np.int64), np.random.default_rng(0))


def test_plant_inconsistency_returns_matching_regions(world):
    s1, s2, r1, r2 = world.plant_inconsistency([0], np.random.default_rng(5))
    assert r1.is_subset_of(world.subject_mask_1)
    assert r2.is_subset_of(world.subject_mask_2)
    assert r1.area == r2.area == int((world.part_of == 0).sum())
    assert s1.image_id.endswith("p") and s2.image_id.endswith("p")
    with pytest.raises(IntegrityError, match="no subject cells"):
        world.plant_inconsistency([99], np.random.default_rng(5))


# ---------------------------------------------------------------------------
# ports
# ---------------------------------------------------------------------------

def test_segmenter_candidates_nest_inside_the_subject(world):
    seg = world.segmenter()
    corr = world.gt_corr
    x, y = map(int, corr.points_a[0])
    cands = seg.candidates(1, (x, y))
    assert len(cands) == 3
    part = int(world.labels_1[y, x])
    np.testing.assert_array_equal(cands[0].mask.bits, world.part_region([part], 1).bits)
    assert cands[0].mask.is_subset_of(cands[1].mask)
    np.testing.assert_array_equal(cands[2].mask.bits, world.subject_mask_1.bits)
    for cand in cands:
        assert cand.mask.is_subset_of(world.subject_mask_1)
        assert cand.area > 0


def test_segmenter_rejects_background_and_out_of_grid(world):
    seg = world.segmenter()
    bg = np.argwhere(world.labels_1 < 0)
    y, x = map(int, bg[0])
    with pytest.raises(PortError, match="background"):
        seg.candidates(1, (x, y))
    with pytest.raises(PortError, match="outside"):
        seg.candidates(1, (-1, 0))
    with pytest.raises(PortError, match="outside"):
        seg.candidates(1, (0, world.cfg.grid))


def test_inpainter_validates_blend(world):
    with pytest.raises(PortError, match="blend"):
        world.inpainter(blend=1.5)
    with pytest.raises(PortError, match="blend"):
        world.inpainter(blend=-0.1)


def test_inpainter_port_edits_within_region(world):
    region = world.part_region([0], view=1)
    out = world.inpainter().inpaint(
        1, region, region.bbox(), "an edit", np.random.default_rng(9)
    )
    flat = np.flatnonzero(region.bits.ravel())
    before = flatten_layer(world.stack_1, 6, normalize=False).values
    after = flatten_layer(out, 6, normalize=False).values
    untouched = np.setdiff1d(np.arange(before.shape[0]), flat)
    np.testing.assert_array_equal(after[untouched], before[untouched])


def test_perceptual_distance_zero_for_identity_positive_for_edit(world):
    region = world.part_region([0], view=1)
    perceptual = world.perceptual()
    assert perceptual.distance(world.stack_1, world.stack_1, region) == 0.0
    edited = world.inpaint_cells(
        1, np.flatnonzero(region.bits.ravel()), np.random.default_rng(11)
    )
    assert perceptual.distance(world.stack_1, edited, region) > 0.15
    with pytest.raises(PortError, match="empty"):
        perceptual.distance(
            world.stack_1, edited, Mask(np.zeros_like(region.bits))
        )


def test_perceptual_distance_grows_with_blend(world):
    region = world.part_region([1], view=1)
    flat = np.flatnonzero(region.bits.ravel())
    perceptual = world.perceptual()
    weak = world.inpaint_cells(1, flat, np.random.default_rng(21), blend=0.2)
    strong = world.inpaint_cells(1, flat, np.random.default_rng(21), blend=1.0)
    d_weak = perceptual.distance(world.stack_1, weak, region)
    d_strong = perceptual.distance(world.stack_1, strong, region)
    assert 0.0 < d_weak < d_strong


# ---------------------------------------------------------------------------
# batch generation
# ---------------------------------------------------------------------------

def test_world_config_for_index_is_deterministic_and_bounded():
    gen = small_generator()
    a = world_config_for_index(gen, seed=77, index=3)
    b = world_config_for_index(gen, seed=77, index=3)
    assert a == b
    c = world_config_for_index(gen, seed=77, index=4)
    assert c != a
    for index in range(10):
        cfg = world_config_for_index(gen, seed=77, index=index)
        assert gen.part_count_min <= cfg.part_count <= gen.part_count_max
        assert gen.subject_frac_min <= cfg.subject_frac <= gen.subject_frac_max


def test_flat_fraction_one_forces_untextured_few_part_worlds():
    gen = small_generator(flat_fraction=1.0)
    for index in range(5):
        cfg = world_config_for_index(gen, seed=77, index=index)
        assert cfg.textured_parts == ()
        assert cfg.part_count <= 2


def test_generator_config_json_round_trip():
    gen = small_generator(flat_fraction=0.25)
    back = GeneratorConfig.from_json(gen.to_json())
    assert back == gen


def test_generate_pairs_writes_resolvable_manifest(tiny_pairs_dir, tiny_pairs):
    assert len(tiny_pairs) == 12
    assert [r.pair_id for r in tiny_pairs] == [f"pair{i:05d}" for i in range(12)]
    first = tiny_pairs[0]
    stack = read_stack(tiny_pairs_dir / first.stack_path_1)
    assert stack.layer_ids() == list(small_template().layer_ids)
    rebuilt = SynthWorldConfig.from_json(first.world)
    assert rebuilt.grid == 12


def test_generate_pairs_rejects_nonpositive_count(tmp_path):
    with pytest.raises(IntegrityError, match="count"):
        generate_pairs(tmp_path, seed=1, count=0, gen=small_generator())


def test_generate_pairs_is_reproducible(tmp_path):
    gen = small_generator()
    a_dir, b_dir = tmp_path / "a", tmp_path / "b"
    generate_pairs(a_dir, seed=5, count=2, gen=gen)
    generate_pairs(b_dir, seed=5, count=2, gen=gen)
    for name in sorted(p.name for p in a_dir.iterdir()):
        assert (a_dir / name).read_bytes() == (b_dir / name).read_bytes()
    assert load_pairs(a_dir / "pairs.jsonl") == load_pairs(b_dir / "pairs.jsonl")
