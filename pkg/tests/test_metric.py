"""The visual-semantic match score and its inconsistency map."""

from __future__ import annotations

import json
import struct

import numpy as np
import pytest

from worldlets import small_template
from vsmatch.disentangle import AggregatorParams, ArchConfig, init_params
from vsmatch.errors import IntegrityError
from vsmatch.metric import (
    NO_SEMANTIC_OVERLAP,
    VsmConfig,
    inconsistency_map,
    vsm,
    write_report,
)
from vsmatch.store import FeatureStack, LayerBlock, Mask
from vsmatch.synth import synth_world

T_VALUES = (0.9, 0.65, 0.3, 0.7)


def block_params() -> AggregatorParams:
    """An aggregator that reads the semantic one-hot straight from channels
    0-3 and the visual vector from channels 4-11, so every similarity is a
    hand-computable dot product."""
    arch = ArchConfig(layer_channels={6: 12}, q=8, grid=(2, 2), tau=0.07)
    params = init_params(arch, seed=0)
    w_sem = np.zeros((8, 12))
    w_sem[np.arange(4), np.arange(4)] = 1.0
    w_vis = np.zeros((8, 12))
    w_vis[np.arange(8), 4 + np.arange(8)] = 1.0
    params.tensors["semantic/6/w_in"] = w_sem
    params.tensors["visual/6/w_in"] = w_vis
    return params


def block_stacks(t_values=T_VALUES, sem_overlap: bool = True):
    """Four positions; position i of image 2 keeps semantic identity e_i but
    its visual vector makes cos(u_i, v_i) = t_values[i] exactly."""
    f1 = np.zeros((4, 12), dtype=np.float32)
    f2 = np.zeros((4, 12), dtype=np.float32)
    for i, t in enumerate(t_values):
        f1[i, i] = 1.0
        f1[i, 4 + i] = 1.0
        if sem_overlap:
            f2[i, i] = 1.0
        else:
            f2[i, 0:4] = 0.5  # cos 0.5 against every one-hot: never confident
        f2[i, 4 + i] = t
        f2[i, 8 + i] = np.sqrt(1.0 - t * t)
    s1 = FeatureStack("one", [LayerBlock(6, f1.reshape(2, 2, 12))])
    s2 = FeatureStack("two", [LayerBlock(6, f2.reshape(2, 2, 12))])
    return s1, s2


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def test_config_bounds_and_round_trip():
    with pytest.raises(IntegrityError, match="t_v"):
        VsmConfig(t_v=1.0).validate()
    with pytest.raises(IntegrityError, match="t_s"):
        VsmConfig(t_s=-1.0).validate()
    with pytest.raises(IntegrityError, match="direction"):
        VsmConfig(direction="both").validate()
    cfg = VsmConfig(t_s=0.5, t_v=0.2, direction="symmetric", restrict_to_subject=False)
    assert VsmConfig.from_json(cfg.to_json()) == cfg


# ---------------------------------------------------------------------------
# the score on the hand-computable construction
# ---------------------------------------------------------------------------

def test_vsm_counts_confident_visual_matches():
    s1, s2 = block_stacks()
    report = vsm(s1, s2, block_params())
    # semantic best is 1.0 everywhere; visual bests are exactly T_VALUES,
    # of which 0.9, 0.65, 0.7 clear t_v = 0.6
    assert report.defined
    assert report.vsm == pytest.approx(0.75, abs=1e-12)
    np.testing.assert_allclose(report.semantic_scores, 1.0, atol=1e-7)
    np.testing.assert_allclose(report.visual_scores, T_VALUES, atol=1e-7)
    out = report.to_json()
    assert out["n_evaluated"] == 4
    assert out["n_semantic_matches"] == 4
    assert out["n_visual_matches"] == 3
    assert out["vsm"] == pytest.approx(0.75)


def test_map_scales_the_visual_shortfall():
    s1, s2 = block_stacks()
    report = vsm(s1, s2, block_params())
    want = np.zeros((2, 2))
    want.ravel()[2] = (0.6 - 0.3) / 1.6  # the one position below threshold
    np.testing.assert_allclose(report.inconsistency_map, want, atol=1e-7)
    np.testing.assert_allclose(
        inconsistency_map(s1, s2, block_params()), want, atol=1e-7
    )


def test_map_saturates_at_one_for_perfect_anticorrelation():
    f1 = np.zeros((1, 1, 12), dtype=np.float32)
    f2 = np.zeros((1, 1, 12), dtype=np.float32)
    f1[0, 0, 0] = f2[0, 0, 0] = 1.0  # same semantic identity
    f1[0, 0, 4] = 1.0
    f2[0, 0, 4] = -1.0  # visual cosine is exactly -1
    arch = ArchConfig(layer_channels={6: 12}, q=8, grid=(1, 1), tau=0.07)
    params = init_params(arch, seed=0)
    params.tensors["semantic/6/w_in"] = block_params().tensors["semantic/6/w_in"]
    params.tensors["visual/6/w_in"] = block_params().tensors["visual/6/w_in"]
    report = vsm(FeatureStack("a", [LayerBlock(6, f1)]), FeatureStack("b", [LayerBlock(6, f2)]), params)
    assert report.vsm == 0.0
    assert report.inconsistency_map[0, 0] == pytest.approx(1.0, abs=1e-7)


def test_vsm_is_none_without_semantic_overlap():
    s1, s2 = block_stacks(sem_overlap=False)
    report = vsm(s1, s2, block_params())
    assert not report.defined
    assert report.vsm is None
    assert report.reason == NO_SEMANTIC_OVERLAP
    assert report.j_s.size == 0
    np.testing.assert_array_equal(report.inconsistency_map, 0.0)
    assert report.to_json()["vsm"] is None


def test_directions_and_symmetric_average():
    s1, s2 = block_stacks()
    forward = vsm(s1, s2, block_params(), cfg=VsmConfig(direction="1to2"))
    reverse = vsm(s1, s2, block_params(), cfg=VsmConfig(direction="2to1"))
    both = vsm(s1, s2, block_params(), cfg=VsmConfig(direction="symmetric"))
    # the visual similarity matrix is diagonal, so both directions agree here
    assert forward.vsm == pytest.approx(0.75)
    assert reverse.vsm == pytest.approx(0.75)
    assert both.vsm == pytest.approx(0.75)
    assert both.direction_scores == {
        "1to2": pytest.approx(0.75),
        "2to1": pytest.approx(0.75),
    }
    assert forward.direction_scores == {"1to2": pytest.approx(0.75)}


def test_symmetric_is_undefined_when_either_direction_is():
    # image 2's semantics are diffuse: 2->1 queries find no confident match
    # either, and the symmetric average must stay undefined rather than
    # silently averaging with a None
    s1, s2 = block_stacks(sem_overlap=False)
    report = vsm(s1, s2, block_params(), cfg=VsmConfig(direction="symmetric"))
    assert report.vsm is None
    assert report.direction_scores["1to2"] is None


def test_score_is_non_increasing_in_the_visual_threshold():
    s1, s2 = block_stacks()
    thresholds = np.linspace(-0.9, 0.95, 10)
    scores = [
        vsm(s1, s2, block_params(), cfg=VsmConfig(t_v=float(t))).vsm for t in thresholds
    ]
    assert all(s is not None for s in scores)
    assert all(a >= b for a, b in zip(scores, scores[1:]))
    assert scores[0] == 1.0  # every visual cosine clears -0.9


def test_self_comparison_scores_one():
    world = synth_world(small_template(layout_seed=1, semantic_seed=2, appearance_seed=3))
    params = init_params(
        ArchConfig.from_stack(world.stack_1, q=16, tau=0.07), seed=4
    )
    report = vsm(world.stack_1, world.stack_1, params)
    assert report.vsm == 1.0


def test_spatial_permutation_of_the_candidate_image_changes_nothing():
    world = synth_world(small_template(layout_seed=4, semantic_seed=5, appearance_seed=6))
    params = init_params(ArchConfig.from_stack(world.stack_1, q=16, tau=0.07), seed=7)
    base = vsm(
        world.stack_1, world.stack_2, params, world.subject_mask_1, world.subject_mask_2
    )
    rng = np.random.default_rng(11)
    perm = rng.permutation(world.cfg.grid * world.cfg.grid)
    layers = []
    for block in world.stack_2.layers:
        flat = block.values.reshape(-1, block.channels)[perm]
        layers.append(LayerBlock(block.layer_id, flat.reshape(block.values.shape)))
    shuffled_stack = FeatureStack("shuffled", layers)
    shuffled_mask = Mask(
        world.subject_mask_2.bits.ravel()[perm].reshape(world.subject_mask_2.bits.shape)
    )
    shuffled = vsm(
        world.stack_1, shuffled_stack, params, world.subject_mask_1, shuffled_mask
    )
    assert shuffled.vsm == pytest.approx(base.vsm, abs=1e-12)
    np.testing.assert_allclose(shuffled.semantic_scores, base.semantic_scores, atol=1e-12)
    np.testing.assert_allclose(shuffled.visual_scores, base.visual_scores, atol=1e-12)


# ---------------------------------------------------------------------------
# masks
# ---------------------------------------------------------------------------

def test_candidate_mask_excludes_distractors():
    s1, s2 = block_stacks()
    mask_all = Mask(np.ones((2, 2), np.uint8))
    # drop position 0 from the candidate side: row 0 loses its only semantic
    # match and falls out of J_s; the rest keep their diagonal matches
    mask_2 = Mask(np.array([[0, 1], [1, 1]], dtype=np.uint8))
    report = vsm(s1, s2, block_params(), mask_all, mask_2)
    out = report.to_json()
    assert out["n_evaluated"] == 4
    assert out["n_semantic_matches"] == 3
    assert report.vsm == pytest.approx(2 / 3)  # 0.65 and 0.7 pass, 0.3 fails


def test_reference_mask_limits_evaluated_positions():
    s1, s2 = block_stacks()
    mask_1 = Mask(np.array([[1, 1], [0, 0]], dtype=np.uint8))
    mask_all = Mask(np.ones((2, 2), np.uint8))
    report = vsm(s1, s2, block_params(), mask_1, mask_all)
    assert report.to_json()["n_evaluated"] == 2
    assert report.vsm == pytest.approx(1.0)  # 0.9 and 0.65 both clear 0.6


def test_restriction_flag_ignores_masks_when_off():
    s1, s2 = block_stacks()
    mask_1 = Mask(np.array([[1, 1], [0, 0]], dtype=np.uint8))
    cfg = VsmConfig(restrict_to_subject=False)
    report = vsm(s1, s2, block_params(), mask_1, mask_1, cfg=cfg)
    assert report.to_json()["n_evaluated"] == 4


def test_masks_resample_to_the_common_grid():
    s1, s2 = block_stacks()
    fine = Mask(np.kron(np.array([[1, 1], [0, 0]], dtype=np.uint8), np.ones((2, 2), np.uint8)))
    coarse = Mask(np.array([[1, 1], [0, 0]], dtype=np.uint8))
    all_fine = Mask(np.ones((4, 4), np.uint8))
    via_resample = vsm(s1, s2, block_params(), fine, all_fine)
    direct = vsm(s1, s2, block_params(), coarse, Mask(np.ones((2, 2), np.uint8)))
    assert via_resample.vsm == direct.vsm
    assert via_resample.to_json()["n_evaluated"] == 2


def test_mask_that_vanishes_on_resample_is_an_error():
    s1, s2 = block_stacks()
    lonely = np.zeros((24, 24), dtype=np.uint8)
    lonely[0, 0] = 1
    with pytest.raises(IntegrityError, match="empty after resampling"):
        vsm(s1, s2, block_params(), Mask(lonely), Mask(np.ones((24, 24), np.uint8)))


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------

def test_write_report_emits_json_and_both_map_formats(tmp_path):
    s1, s2 = block_stacks()
    report = vsm(s1, s2, block_params())
    paths = write_report(report, tmp_path, prefix="case")
    assert [p.name for p in paths] == ["case_report.json", "case_map.f32", "case_map.pgm"]
    with open(paths[0]) as handle:
        obj = json.load(handle)
    assert obj["vsm"] == pytest.approx(0.75)
    assert obj["config"]["t_v"] == 0.6
    raw = paths[1].read_bytes()
    h, w = struct.unpack("<II", raw[:8])
    assert (h, w) == (2, 2)
    grid = np.frombuffer(raw[8:], dtype="<f4").reshape(2, 2)
    np.testing.assert_allclose(grid, report.inconsistency_map, atol=1e-7)
    assert paths[2].read_bytes().startswith(b"P5\n2 2\n255\n")
