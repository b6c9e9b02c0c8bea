"""Controlled-inconsistency dataset generation.

Given a consistent two-view pair, the pipeline matches features of one
decoder layer across the views, picks an anchor among unambiguous matches,
segments a region around both ends of the anchor, validates the regions
geometrically, rewrites their content through an inpainting port, and keeps
the result only when a perceptual port confirms the edit actually changed
something. Every kept sample records the evidence for each filter it
passed; every dropped one records the first filter it failed.
"""

from __future__ import annotations

import csv
import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .correspond import (
    argmax_match,
    flatten_layer,
    row_skewness_bulk,
    similarity,
)
from .errors import IntegrityError, PortError
from .store import (
    CorrespondenceSet,
    FeatureStack,
    Mask,
    PairRecord,
    Provenance,
    RegionCandidate,
    SampleRecord,
    append_sample,
    load_pairs,
    read_mask,
    read_stack,
    resolve_path,
    write_corr,
    write_mask,
    write_stack,
)

# first-failure rejection codes, in the order the pipeline can hit them
REJECT_AMBIGUOUS = "ambiguous_matches"
REJECT_TOO_SMALL = "too_small"
REJECT_TOO_LARGE = "too_large"
REJECT_BAD_ASPECT = "bad_aspect"
REJECT_OUTSIDE = "region_outside_subject"
REJECT_PERCEPTUAL = "low_perceptual"
ACCEPTED = "accepted"

REJECTION_CODES = (
    REJECT_AMBIGUOUS,
    REJECT_TOO_SMALL,
    REJECT_TOO_LARGE,
    REJECT_BAD_ASPECT,
    REJECT_OUTSIDE,
    REJECT_PERCEPTUAL,
)


@dataclass
class PipelineConfig:
    """Thresholds for every filter stage."""

    match_layer: int = 6
    anchor_score_min: float = 0.7
    skewness_min: float = 1.3
    region_frac_min: float = 0.05
    region_frac_max: float = 0.60
    aspect_min: float = 0.25
    aspect_max: float = 4.0
    pad_frac: float = 0.25
    perceptual_min: float = 0.15

    def validate(self) -> None:
        if not 0.0 < self.region_frac_min < self.region_frac_max <= 1.0:
            raise IntegrityError(
                f"need 0 < frac_min < frac_max <= 1, got "
                f"[{self.region_frac_min}, {self.region_frac_max}]"
            )
        if abs(self.aspect_min * self.aspect_max - 1.0) > 1e-9:
            raise IntegrityError(
                f"aspect bounds must be reciprocal: {self.aspect_min} * {self.aspect_max} != 1"
            )
        if self.pad_frac < 0:
            raise IntegrityError(f"negative pad_frac: {self.pad_frac}")

    @classmethod
    def from_json(cls, obj: dict) -> "PipelineConfig":
        try:
            cfg = cls(**obj)
        except TypeError as exc:
            raise IntegrityError(f"bad pipeline config: {exc}") from exc
        cfg.validate()
        return cfg


@dataclass
class Rejection:
    """A sample dropped at a filter; ``code`` names the filter, ``detail``
    carries the measured value for the statistics log."""

    code: str
    detail: str = ""


class SegmenterPort(Protocol):
    def candidates(self, view: int, point: tuple[int, int]) -> list[RegionCandidate]: ...


class InpainterPort(Protocol):
    def inpaint(
        self,
        view: int,
        region: Mask,
        crop_bbox: tuple[int, int, int, int],
        prompt: str,
        rng: np.random.Generator,
    ) -> FeatureStack: ...


class PerceptualPort(Protocol):
    def distance(self, before: FeatureStack, after: FeatureStack, region: Mask) -> float: ...


@dataclass
class PortBundle:
    segmenter: SegmenterPort
    inpainter: InpainterPort
    perceptual: PerceptualPort


@dataclass
class PairContext:
    """Everything the pipeline needs about one consistent pair."""

    pair_id: str
    stack_1: FeatureStack
    stack_2: FeatureStack
    subject_mask_1: Mask
    subject_mask_2: Mask
    subject_prompt: str
    target_prompt: str

    def stack(self, view: int) -> FeatureStack:
        return self.stack_1 if view == 1 else self.stack_2

    def subject_mask(self, view: int) -> Mask:
        return self.subject_mask_1 if view == 1 else self.subject_mask_2


@dataclass
class GeneratedSample:
    """In-memory result of a successful pipeline run on one pair."""

    corr: CorrespondenceSet
    region_mask_1: Mask
    region_mask_2: Mask
    inconsistent_stack_1: FeatureStack
    inconsistent_stack_2: FeatureStack
    provenance: Provenance


# ---------------------------------------------------------------------------
# individual stages
# ---------------------------------------------------------------------------

def sample_anchor(
    corr: CorrespondenceSet, cfg: PipelineConfig, rng: np.random.Generator
) -> int | Rejection:
    """Pick one correspondence uniformly among those that are both confident
    (score at or above the floor) and unambiguous (right-skewed row)."""
    eligible = np.flatnonzero(
        (corr.scores >= cfg.anchor_score_min) & (corr.skewness >= cfg.skewness_min)
    )
    if eligible.size == 0:
        return Rejection(
            REJECT_AMBIGUOUS,
            f"no match with score >= {cfg.anchor_score_min} "
            f"and skewness >= {cfg.skewness_min}",
        )
    return int(eligible[rng.integers(0, eligible.size)])


def select_region(candidates: Sequence[RegionCandidate]) -> RegionCandidate:
    """Smallest-area candidate; ties keep the earliest."""
    if len(candidates) == 0:
        raise IntegrityError("segmenter returned no region candidates")
    best = candidates[0]
    for cand in candidates[1:]:
        if cand.area < best.area:
            best = cand
    return best


def validate_regions(
    region_1: RegionCandidate,
    region_2: RegionCandidate,
    subject_1: Mask,
    subject_2: Mask,
    cfg: PipelineConfig,
) -> Rejection | None:
    """First geometric violation wins; ``None`` means both regions pass."""
    for view, region, subject in ((1, region_1, subject_1), (2, region_2, subject_2)):
        if subject.area == 0:
            raise IntegrityError(f"subject mask {view} is empty")
        frac = region.area / subject.area
        if frac < cfg.region_frac_min:
            return Rejection(REJECT_TOO_SMALL, f"view {view}: |R|/|O| = {frac:.4f}")
        if frac > cfg.region_frac_max:
            return Rejection(REJECT_TOO_LARGE, f"view {view}: |R|/|O| = {frac:.4f}")
        aspect = region.aspect()
        if not cfg.aspect_min <= aspect <= cfg.aspect_max:
            return Rejection(REJECT_BAD_ASPECT, f"view {view}: aspect = {aspect:.4f}")
        if not region.mask.is_subset_of(subject):
            return Rejection(REJECT_OUTSIDE, f"view {view}: region leaves the subject")
    return None


def crop_with_padding(
    bbox: tuple[int, int, int, int], pad_frac: float, bounds: tuple[int, int]
) -> tuple[int, int, int, int]:
    """Grow a half-open bbox by ceil(pad_frac * longer side), clamped to the
    grid; gives the inpainting port context beyond the region itself."""
    x0, y0, x1, y1 = bbox
    height, width = bounds
    if not (0 <= x0 < x1 <= width and 0 <= y0 < y1 <= height):
        raise IntegrityError(f"bbox {bbox} does not fit bounds {bounds}")
    pad = int(np.ceil(pad_frac * max(x1 - x0, y1 - y0)))
    return (max(0, x0 - pad), max(0, y0 - pad), min(width, x1 + pad), min(height, y1 + pad))


def make_inconsistent_pair(
    ctx: PairContext,
    region_1: RegionCandidate,
    region_2: RegionCandidate,
    inpainter: InpainterPort,
    cfg: PipelineConfig,
    rng: np.random.Generator,
) -> tuple[FeatureStack, FeatureStack]:
    """Rewrite both regions independently through the inpainting port."""
    out = []
    for view, region in ((1, region_1), (2, region_2)):
        grid = ctx.subject_mask(view).bits.shape
        crop = crop_with_padding(region.bbox, cfg.pad_frac, grid)
        out.append(inpainter.inpaint(view, region.mask, crop, ctx.target_prompt, rng))
    return out[0], out[1]


def perceptual_filter(
    ctx: PairContext,
    after_1: FeatureStack,
    after_2: FeatureStack,
    region_1: Mask,
    region_2: Mask,
    perceptual: PerceptualPort,
    cfg: PipelineConfig,
) -> tuple[bool, float, float]:
    """Keep only edits the perceptual port can actually see in both views."""
    d1 = perceptual.distance(ctx.stack_1, after_1, region_1)
    d2 = perceptual.distance(ctx.stack_2, after_2, region_2)
    if d1 < 0 or d2 < 0:
        raise PortError(f"negative perceptual distance: {d1}, {d2}")
    return (min(d1, d2) >= cfg.perceptual_min), d1, d2


# ---------------------------------------------------------------------------
# full pipeline on one pair
# ---------------------------------------------------------------------------

def match_pair(ctx: PairContext, cfg: PipelineConfig) -> CorrespondenceSet:
    """Dense correspondences on the match layer, with per-row ambiguity
    skewness filled in, subject-to-subject."""
    f1 = flatten_layer(ctx.stack_1, cfg.match_layer)
    f2 = flatten_layer(ctx.stack_2, cfg.match_layer)
    d = similarity(f1, f2)
    corr = argmax_match(d, ctx.subject_mask_1, ctx.subject_mask_2)
    skew, _ = row_skewness_bulk(d, ctx.subject_mask_1, ctx.subject_mask_2)
    corr.skewness = skew.astype(np.float32)
    corr.validate()
    return corr


def generate_sample(
    ctx: PairContext,
    ports: PortBundle,
    cfg: PipelineConfig,
    rng: np.random.Generator,
) -> GeneratedSample | Rejection:
    """Run every stage on one pair; the first failing filter rejects it."""
    corr = match_pair(ctx, cfg)

    anchor = sample_anchor(corr, cfg, rng)
    if isinstance(anchor, Rejection):
        return anchor
    p1 = (int(corr.points_a[anchor, 0]), int(corr.points_a[anchor, 1]))
    p2 = (int(corr.points_b[anchor, 0]), int(corr.points_b[anchor, 1]))

    region_1 = select_region(ports.segmenter.candidates(1, p1))
    region_2 = select_region(ports.segmenter.candidates(2, p2))

    provenance = Provenance(
        anchor_skewness=float(corr.skewness[anchor]),
        anchor_score=float(corr.scores[anchor]),
        anchor_point_1=p1,
        anchor_point_2=p2,
    )

    verdict = validate_regions(region_1, region_2, ctx.subject_mask_1, ctx.subject_mask_2, cfg)
    if verdict is not None:
        return verdict

    after_1, after_2 = make_inconsistent_pair(ctx, region_1, region_2, ports.inpainter, cfg, rng)
    keep, d1, d2 = perceptual_filter(
        ctx, after_1, after_2, region_1.mask, region_2.mask, ports.perceptual, cfg
    )
    provenance.perceptual_distance_1 = d1
    provenance.perceptual_distance_2 = d2
    if not keep:
        return Rejection(REJECT_PERCEPTUAL, f"distances {d1:.4f}, {d2:.4f}")

    return GeneratedSample(
        corr=corr,
        region_mask_1=region_1.mask,
        region_mask_2=region_2.mask,
        inconsistent_stack_1=after_1,
        inconsistent_stack_2=after_2,
        provenance=provenance,
    )


# ---------------------------------------------------------------------------
# batch runner over a pair manifest
# ---------------------------------------------------------------------------

@dataclass
class PipelineStats:
    accepted: int = 0
    rejections: Counter = field(default_factory=Counter)

    def record(self, code: str) -> None:
        if code == ACCEPTED:
            self.accepted += 1
        else:
            self.rejections[code] += 1

    def rows(self) -> list[tuple[str, int]]:
        out = [(ACCEPTED, self.accepted)]
        out.extend((code, self.rejections.get(code, 0)) for code in REJECTION_CODES)
        extra = sorted(set(self.rejections) - set(REJECTION_CODES))
        out.extend((code, self.rejections[code]) for code in extra)
        return out


def write_rejection_csv(path: str | Path, stats: PipelineStats) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["code", "count"])
        writer.writerows(stats.rows())


def synthetic_ports_for(record: PairRecord, blend: float = 1.0) -> PortBundle:
    """Rebuild the pair's world from its recorded recipe and bind the
    synthetic ports to it."""
    from .synth import SynthWorldConfig, synth_world

    if not record.world:
        raise IntegrityError(
            f"pair {record.pair_id} carries no world recipe; supply a port factory"
        )
    world = synth_world(SynthWorldConfig.from_json(record.world), image_prefix=record.pair_id)
    return PortBundle(
        segmenter=world.segmenter(),
        inpainter=world.inpainter(blend),
        perceptual=world.perceptual(),
    )


def run_pipeline(
    pairs_path: str | Path,
    out_dir: str | Path,
    seed: int,
    cfg: PipelineConfig | None = None,
    ports_for: Callable[[PairRecord], PortBundle] | None = None,
    manifest_name: str = "samples.jsonl",
    stats_name: str = "rejections.csv",
) -> PipelineStats:
    """Run the pipeline over every pair in a manifest.

    Each pair gets its own rng stream (global seed XOR pair index) so
    results do not depend on processing order. Artifacts and the sample
    manifest land in ``out_dir``; consistent-pair artifacts are referenced
    relative to it, never copied.
    """
    cfg = cfg or PipelineConfig()
    cfg.validate()
    ports_for = ports_for or synthetic_ports_for
    pairs_path = Path(pairs_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = load_pairs(pairs_path)

    stats = PipelineStats()
    manifest = out_dir / manifest_name
    with open(manifest, "wb") as sink:
        for index, pair in enumerate(records):
            rng = np.random.default_rng(seed ^ index)
            ctx = PairContext(
                pair_id=pair.pair_id,
                stack_1=read_stack(resolve_path(pairs_path, pair.stack_path_1), pair.image_id_1),
                stack_2=read_stack(resolve_path(pairs_path, pair.stack_path_2), pair.image_id_2),
                subject_mask_1=read_mask(resolve_path(pairs_path, pair.subject_mask_path_1)),
                subject_mask_2=read_mask(resolve_path(pairs_path, pair.subject_mask_path_2)),
                subject_prompt=pair.subject_prompt,
                target_prompt=pair.target_prompt,
            )
            result = generate_sample(ctx, ports_for(pair), cfg, rng)
            if isinstance(result, Rejection):
                stats.record(result.code)
                continue
            stats.record(ACCEPTED)
            append_sample(sink, _write_sample(out_dir, pairs_path, pair, result))
    write_rejection_csv(out_dir / stats_name, stats)
    return stats


def _relative(target: Path, start: Path) -> str:
    return os.path.relpath(target, start).replace("\\", "/")


def _write_sample(
    out_dir: Path, pairs_path: Path, pair: PairRecord, sample: GeneratedSample
) -> SampleRecord:
    sid = pair.pair_id
    paths = {
        "inconsistent_stack_path_1": out_dir / f"{sid}_1p.mtgf",
        "inconsistent_stack_path_2": out_dir / f"{sid}_2p.mtgf",
        "region_mask_path_1": out_dir / f"{sid}_r1.mtgm",
        "region_mask_path_2": out_dir / f"{sid}_r2.mtgm",
        "corr_path": out_dir / f"{sid}_corr.mtgc",
    }
    write_stack(sample.inconsistent_stack_1, paths["inconsistent_stack_path_1"])
    write_stack(sample.inconsistent_stack_2, paths["inconsistent_stack_path_2"])
    write_mask(sample.region_mask_1, paths["region_mask_path_1"])
    write_mask(sample.region_mask_2, paths["region_mask_path_2"])
    write_corr(sample.corr, paths["corr_path"])

    return SampleRecord(
        sample_id=sid,
        image_id_1=pair.image_id_1,
        image_id_2=pair.image_id_2,
        stack_path_1=_relative(resolve_path(pairs_path, pair.stack_path_1), out_dir),
        stack_path_2=_relative(resolve_path(pairs_path, pair.stack_path_2), out_dir),
        subject_mask_path_1=_relative(resolve_path(pairs_path, pair.subject_mask_path_1), out_dir),
        subject_mask_path_2=_relative(resolve_path(pairs_path, pair.subject_mask_path_2), out_dir),
        inconsistent_stack_path_1=paths["inconsistent_stack_path_1"].name,
        inconsistent_stack_path_2=paths["inconsistent_stack_path_2"].name,
        region_mask_path_1=paths["region_mask_path_1"].name,
        region_mask_path_2=paths["region_mask_path_2"].name,
        corr_path=paths["corr_path"].name,
        subject_prompt=pair.subject_prompt,
        target_prompt=pair.target_prompt,
        provenance=sample.provenance,
    )
