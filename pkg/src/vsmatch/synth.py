"""Fully synthetic feature worlds for training and verification.

A world is a pair of views of one "subject": a rectangle of grid cells
partitioned into parts. Every subject cell carries a base vector made of
three blocks: a per-part code (shared by all cells of the part), a
per-cell positional code (tied to the subject's geometry, so it survives
appearance edits), and a per-cell appearance code. View 2 places the same
cells elsewhere through a warp (translation and optional horizontal flip),
which is a bijection on subject cells. Per-layer outputs are fixed random
linear mixtures of the base field, distinct per layer and shared across
views, so no single layer exposes the full code.

The synthetic inpainter resamples appearance codes (and the noise draw)
inside a region, leaving every other cell of the serialized stack
bit-for-bit unchanged. That gives controlled inconsistencies with exact
ground truth and zero pretrained models.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .correspond import flatten_layer, normalize_rows
from .errors import IntegrityError, PortError
from .store import (
    CorrespondenceSet,
    FeatureStack,
    LayerBlock,
    Mask,
    PairRecord,
    RegionCandidate,
    append_pair,
    write_corr,
    write_mask,
    write_stack,
)

# rng stream tags, one per independent draw family
_LAYOUT, _SEMANTIC, _APPEAR, _BG_BIAS, _BG1, _BG2, _EPS1, _EPS2, _MIX, _GAIN = range(10)

# Calibrates what noise_scale means: at scale 1.0 the per-view noise energy
# is (NOISE_GAIN)^2 ~ 2.25x the code energy, which puts true-match cosines
# right at the distractor ceiling, so matching accuracy visibly degrades
# between scale 0.5 and scale 1.0 instead of saturating at both.
NOISE_GAIN = 1.5


def _rng(*entropy: int) -> np.random.Generator:
    return np.random.default_rng(list(entropy))


@dataclass
class SynthWorldConfig:
    """Deterministic recipe for one two-view world."""

    grid: int = 48
    part_count: int = 6
    subject_frac: float = 0.55
    layout_seed: int = 0
    semantic_seed: int = 0
    appearance_seed: int = 0
    mixing_seed: int = 0
    layer_ids: tuple[int, ...] = (5, 6, 8, 9)
    # One int for all layers, or one per layer id. The default widens the
    # matching layer: dense correspondence needs tightly concentrated
    # off-match cosines, and cosine spread shrinks like 1/sqrt(channels).
    layer_channels: int | tuple[int, ...] = (24, 200, 24, 24)
    # The layer whose mixing preserves inner products exactly (orthonormal
    # rows; needs channels >= base_dim there). Emulates the backbone stage
    # that dense matching runs on: narrow random mixings add cross-cell
    # cosine cross-talk that buries the match spike and caps row skewness.
    distinctive_layer: int | None = 6
    sem_dim: int = 8
    pos_dim: int = 56
    app_dim: int = 136
    noise_scale: float = 0.05
    translate: bool = True
    flip: bool | None = None  # None: drawn from the layout stream
    background_static: bool = False
    textured_parts: tuple[int, ...] | None = None  # None: every part is textured
    planted_parts: tuple[int, ...] | None = None  # parts pre-designated for planting

    def __post_init__(self) -> None:
        self.layer_ids = tuple(int(x) for x in self.layer_ids)
        if not isinstance(self.layer_channels, int):
            self.layer_channels = tuple(int(x) for x in self.layer_channels)
        if self.textured_parts is not None:
            self.textured_parts = tuple(int(x) for x in self.textured_parts)
        if self.planted_parts is not None:
            self.planted_parts = tuple(int(x) for x in self.planted_parts)

    def validate(self) -> None:
        if self.part_count < 1:
            raise IntegrityError(f"degenerate world: part_count={self.part_count}")
        if self.grid < 2:
            raise IntegrityError(f"grid too small: {self.grid}")
        if not 0.0 < self.subject_frac <= 1.0:
            raise IntegrityError(f"subject_frac out of (0, 1]: {self.subject_frac}")
        if self.part_count > self.subject_side**2:
            raise IntegrityError("more parts than subject cells")
        if len(self.layer_ids) != len(set(self.layer_ids)) or any(
            b <= a for a, b in zip(self.layer_ids, self.layer_ids[1:])
        ):
            raise IntegrityError(f"layer_ids must be strictly increasing: {self.layer_ids}")
        channels = (
            (self.layer_channels,)
            if isinstance(self.layer_channels, int)
            else self.layer_channels
        )
        if not isinstance(self.layer_channels, int) and len(channels) != len(self.layer_ids):
            raise IntegrityError(
                f"{len(channels)} channel counts for {len(self.layer_ids)} layers"
            )
        if min(self.sem_dim, self.pos_dim, self.app_dim, *channels) < 1:
            raise IntegrityError("all code/channel dims must be >= 1")
        if (
            self.distinctive_layer is not None
            and self.distinctive_layer in self.layer_ids
            and self.channels_for(self.distinctive_layer) < self.base_dim
        ):
            raise IntegrityError(
                f"distinctive layer {self.distinctive_layer} needs at least "
                f"base_dim={self.base_dim} channels to preserve inner products"
            )
        if self.noise_scale < 0:
            raise IntegrityError(f"negative noise scale: {self.noise_scale}")

    @property
    def subject_side(self) -> int:
        return max(1, round(self.grid * self.subject_frac))

    @property
    def base_dim(self) -> int:
        return self.sem_dim + self.pos_dim + self.app_dim

    @property
    def app_slice(self) -> slice:
        return slice(self.sem_dim + self.pos_dim, self.base_dim)

    def channels_for(self, layer_id: int) -> int:
        if isinstance(self.layer_channels, int):
            return self.layer_channels
        return self.layer_channels[self.layer_ids.index(layer_id)]

    def to_json(self) -> dict:
        obj = asdict(self)
        obj["layer_ids"] = list(self.layer_ids)
        if not isinstance(self.layer_channels, int):
            obj["layer_channels"] = list(self.layer_channels)
        for name in ("textured_parts", "planted_parts"):
            if obj[name] is not None:
                obj[name] = list(obj[name])
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "SynthWorldConfig":
        kwargs = dict(obj)
        kwargs["layer_ids"] = tuple(kwargs.get("layer_ids", cls.layer_ids))
        channels = kwargs.get("layer_channels", cls.layer_channels)
        kwargs["layer_channels"] = channels if isinstance(channels, int) else tuple(channels)
        for name in ("textured_parts", "planted_parts"):
            if kwargs.get(name) is not None:
                kwargs[name] = tuple(kwargs[name])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise IntegrityError(f"bad world config: {exc}") from exc


@dataclass
class SynthWorld:
    """A realized world: two stacks, masks, ground truth, and the private
    state the synthetic ports need to act on it."""

    cfg: SynthWorldConfig
    stack_1: FeatureStack
    stack_2: FeatureStack
    subject_mask_1: Mask
    subject_mask_2: Mask
    gt_corr: CorrespondenceSet
    labels_1: np.ndarray  # (grid, grid) int32, -1 on background
    labels_2: np.ndarray
    part_of: np.ndarray  # (n_subject_cells,) part id per canonical cell
    cells_1: np.ndarray  # (n,) flat position of canonical cell k in view 1
    cells_2: np.ndarray
    part_seeds_rc: np.ndarray  # (part_count, 2) seed cell (row, col) in subject frame
    codes: tuple[np.ndarray, np.ndarray]  # per view (grid^2, base_dim) noise-free
    eps: tuple[np.ndarray, np.ndarray]  # per view unit-scale noise draws
    mixing: dict[int, np.ndarray]  # layer_id -> (base_dim, channels)
    gains: dict[int, np.ndarray]  # layer_id -> (base_dim,) block gain vector

    # -- lookups ---------------------------------------------------------

    def stack(self, view: int) -> FeatureStack:
        return self.stack_1 if view == 1 else self.stack_2

    def subject_mask(self, view: int) -> Mask:
        return self.subject_mask_1 if view == 1 else self.subject_mask_2

    def labels(self, view: int) -> np.ndarray:
        return self.labels_1 if view == 1 else self.labels_2

    def part_region(self, part_ids: Sequence[int], view: int) -> Mask:
        lab = self.labels(view)
        bits = np.isin(lab, np.asarray(list(part_ids), dtype=np.int32)).astype(np.uint8)
        return Mask(bits)

    # -- controlled edits ------------------------------------------------

    def inpaint_cells(
        self, view: int, flat_cells: np.ndarray, rng: np.random.Generator, blend: float = 1.0
    ) -> FeatureStack:
        """Resample appearance codes at the given flat positions and remix
        only those rows; every other serialized value is bitwise unchanged."""
        cfg = self.cfg
        flat_cells = np.asarray(flat_cells, dtype=np.int64)
        if flat_cells.size == 0:
            raise PortError("inpaint called with an empty region")
        codes = self.codes[view - 1]
        base = codes + cfg.noise_scale * NOISE_GAIN * self.eps[view - 1]

        replacement = codes[flat_cells].copy()
        replacement[:, cfg.app_slice] = rng.standard_normal((flat_cells.size, cfg.app_dim))
        replacement += cfg.noise_scale * NOISE_GAIN * rng.standard_normal(
            (flat_cells.size, cfg.base_dim)
        )
        blended = base[flat_cells] + blend * (replacement - base[flat_cells])

        source = self.stack(view)
        layers = []
        for block in source.layers:
            values = block.values.copy()
            rows = (blended * self.gains[block.layer_id]) @ self.mixing[block.layer_id]
            values.reshape(cfg.grid * cfg.grid, -1)[flat_cells] = rows.astype(np.float32)
            layers.append(LayerBlock(block.layer_id, values))
        return FeatureStack(image_id=f"{source.image_id}p", layers=layers)

    def plant_inconsistency(
        self, part_ids: Sequence[int], rng: np.random.Generator, blend: float = 1.0
    ) -> tuple[FeatureStack, FeatureStack, Mask, Mask]:
        """Directly plant an inconsistent pair on whole parts, bypassing the
        pipeline; returns the edited stacks and both region masks."""
        wanted = np.isin(self.part_of, np.asarray(list(part_ids), dtype=np.int32))
        if not wanted.any():
            raise IntegrityError(f"no subject cells in parts {part_ids}")
        r1 = self.part_region(part_ids, view=1)
        r2 = self.part_region(part_ids, view=2)
        s1 = self.inpaint_cells(1, self.cells_1[wanted], rng, blend)
        s2 = self.inpaint_cells(2, self.cells_2[wanted], rng, blend)
        return s1, s2, r1, r2

    # -- ports -----------------------------------------------------------

    def segmenter(self) -> "SyntheticSegmenter":
        return SyntheticSegmenter(self)

    def inpainter(self, blend: float = 1.0) -> "SyntheticInpainter":
        return SyntheticInpainter(self, blend)

    def perceptual(self, layer_id: int = 6) -> "SyntheticPerceptual":
        return SyntheticPerceptual(self, layer_id)


def synth_world(cfg: SynthWorldConfig, image_prefix: str = "world") -> SynthWorld:
    """Build a world deterministically from its config."""
    cfg.validate()
    g, s = cfg.grid, cfg.subject_side
    n = s * s

    rl = _rng(cfg.layout_seed, _LAYOUT)
    origin_1 = (int(rl.integers(0, g - s + 1)), int(rl.integers(0, g - s + 1)))
    if cfg.translate:
        origin_2 = (int(rl.integers(0, g - s + 1)), int(rl.integers(0, g - s + 1)))
    else:
        origin_2 = origin_1
    flip = bool(rl.integers(0, 2)) if cfg.flip is None else cfg.flip

    # part layout: Voronoi assignment over seed cells in the subject frame
    seed_flat = np.sort(rl.choice(n, size=cfg.part_count, replace=False))
    seeds_rc = np.stack([seed_flat // s, seed_flat % s], axis=1)
    rr, cc = np.divmod(np.arange(n), s)
    d2 = (rr[:, None] - seeds_rc[None, :, 0]) ** 2 + (cc[:, None] - seeds_rc[None, :, 1]) ** 2
    part_of = np.argmin(d2, axis=1).astype(np.int32)  # first minimum: lowest part id wins ties

    textured = np.ones(cfg.part_count, dtype=bool)
    if cfg.textured_parts is not None:
        textured[:] = False
        textured[list(cfg.textured_parts)] = True
    cell_textured = textured[part_of]

    part_codes = _rng(cfg.semantic_seed, _SEMANTIC).standard_normal((cfg.part_count, cfg.sem_dim))
    pos_codes = _rng(cfg.semantic_seed, _SEMANTIC, 1).standard_normal((n, cfg.pos_dim))
    app_codes = _rng(cfg.appearance_seed, _APPEAR).standard_normal((n, cfg.app_dim))
    subject_codes = np.concatenate(
        [
            part_codes[part_of],
            pos_codes * cell_textured[:, None],
            app_codes * cell_textured[:, None],
        ],
        axis=1,
    )

    bg_bias = _rng(cfg.appearance_seed, _BG_BIAS).standard_normal(cfg.base_dim)
    field_1 = bg_bias + _rng(cfg.appearance_seed, _BG1).standard_normal((g * g, cfg.base_dim))
    if cfg.background_static:
        field_2 = field_1.copy()
    else:
        field_2 = bg_bias + _rng(cfg.appearance_seed, _BG2).standard_normal((g * g, cfg.base_dim))

    # warp: canonical subject cell k -> flat grid positions in both views
    cols_2 = (s - 1 - cc) if flip else cc
    cells_1 = (origin_1[0] + rr) * g + (origin_1[1] + cc)
    cells_2 = (origin_2[0] + rr) * g + (origin_2[1] + cols_2)

    codes_1, codes_2 = field_1, field_2
    codes_1[cells_1] = subject_codes
    codes_2[cells_2] = subject_codes

    eps_1 = _rng(cfg.appearance_seed, _EPS1).standard_normal((g * g, cfg.base_dim))
    eps_2 = _rng(cfg.appearance_seed, _EPS2).standard_normal((g * g, cfg.base_dim))
    base_1 = codes_1 + cfg.noise_scale * NOISE_GAIN * eps_1
    base_2 = codes_2 + cfg.noise_scale * NOISE_GAIN * eps_2

    mixing: dict[int, np.ndarray] = {}
    gains: dict[int, np.ndarray] = {}
    blocks = (cfg.sem_dim, cfg.pos_dim, cfg.app_dim)
    for layer_id in cfg.layer_ids:
        channels = cfg.channels_for(layer_id)
        draw = _rng(cfg.mixing_seed, _MIX, layer_id).standard_normal((channels, cfg.base_dim))
        if layer_id == cfg.distinctive_layer:
            # Orthonormal rows: this layer is a pure rotation of code space,
            # so cosines between cells survive it exactly.
            q_mat, r_mat = np.linalg.qr(draw)
            mixing[layer_id] = (q_mat * np.sign(np.diag(r_mat))).T
        else:
            mixing[layer_id] = draw.T / np.sqrt(cfg.base_dim)
        # Layers emphasize the code blocks differently (that is what makes
        # the branches prefer different layers), but the range is kept
        # moderate: an extreme semantic gain would flatten similarity rows
        # everywhere and starve the pipeline of unambiguous anchors.
        block_gain = _rng(cfg.mixing_seed, _GAIN, layer_id).uniform(0.6, 1.4, size=3)
        gains[layer_id] = np.repeat(block_gain, blocks)

    def build_stack(base: np.ndarray, image_id: str) -> FeatureStack:
        layers = []
        for layer_id in cfg.layer_ids:
            rows = (base * gains[layer_id]) @ mixing[layer_id]
            layers.append(
                LayerBlock(
                    layer_id,
                    rows.astype(np.float32).reshape(g, g, cfg.channels_for(layer_id)),
                )
            )
        return FeatureStack(image_id=image_id, layers=layers)

    mask_1 = np.zeros((g, g), dtype=np.uint8)
    mask_1.reshape(-1)[cells_1] = 1
    mask_2 = np.zeros((g, g), dtype=np.uint8)
    mask_2.reshape(-1)[cells_2] = 1

    labels_1 = np.full((g, g), -1, dtype=np.int32)
    labels_1.reshape(-1)[cells_1] = part_of
    labels_2 = np.full((g, g), -1, dtype=np.int32)
    labels_2.reshape(-1)[cells_2] = part_of

    gt_corr = CorrespondenceSet(
        points_a=np.stack([cells_1 % g, cells_1 // g], axis=1),
        points_b=np.stack([cells_2 % g, cells_2 // g], axis=1),
        scores=np.ones(n, dtype=np.float32),
        skewness=np.zeros(n, dtype=np.float32),
        grid_a=(g, g),
        grid_b=(g, g),
    )

    return SynthWorld(
        cfg=cfg,
        stack_1=build_stack(base_1, f"{image_prefix}_1"),
        stack_2=build_stack(base_2, f"{image_prefix}_2"),
        subject_mask_1=Mask(mask_1),
        subject_mask_2=Mask(mask_2),
        gt_corr=gt_corr,
        labels_1=labels_1,
        labels_2=labels_2,
        part_of=part_of,
        cells_1=cells_1,
        cells_2=cells_2,
        part_seeds_rc=seeds_rc,
        codes=(codes_1, codes_2),
        eps=(eps_1, eps_2),
        mixing=mixing,
        gains=gains,
    )


# ---------------------------------------------------------------------------
# synthetic ports
# ---------------------------------------------------------------------------

class SyntheticSegmenter:
    """Point-prompted candidates: the containing part, the part grown by its
    nearest neighbor part, and the whole subject (smallest-first is not
    guaranteed; selection happens downstream)."""

    def __init__(self, world: SynthWorld):
        self._world = world

    def candidates(self, view: int, point: tuple[int, int]) -> list[RegionCandidate]:
        x, y = point
        labels = self._world.labels(view)
        if not (0 <= y < labels.shape[0] and 0 <= x < labels.shape[1]):
            raise PortError(f"segmentation point {point} outside grid")
        part = int(labels[y, x])
        if part < 0:
            raise PortError(f"segmentation point {point} on background")
        out = [RegionCandidate.from_mask(self._world.part_region([part], view))]
        if self._world.cfg.part_count > 1:
            seeds = self._world.part_seeds_rc.astype(np.float64)
            dist = np.linalg.norm(seeds - seeds[part], axis=1)
            dist[part] = np.inf
            neighbor = int(np.argmin(dist))
            out.append(RegionCandidate.from_mask(self._world.part_region([part, neighbor], view)))
        out.append(RegionCandidate.from_mask(self._world.subject_mask(view)))
        return out


class SyntheticInpainter:
    """Replaces appearance codes inside the region; `blend` < 1 interpolates
    toward the replacement so weak edits can be produced on purpose."""

    def __init__(self, world: SynthWorld, blend: float = 1.0):
        if not 0.0 <= blend <= 1.0:
            raise PortError(f"blend outside [0, 1]: {blend}")
        self._world = world
        self.blend = blend

    def inpaint(
        self,
        view: int,
        region: Mask,
        crop_bbox: tuple[int, int, int, int],
        prompt: str,
        rng: np.random.Generator,
    ) -> FeatureStack:
        del crop_bbox, prompt  # the synthetic edit needs no pixel context
        flat = np.flatnonzero(region.bits.ravel())
        return self._world.inpaint_cells(view, flat, rng, self.blend)


class SyntheticPerceptual:
    """Mean per-position distance between unit-normalized features of one
    layer, measured inside the region."""

    def __init__(self, world: SynthWorld, layer_id: int = 6):
        self._world = world
        self.layer_id = layer_id

    def distance(self, before: FeatureStack, after: FeatureStack, region: Mask) -> float:
        fb = flatten_layer(before, self.layer_id, normalize=False).values
        fa = flatten_layer(after, self.layer_id, normalize=False).values
        cells = np.flatnonzero(region.bits.ravel())
        if cells.size == 0:
            raise PortError("perceptual distance over an empty region")
        nb, _ = normalize_rows(fb[cells])
        na, _ = normalize_rows(fa[cells])
        return float(np.linalg.norm(nb - na, axis=1).mean())


# ---------------------------------------------------------------------------
# batch generation of consistent pairs
# ---------------------------------------------------------------------------

@dataclass
class GeneratorConfig:
    """Per-world variation around a shared template.

    The template's mixing seed, layer set, and code dimensions play the role
    of a fixed backbone, so they are shared by every generated world; layout,
    semantics, and appearance are redrawn per world.
    """

    template: SynthWorldConfig = None  # type: ignore[assignment]
    part_count_min: int = 4
    part_count_max: int = 9
    subject_frac_min: float = 0.45
    subject_frac_max: float = 0.65
    flat_fraction: float = 0.0  # fraction of worlds with no textured parts

    def __post_init__(self) -> None:
        if self.template is None:
            self.template = SynthWorldConfig()

    def validate(self) -> None:
        if not 1 <= self.part_count_min <= self.part_count_max:
            raise IntegrityError(
                f"bad part count range [{self.part_count_min}, {self.part_count_max}]"
            )
        if not 0.0 < self.subject_frac_min <= self.subject_frac_max <= 1.0:
            raise IntegrityError(
                f"bad subject_frac range [{self.subject_frac_min}, {self.subject_frac_max}]"
            )
        if not 0.0 <= self.flat_fraction <= 1.0:
            raise IntegrityError(f"flat_fraction outside [0, 1]: {self.flat_fraction}")
        self.template.validate()

    def to_json(self) -> dict:
        return {
            "world": self.template.to_json(),
            "part_count_min": self.part_count_min,
            "part_count_max": self.part_count_max,
            "subject_frac_min": self.subject_frac_min,
            "subject_frac_max": self.subject_frac_max,
            "flat_fraction": self.flat_fraction,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GeneratorConfig":
        kwargs = dict(obj)
        template = SynthWorldConfig.from_json(kwargs.pop("world", {}))
        try:
            cfg = cls(template=template, **kwargs)
        except TypeError as exc:
            raise IntegrityError(f"bad generator config: {exc}") from exc
        cfg.validate()
        return cfg


def world_config_for_index(gen: GeneratorConfig, seed: int, index: int) -> SynthWorldConfig:
    """Deterministic per-world recipe: layout, semantics, and appearance are
    drawn from a stream private to (seed, index)."""
    rng = np.random.default_rng([seed, index])
    draws = rng.integers(0, 2**31, size=3)
    cfg = SynthWorldConfig(**{**gen.template.to_json(), **{
        "part_count": int(rng.integers(gen.part_count_min, gen.part_count_max + 1)),
        "subject_frac": float(rng.uniform(gen.subject_frac_min, gen.subject_frac_max)),
        "layout_seed": int(draws[0]),
        "semantic_seed": int(draws[1]),
        "appearance_seed": int(draws[2]),
    }})
    if gen.flat_fraction > 0.0 and rng.random() < gen.flat_fraction:
        # Untextured cells within a part share one code, so matches are only
        # ambiguous (low row skewness) when the matching plateau spans a large
        # share of the candidates; few large parts guarantee that.
        cfg.textured_parts = ()
        cfg.part_count = min(cfg.part_count, 2)
    return cfg


def generate_pairs(
    out_dir: str | Path, seed: int, count: int, gen: GeneratorConfig | None = None
) -> list[PairRecord]:
    """Write ``count`` consistent pairs with their artifacts and manifest.

    Every pair record embeds its full world recipe, so downstream stages can
    rebuild the world (and its ports) without any hidden state.
    """
    gen = gen or GeneratorConfig()
    gen.validate()
    if count < 1:
        raise IntegrityError(f"count must be positive, got {count}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    records = []
    with open(out_dir / "pairs.jsonl", "wb") as sink:
        for index in range(count):
            cfg = world_config_for_index(gen, seed, index)
            pid = f"pair{index:05d}"
            world = synth_world(cfg, image_prefix=pid)
            write_stack(world.stack_1, out_dir / f"{pid}_1.mtgf")
            write_stack(world.stack_2, out_dir / f"{pid}_2.mtgf")
            write_mask(world.subject_mask_1, out_dir / f"{pid}_o1.mtgm")
            write_mask(world.subject_mask_2, out_dir / f"{pid}_o2.mtgm")
            write_corr(world.gt_corr, out_dir / f"{pid}_gt.mtgc")
            record = PairRecord(
                pair_id=pid,
                image_id_1=world.stack_1.image_id,
                image_id_2=world.stack_2.image_id,
                stack_path_1=f"{pid}_1.mtgf",
                stack_path_2=f"{pid}_2.mtgf",
                subject_mask_path_1=f"{pid}_o1.mtgm",
                subject_mask_path_2=f"{pid}_o2.mtgm",
                gt_corr_path=f"{pid}_gt.mtgc",
                subject_prompt=f"synthetic subject {index:05d}",
                target_prompt="a reworked variant of the region",
                world=cfg.to_json(),
            )
            append_pair(sink, record)
            records.append(record)
    return records

