"""The visual-semantic match score and its spatial inconsistency map.

For every reference position whose best semantic match is confident (above
T_s), check whether its best visual match is also confident (above T_v).
The score is the confident-visual fraction; positions failing the visual
check light up in the map, localizing what changed between the images.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .correspond import best_match_scores, full_mask, similarity
from .disentangle import AggregatorParams, aggregate
from .errors import IntegrityError
from .store import FeatureStack, Mask, write_float_grid, write_pgm

DIRECTIONS = ("1to2", "2to1", "symmetric")
NO_SEMANTIC_OVERLAP = "no_semantic_overlap"


@dataclass
class VsmConfig:
    t_s: float = 0.7
    t_v: float = 0.6
    direction: str = "1to2"
    restrict_to_subject: bool = True

    def validate(self) -> None:
        for name, value in (("t_s", self.t_s), ("t_v", self.t_v)):
            if not -1.0 < value < 1.0:
                raise IntegrityError(f"{name} must lie in (-1, 1), got {value}")
        if self.direction not in DIRECTIONS:
            raise IntegrityError(
                f"direction must be one of {DIRECTIONS}, got {self.direction!r}"
            )

    def to_json(self) -> dict:
        return {
            "t_s": self.t_s,
            "t_v": self.t_v,
            "direction": self.direction,
            "restrict_to_subject": self.restrict_to_subject,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "VsmConfig":
        try:
            cfg = cls(**obj)
        except TypeError as exc:
            raise IntegrityError(f"bad metric config: {exc}") from exc
        cfg.validate()
        return cfg


@dataclass
class VsmReport:
    """Score, the evidence behind it, and the localization map.

    ``vsm`` is None exactly when no reference position cleared the semantic
    threshold — a distinct "no semantic overlap" outcome, not a zero score.
    ``evaluated`` holds the flat reference positions that were scored;
    ``j_s`` the subset with confident semantic matches. The map lives on the
    reference grid and is nonzero only at ``j_s`` positions.
    """

    vsm: float | None
    reason: str | None
    grid: tuple[int, int]
    evaluated: np.ndarray
    semantic_scores: np.ndarray
    visual_scores: np.ndarray
    j_s: np.ndarray
    inconsistency_map: np.ndarray
    config: VsmConfig
    direction_scores: dict[str, float | None] = field(default_factory=dict)

    @property
    def defined(self) -> bool:
        return self.vsm is not None

    def to_json(self) -> dict:
        visual_hits = 0
        if self.j_s.size:
            sel = np.isin(self.evaluated, self.j_s)
            visual_hits = int((self.visual_scores[sel] > self.config.t_v).sum())
        return {
            "vsm": self.vsm,
            "reason": self.reason,
            "grid": list(self.grid),
            "n_evaluated": int(self.evaluated.size),
            "n_semantic_matches": int(self.j_s.size),
            "n_visual_matches": visual_hits,
            "direction_scores": self.direction_scores,
            "config": self.config.to_json(),
        }


def _one_direction(
    ref_features,
    other_features,
    ref_visual,
    other_visual,
    ref_mask: Mask,
    other_mask: Mask,
    cfg: VsmConfig,
) -> tuple[float | None, np.ndarray, np.ndarray, np.ndarray, np.ndarray, tuple[int, int]]:
    d_s = similarity(ref_features, other_features)
    d_v = similarity(ref_visual, other_visual)
    sem_best = best_match_scores(d_s, ref_mask, other_mask)
    vis_best = best_match_scores(d_v, ref_mask, other_mask)
    evaluated = np.flatnonzero(ref_mask.bits.ravel())
    confident = sem_best > cfg.t_s
    j_s = evaluated[confident]
    if j_s.size == 0:
        score = None
    else:
        score = float((vis_best[confident] > cfg.t_v).mean())
    return score, evaluated, sem_best, vis_best, j_s, (ref_mask.height, ref_mask.width)


def vsm(
    stack_1: FeatureStack,
    stack_2: FeatureStack,
    params: AggregatorParams,
    mask_1: Mask | None = None,
    mask_2: Mask | None = None,
    cfg: VsmConfig | None = None,
) -> VsmReport:
    """Score how much of the semantically shared content is also visually
    unchanged between the two images.

    Reference positions (and, on the other side, candidate positions) come
    from the masks when supplied and restriction is on, otherwise the full
    grid. In symmetric mode the two directions' scores are averaged and the
    report's map/evidence come from the 1-to-2 direction; the averaged score
    is undefined when either direction is.
    """
    cfg = cfg or VsmConfig()
    cfg.validate()

    s_1 = aggregate(stack_1, params, "semantic")
    s_2 = aggregate(stack_2, params, "semantic")
    v_1 = aggregate(stack_1, params, "visual")
    v_2 = aggregate(stack_2, params, "visual")
    grid = params.arch.grid

    restrict = cfg.restrict_to_subject and mask_1 is not None and mask_2 is not None
    if restrict:
        m_1 = mask_1 if (mask_1.height, mask_1.width) == grid else mask_1.resample(*grid)
        m_2 = mask_2 if (mask_2.height, mask_2.width) == grid else mask_2.resample(*grid)
        if m_1.area == 0 or m_2.area == 0:
            raise IntegrityError("subject mask empty after resampling to the common grid")
    else:
        m_1 = full_mask(grid)
        m_2 = full_mask(grid)

    forward = (s_1, s_2, v_1, v_2, m_1, m_2)
    reverse = (s_2, s_1, v_2, v_1, m_2, m_1)
    direction_scores: dict[str, float | None] = {}

    if cfg.direction in ("1to2", "symmetric"):
        score_f, evaluated, sem, vis, j_s, ref_grid = _one_direction(*forward, cfg=cfg)
        direction_scores["1to2"] = score_f
    if cfg.direction in ("2to1", "symmetric"):
        score_r, r_eval, r_sem, r_vis, r_js, r_grid = _one_direction(*reverse, cfg=cfg)
        direction_scores["2to1"] = score_r
        if cfg.direction == "2to1":
            evaluated, sem, vis, j_s, ref_grid = r_eval, r_sem, r_vis, r_js, r_grid

    if cfg.direction == "1to2":
        final = direction_scores["1to2"]
    elif cfg.direction == "2to1":
        final = direction_scores["2to1"]
    else:
        both = (direction_scores["1to2"], direction_scores["2to1"])
        final = None if None in both else float(np.mean(both))

    flat_map = np.zeros(ref_grid[0] * ref_grid[1])
    if j_s.size:
        confident = np.isin(evaluated, j_s)
        flat_map[j_s] = np.maximum(0.0, cfg.t_v - vis[confident]) / (cfg.t_v + 1.0)
    return VsmReport(
        vsm=final,
        reason=None if final is not None else NO_SEMANTIC_OVERLAP,
        grid=ref_grid,
        evaluated=evaluated,
        semantic_scores=sem,
        visual_scores=vis,
        j_s=j_s,
        inconsistency_map=flat_map.reshape(ref_grid),
        config=cfg,
        direction_scores=direction_scores,
    )


def inconsistency_map(
    stack_1: FeatureStack,
    stack_2: FeatureStack,
    params: AggregatorParams,
    mask_1: Mask | None = None,
    mask_2: Mask | None = None,
    cfg: VsmConfig | None = None,
) -> np.ndarray:
    """Just the localization grid of :func:`vsm`: how far below the visual
    threshold each semantically matched position fell, scaled to [0, 1]."""
    return vsm(stack_1, stack_2, params, mask_1, mask_2, cfg).inconsistency_map


def write_report(report: VsmReport, out_dir: str | Path, prefix: str = "vsm") -> list[Path]:
    """Emit the report JSON plus the map as raw float32 grid and 8-bit PGM."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [
        out_dir / f"{prefix}_report.json",
        out_dir / f"{prefix}_map.f32",
        out_dir / f"{prefix}_map.pgm",
    ]
    with open(paths[0], "w") as handle:
        json.dump(report.to_json(), handle, indent=2, sort_keys=True)
        handle.write("\n")
    write_float_grid(report.inconsistency_map, paths[1])
    write_pgm(report.inconsistency_map, paths[2])
    return paths
