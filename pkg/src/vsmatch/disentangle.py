"""Two-branch feature aggregation and its contrastive training objective.

Each branch (semantic, visual) owns one pointwise residual bottleneck block
per decoder layer plus a trainable scalar weight per layer; block outputs
are summed over layers and L2-normalized per position. Training pulls
semantic features of corresponding points together everywhere, pushes
visual features apart where a region was rewritten, and pulls them together
where it was not — all with exact reverse-mode gradients in plain numpy,
verified against finite differences.

Gradient conventions: parameters live in a flat ``{key: array}`` dict with
keys ``"{branch}/{layer}/{name}"`` plus ``"tau"``; gradients use the same
keys, so the optimizer never needs to know the architecture.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Mapping

import numpy as np

from .correspond import FeatureMatrix, NORM_EPS
from .errors import FormatError, IntegrityError, NonFiniteError, TruncationError
from .store import CorrespondenceSet, FeatureStack, Mask

MAGIC_PARAMS = b"MTGP"
PARAMS_VERSION = 1
BRANCHES = ("semantic", "visual")
_BLOCK_TENSORS = ("w_in", "b_in", "w_h", "b_h", "w_out", "b_out")
_U32 = struct.Struct("<I")
_F64 = struct.Struct("<d")


# ---------------------------------------------------------------------------
# configuration and parameters
# ---------------------------------------------------------------------------

@dataclass
class ArchConfig:
    """Shape of the aggregator: common grid, width q, and the layer set."""

    layer_channels: dict[int, int]
    q: int = 384
    grid: tuple[int, int] = (48, 48)
    tau: float = 0.07
    tau_trainable: bool = False

    def __post_init__(self) -> None:
        self.layer_channels = {int(k): int(v) for k, v in self.layer_channels.items()}
        self.grid = (int(self.grid[0]), int(self.grid[1]))

    def validate(self) -> None:
        if not self.layer_channels:
            raise IntegrityError("aggregator needs at least one layer")
        if any(c < 1 for c in self.layer_channels.values()):
            raise IntegrityError(f"bad channel counts: {self.layer_channels}")
        if self.q < 1:
            raise IntegrityError(f"q must be positive, got {self.q}")
        if min(self.grid) < 1:
            raise IntegrityError(f"degenerate grid {self.grid}")
        if not self.tau > 0:
            raise IntegrityError(f"temperature must be positive, got {self.tau}")

    @property
    def layer_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self.layer_channels))

    @property
    def positions(self) -> int:
        return self.grid[0] * self.grid[1]

    @classmethod
    def from_stack(
        cls,
        stack: FeatureStack,
        q: int = 384,
        grid: tuple[int, int] | None = None,
        tau: float = 0.07,
        tau_trainable: bool = False,
    ) -> "ArchConfig":
        """Adopt the stack's layer set; with uniform layer grids the common
        grid is that grid, otherwise the 48x48 default."""
        channels = {b.layer_id: b.channels for b in stack.layers}
        if grid is None:
            shapes = {(b.height, b.width) for b in stack.layers}
            grid = shapes.pop() if len(shapes) == 1 else (48, 48)
        return cls(layer_channels=channels, q=q, grid=grid, tau=tau, tau_trainable=tau_trainable)


@dataclass
class AggregatorParams:
    """Flat tensor store for both branches plus the shared temperature."""

    arch: ArchConfig
    tensors: dict[str, np.ndarray]

    @property
    def tau(self) -> float:
        return float(self.tensors["tau"])

    def block_keys(self, branch: str, layer_id: int) -> list[str]:
        return [f"{branch}/{layer_id}/{name}" for name in _BLOCK_TENSORS]

    def weight_key(self, branch: str, layer_id: int) -> str:
        return f"{branch}/{layer_id}/weight"

    def all_keys(self) -> list[str]:
        keys = []
        for branch in BRANCHES:
            for layer_id in self.arch.layer_ids:
                keys.extend(self.block_keys(branch, layer_id))
                keys.append(self.weight_key(branch, layer_id))
        keys.append("tau")
        return keys

    def trainable_keys(self) -> list[str]:
        keys = self.all_keys()
        if not self.arch.tau_trainable:
            keys.remove("tau")
        return keys

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {key: np.zeros_like(self.tensors[key]) for key in self.all_keys()}

    def copy(self) -> "AggregatorParams":
        return AggregatorParams(
            arch=self.arch, tensors={k: v.copy() for k, v in self.tensors.items()}
        )

    def validate(self) -> None:
        self.arch.validate()
        expected = set(self.all_keys())
        if set(self.tensors) != expected:
            raise IntegrityError(
                f"parameter keys mismatch: extra {sorted(set(self.tensors) - expected)}, "
                f"missing {sorted(expected - set(self.tensors))}"
            )
        for key, value in self.tensors.items():
            if not np.isfinite(value).all():
                raise NonFiniteError(f"non-finite parameter tensor {key}")
        if not self.tau > 0:
            raise IntegrityError(f"temperature must stay positive, got {self.tau}")


def init_params(arch: ArchConfig, seed: int = 0) -> AggregatorParams:
    """He-style input/hidden projections, zero-initialized output projection
    and biases, unit layer weights; each block starts as identity-plus-
    projection on its input term."""
    arch.validate()
    q = arch.q
    tensors: dict[str, np.ndarray] = {}
    for branch_index, branch in enumerate(BRANCHES):
        for layer_id in arch.layer_ids:
            c = arch.layer_channels[layer_id]
            rng = np.random.default_rng([seed, branch_index, layer_id])
            tensors[f"{branch}/{layer_id}/w_in"] = rng.standard_normal((q, c)) * np.sqrt(2.0 / c)
            tensors[f"{branch}/{layer_id}/b_in"] = np.zeros(q)
            tensors[f"{branch}/{layer_id}/w_h"] = rng.standard_normal((q, q)) * np.sqrt(2.0 / q)
            tensors[f"{branch}/{layer_id}/b_h"] = np.zeros(q)
            tensors[f"{branch}/{layer_id}/w_out"] = np.zeros((q, q))
            tensors[f"{branch}/{layer_id}/b_out"] = np.zeros(q)
            tensors[f"{branch}/{layer_id}/weight"] = np.array(1.0)
    tensors["tau"] = np.array(float(arch.tau))
    return AggregatorParams(arch=arch, tensors=tensors)


# ---------------------------------------------------------------------------
# resampling to the common grid
# ---------------------------------------------------------------------------

def resample_nearest(values: np.ndarray, grid: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor resample of an (h, w, c) block to (H, W, c)."""
    h, w = values.shape[:2]
    height, width = grid
    if (h, w) == (height, width):
        return values
    rows = np.minimum((np.arange(height) + 0.5) * h // height, h - 1).astype(np.int64)
    cols = np.minimum((np.arange(width) + 0.5) * w // width, w - 1).astype(np.int64)
    return values[np.ix_(rows, cols)]


def map_point_to_grid(
    point: tuple[int, int], src: tuple[int, int], dst: tuple[int, int]
) -> tuple[int, int]:
    """Map an (x, y) cell of the src grid to the dst cell whose center is
    nearest; identity when the grids match."""
    x, y = point
    sh, sw = src
    dh, dw = dst
    if not (0 <= x < sw and 0 <= y < sh):
        raise IntegrityError(f"point {point} outside {sh}x{sw} grid")
    if (sh, sw) == (dh, dw):
        return (int(x), int(y))
    return (min(int((x + 0.5) * dw / sw), dw - 1), min(int((y + 0.5) * dh / sh), dh - 1))


def stack_to_features(stack: FeatureStack, arch: ArchConfig) -> dict[int, np.ndarray]:
    """Per configured layer: resampled, position-major float64 rows."""
    present = {b.layer_id for b in stack.layers}
    missing = sorted(set(arch.layer_ids) - present)
    if missing:
        raise IntegrityError(f"stack {stack.image_id!r} lacks configured layers {missing}")
    out = {}
    for layer_id in arch.layer_ids:
        block = stack.layer(layer_id)
        values = resample_nearest(block.values, arch.grid)
        out[layer_id] = values.reshape(arch.positions, block.channels).astype(np.float64)
    return out


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

@dataclass
class _BranchCache:
    z1: dict[int, np.ndarray]
    z2: dict[int, np.ndarray]
    pre_norm: np.ndarray  # U before normalization
    out: np.ndarray  # S after normalization
    norms: np.ndarray
    zero_rows: np.ndarray


def _branch_forward(
    feats: Mapping[int, np.ndarray], params: AggregatorParams, branch: str
) -> _BranchCache:
    arch = params.arch
    t = params.tensors
    pre = np.zeros((arch.positions, arch.q))
    z1s: dict[int, np.ndarray] = {}
    z2s: dict[int, np.ndarray] = {}
    for layer_id in arch.layer_ids:
        f = feats[layer_id]
        z1 = f @ t[f"{branch}/{layer_id}/w_in"].T + t[f"{branch}/{layer_id}/b_in"]
        z2 = np.maximum(z1, 0.0) @ t[f"{branch}/{layer_id}/w_h"].T + t[f"{branch}/{layer_id}/b_h"]
        y = (
            np.maximum(z2, 0.0) @ t[f"{branch}/{layer_id}/w_out"].T
            + t[f"{branch}/{layer_id}/b_out"]
            + z1
        )
        pre += float(t[f"{branch}/{layer_id}/weight"]) * y
        z1s[layer_id] = z1
        z2s[layer_id] = z2
    if not np.isfinite(pre).all():
        raise NonFiniteError(f"non-finite aggregation output in branch {branch}")
    norms = np.linalg.norm(pre, axis=1)
    zero = norms <= NORM_EPS
    safe = np.where(zero, 1.0, norms)
    out = pre / safe[:, None]
    return _BranchCache(z1=z1s, z2=z2s, pre_norm=pre, out=out, norms=safe, zero_rows=zero)


def _branch_backward(
    d_out: np.ndarray,
    cache: _BranchCache,
    feats: Mapping[int, np.ndarray],
    params: AggregatorParams,
    branch: str,
    grads: dict[str, np.ndarray],
) -> None:
    t = params.tensors
    # through the per-row normalization: S = U / |U|
    s = cache.out
    row_dot = np.einsum("ij,ij->i", s, d_out)
    d_pre = (d_out - s * row_dot[:, None]) / cache.norms[:, None]
    d_pre[cache.zero_rows] = 0.0
    for layer_id in params.arch.layer_ids:
        z1, z2 = cache.z1[layer_id], cache.z2[layer_id]
        w_out = t[f"{branch}/{layer_id}/w_out"]
        a1 = np.maximum(z1, 0.0)
        a2 = np.maximum(z2, 0.0)
        y = a2 @ w_out.T + t[f"{branch}/{layer_id}/b_out"] + z1
        weight = float(t[f"{branch}/{layer_id}/weight"])
        grads[f"{branch}/{layer_id}/weight"] += np.einsum("ij,ij->", d_pre, y)
        dy = weight * d_pre
        # output projection (dz3 = dy since y = z3 + z1)
        grads[f"{branch}/{layer_id}/w_out"] += dy.T @ a2
        grads[f"{branch}/{layer_id}/b_out"] += dy.sum(axis=0)
        dz2 = (dy @ w_out) * (z2 > 0)
        grads[f"{branch}/{layer_id}/w_h"] += dz2.T @ a1
        grads[f"{branch}/{layer_id}/b_h"] += dz2.sum(axis=0)
        dz1 = (dz2 @ t[f"{branch}/{layer_id}/w_h"]) * (z1 > 0) + dy
        grads[f"{branch}/{layer_id}/w_in"] += dz1.T @ feats[layer_id]
        grads[f"{branch}/{layer_id}/b_in"] += dz1.sum(axis=0)


def aggregate(stack: FeatureStack, params: AggregatorParams, branch: str) -> FeatureMatrix:
    """Public forward pass: resample, run the branch, return normalized
    per-position features; all-zero rows are flagged, not errors."""
    if branch not in BRANCHES:
        raise IntegrityError(f"unknown branch {branch!r}; expected one of {BRANCHES}")
    cache = _branch_forward(stack_to_features(stack, params.arch), params, branch)
    return FeatureMatrix(
        cache.out, params.arch.grid, normalized=True, zero_rows=cache.zero_rows
    )


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

@dataclass
class LossConfig:
    alpha: float = 10.0
    use_consistent_pair_term: bool = True

    def validate(self) -> None:
        if not self.alpha >= 0:
            raise IntegrityError(f"alpha must be non-negative, got {self.alpha}")


@dataclass
class PointPartition:
    """Correspondence indices split by whether either endpoint was rewritten."""

    p_in: np.ndarray
    p_out: np.ndarray

    def validate(self, total: int) -> None:
        joined = np.concatenate([self.p_in, self.p_out])
        if joined.size != total or np.unique(joined).size != total:
            raise IntegrityError("partition must cover all correspondences exactly once")


@dataclass
class LossBreakdown:
    l_s: float
    l_v_in: float
    l_v_out: float
    l_total: float
    directions: dict[str, float] = field(default_factory=dict)
    empty_terms: tuple[str, ...] = ()


def partition_points(corr: CorrespondenceSet, region_1: Mask, region_2: Mask) -> PointPartition:
    """A correspondence is "in" when either of its endpoints lies in the
    rewritten region of its image."""
    in_1 = region_1.bits[corr.points_a[:, 1], corr.points_a[:, 0]].astype(bool)
    in_2 = region_2.bits[corr.points_b[:, 1], corr.points_b[:, 0]].astype(bool)
    inside = in_1 | in_2
    return PointPartition(
        p_in=np.flatnonzero(inside).astype(np.int64),
        p_out=np.flatnonzero(~inside).astype(np.int64),
    )


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _ce_rows(
    xq: np.ndarray, xt: np.ndarray, targets: np.ndarray, tau: float, sign: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """Cross-entropy of softmax(sign * xq @ xt.T / tau) rows against target
    indices; returns (loss, softmax, logits) for the backward pass."""
    logits = (sign / tau) * (xq @ xt.T)
    logp = _log_softmax(logits)
    rows = np.arange(targets.size)
    loss = float(-logp[rows, targets].mean())
    return loss, np.exp(logp), logits


def contrastive_ce(
    d: "np.ndarray | object",
    query_idx: np.ndarray,
    target_idx: np.ndarray,
    sign: float,
    tau: float,
) -> tuple[float, bool]:
    """Loss over precomputed similarity rows: softmax over the full candidate
    row of each query, cross-entropy against the matched column.

    An empty query set is defined as loss 0 with the degenerate flag set.
    """
    if not tau > 0:
        raise IntegrityError(f"temperature must be positive, got {tau}")
    if sign not in (1.0, -1.0, 1, -1):
        raise IntegrityError(f"sign must be +1 or -1, got {sign}")
    values = d.values if hasattr(d, "values") else np.asarray(d, dtype=np.float64)
    query_idx = np.asarray(query_idx, dtype=np.int64)
    target_idx = np.asarray(target_idx, dtype=np.int64)
    if query_idx.size != target_idx.size:
        raise IntegrityError(
            f"query/target lengths differ: {query_idx.size} vs {target_idx.size}"
        )
    if query_idx.size == 0:
        return 0.0, True
    logits = (float(sign) / tau) * values[query_idx]
    logp = _log_softmax(logits)
    return float(-logp[np.arange(target_idx.size), target_idx].mean()), False


@dataclass
class SampleTensors:
    """One training sample, fully materialized on the common grid."""

    sample_id: str
    feats_1: dict[int, np.ndarray]  # consistent pair
    feats_2: dict[int, np.ndarray]
    feats_1p: dict[int, np.ndarray]  # inconsistent pair
    feats_2p: dict[int, np.ndarray]
    flat_1: np.ndarray  # correspondence endpoints as flat common-grid indices
    flat_2: np.ndarray
    partition: PointPartition


def _term_spec(n_points: int, partition: PointPartition, lcfg: LossConfig):
    """(name, query side, candidate side, corr rows, sign, loss slot) for
    every directional CE term; names double as keys in
    LossBreakdown.directions."""
    all_idx = np.arange(n_points, dtype=np.int64)
    terms = [
        ("s_12", "S1", "S2", all_idx, 1.0, "l_s"),
        ("s_21", "S2", "S1", all_idx, 1.0, "l_s"),
        ("v_in_12", "V1", "V2", partition.p_in, -1.0, "l_v_in"),
        ("v_in_21", "V2", "V1", partition.p_in, -1.0, "l_v_in"),
        ("v_out_12", "V1", "V2", partition.p_out, 1.0, "l_v_out"),
        ("v_out_21", "V2", "V1", partition.p_out, 1.0, "l_v_out"),
    ]
    if lcfg.use_consistent_pair_term:
        terms.append(("v_c_12", "C1", "C2", partition.p_in, 1.0, "l_v_out"))
        terms.append(("v_c_21", "C2", "C1", partition.p_in, 1.0, "l_v_out"))
    return terms


def _assemble(slots: dict[str, float], alpha: float, directions, empty) -> LossBreakdown:
    total = slots["l_s"] + alpha * (slots["l_v_in"] + slots["l_v_out"])
    return LossBreakdown(
        l_s=slots["l_s"],
        l_v_in=slots["l_v_in"],
        l_v_out=slots["l_v_out"],
        l_total=total,
        directions=dict(directions),
        empty_terms=tuple(empty),
    )


def total_loss(
    s1: np.ndarray,
    s2: np.ndarray,
    v1: np.ndarray,
    v2: np.ndarray,
    flat_1: np.ndarray,
    flat_2: np.ndarray,
    partition: PointPartition,
    tau: float,
    lcfg: LossConfig,
    c1: np.ndarray | None = None,
    c2: np.ndarray | None = None,
) -> LossBreakdown:
    """Forward-only loss on already-aggregated matrices (rows = positions).

    ``l_s`` attracts semantic features across all correspondences, ``l_v_in``
    repels visual features where content changed, ``l_v_out`` attracts them
    where it did not; each term averages its two directions. The consistent
    pair (c1, c2) contributes the extra in-region positive term when enabled.
    """
    lcfg.validate()
    flat_1 = np.asarray(flat_1, dtype=np.int64)
    flat_2 = np.asarray(flat_2, dtype=np.int64)
    if flat_1.size != flat_2.size:
        raise IntegrityError(f"endpoint counts differ: {flat_1.size} vs {flat_2.size}")
    partition.validate(flat_1.size)
    mats = {"S1": s1, "S2": s2, "V1": v1, "V2": v2, "C1": c1, "C2": c2}
    flats = {"S1": flat_1, "S2": flat_2, "V1": flat_1, "V2": flat_2,
             "C1": flat_1, "C2": flat_2}
    slots = {"l_s": 0.0, "l_v_in": 0.0, "l_v_out": 0.0}
    directions: dict[str, float] = {}
    empty: list[str] = []
    for name, a, b, rows, sign, slot in _term_spec(flat_1.size, partition, lcfg):
        if mats[a] is None or mats[b] is None:
            raise IntegrityError(f"term {name} needs the consistent-pair matrices")
        if rows.size == 0:
            directions[name] = 0.0
            empty.append(name)
            continue
        xq = mats[a][flats[a][rows]]
        loss, _, _ = _ce_rows(xq, mats[b], flats[b][rows], tau, sign)
        directions[name] = loss
        slots[slot] += 0.5 * loss
    return _assemble(slots, lcfg.alpha, directions, empty)


LOSS_SLOTS = ("l_s", "l_v_in", "l_v_out")


def sample_loss_and_grads(
    params: AggregatorParams,
    st: SampleTensors,
    lcfg: LossConfig,
    grads: dict[str, np.ndarray],
    scale: float = 1.0,
    component: str | None = None,
) -> LossBreakdown:
    """Loss for one sample plus ``scale`` times its gradient, accumulated
    into ``grads`` in place.

    By default the gradient is of L_total. Passing ``component`` (one of
    ``LOSS_SLOTS``) restricts it to that term's own unweighted,
    direction-averaged loss — the quantity reported in the matching
    breakdown slot — which is what a per-term derivative check needs. The
    breakdown always reports every slot either way.
    """
    lcfg.validate()
    if component is not None and component not in LOSS_SLOTS:
        raise IntegrityError(f"unknown loss component {component!r}; expected one of {LOSS_SLOTS}")
    tau = params.tau

    def _as64(feats: Mapping[int, np.ndarray]) -> dict[int, np.ndarray]:
        return {l: v if v.dtype == np.float64 else v.astype(np.float64) for l, v in feats.items()}

    f1p, f2p = _as64(st.feats_1p), _as64(st.feats_2p)
    caches = {
        "S1": _branch_forward(f1p, params, "semantic"),
        "S2": _branch_forward(f2p, params, "semantic"),
        "V1": _branch_forward(f1p, params, "visual"),
        "V2": _branch_forward(f2p, params, "visual"),
    }
    feats = {"S1": f1p, "S2": f2p, "V1": f1p, "V2": f2p}
    branch_of = {"S1": "semantic", "S2": "semantic", "V1": "visual", "V2": "visual"}
    flats = {"S1": st.flat_1, "S2": st.flat_2, "V1": st.flat_1, "V2": st.flat_2}
    if lcfg.use_consistent_pair_term:
        f1, f2 = _as64(st.feats_1), _as64(st.feats_2)
        caches["C1"] = _branch_forward(f1, params, "visual")
        caches["C2"] = _branch_forward(f2, params, "visual")
        feats["C1"], feats["C2"] = f1, f2
        branch_of["C1"] = branch_of["C2"] = "visual"
        flats["C1"], flats["C2"] = st.flat_1, st.flat_2

    d_out = {key: np.zeros_like(cache.out) for key, cache in caches.items()}
    d_tau = 0.0
    slots = {"l_s": 0.0, "l_v_in": 0.0, "l_v_out": 0.0}
    if component is None:
        coeff = {"l_s": 1.0, "l_v_in": lcfg.alpha, "l_v_out": lcfg.alpha}
    else:
        coeff = {slot: (1.0 if slot == component else 0.0) for slot in LOSS_SLOTS}
    directions: dict[str, float] = {}
    empty: list[str] = []

    for name, a, b, rows, sign, slot in _term_spec(st.flat_1.size, st.partition, lcfg):
        if rows.size == 0:
            directions[name] = 0.0
            empty.append(name)
            continue
        qidx = flats[a][rows]
        targets = flats[b][rows]
        xq = caches[a].out[qidx]
        xt = caches[b].out
        loss, softmax, logits = _ce_rows(xq, xt, targets, tau, sign)
        directions[name] = loss
        slots[slot] += 0.5 * loss
        # upstream factor: direction average (0.5), slot coefficient, batch scale
        u = 0.5 * coeff[slot] * scale
        if u == 0.0:
            continue
        d_logits = softmax
        d_logits[np.arange(rows.size), targets] -= 1.0
        d_logits *= u / rows.size
        if params.arch.tau_trainable:
            d_tau += -np.einsum("ij,ij->", d_logits, logits) / tau
        d_sim = (float(sign) / tau) * d_logits
        np.add.at(d_out[a], qidx, d_sim @ xt)
        d_out[b] += d_sim.T @ xq

    for key, cache in caches.items():
        _branch_backward(d_out[key], cache, feats[key], params, branch_of[key], grads)
    if params.arch.tau_trainable:
        grads["tau"] += d_tau
    return _assemble(slots, lcfg.alpha, directions, empty)


def loss_and_grads(
    params: AggregatorParams,
    batch: Iterable[SampleTensors],
    lcfg: LossConfig,
    component: str | None = None,
) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    """Mean loss over the batch and exact gradients of the mean L_total —
    or, with ``component`` set, of that one term's mean unweighted loss."""
    batch = list(batch)
    if not batch:
        raise IntegrityError("empty batch")
    params.validate()
    grads = params.zero_grads()
    scale = 1.0 / len(batch)
    parts = [sample_loss_and_grads(params, st, lcfg, grads, scale, component) for st in batch]
    for key, grad in grads.items():
        if not np.isfinite(grad).all():
            raise NonFiniteError(f"non-finite gradient for {key}")
    directions: dict[str, float] = {}
    for part in parts:
        for key, value in part.directions.items():
            directions[key] = directions.get(key, 0.0) + value * scale
    empty = tuple(sorted({name for part in parts for name in part.empty_terms}))
    return (
        LossBreakdown(
            l_s=sum(p.l_s for p in parts) * scale,
            l_v_in=sum(p.l_v_in for p in parts) * scale,
            l_v_out=sum(p.l_v_out for p in parts) * scale,
            l_total=sum(p.l_total for p in parts) * scale,
            directions=directions,
            empty_terms=empty,
        ),
        grads,
    )


# ---------------------------------------------------------------------------
# MTGP checkpoint container
# ---------------------------------------------------------------------------

def write_params(
    params: AggregatorParams, dest: str | Path | BinaryIO, metadata: dict | None = None
) -> int:
    """Serialize to the MTGP container; byte-deterministic for equal inputs."""
    params.validate()
    meta = json.dumps(metadata or {}, sort_keys=True, separators=(",", ":")).encode()
    arch = params.arch

    def _emit(sink: BinaryIO) -> int:
        count = sink.write(MAGIC_PARAMS)
        count += sink.write(_U32.pack(PARAMS_VERSION))
        count += sink.write(_U32.pack(arch.grid[0]))
        count += sink.write(_U32.pack(arch.grid[1]))
        count += sink.write(_U32.pack(arch.q))
        count += sink.write(_U32.pack(len(arch.layer_ids)))
        for layer_id in arch.layer_ids:
            count += sink.write(_U32.pack(layer_id))
            count += sink.write(_U32.pack(arch.layer_channels[layer_id]))
        count += sink.write(struct.pack("<B", int(arch.tau_trainable)))
        for branch in BRANCHES:
            for layer_id in arch.layer_ids:
                for key in params.block_keys(branch, layer_id):
                    count += sink.write(
                        np.ascontiguousarray(params.tensors[key], dtype="<f8").tobytes()
                    )
                count += sink.write(
                    _F64.pack(float(params.tensors[params.weight_key(branch, layer_id)]))
                )
        count += sink.write(_F64.pack(params.tau))
        count += sink.write(_U32.pack(len(meta)))
        count += sink.write(meta)
        return count

    if hasattr(dest, "write"):
        return _emit(dest)
    with open(dest, "wb") as sink:
        return _emit(sink)


def _shape_of(name: str, q: int, c: int) -> tuple[int, ...]:
    return {
        "w_in": (q, c), "b_in": (q,), "w_h": (q, q), "b_h": (q,),
        "w_out": (q, q), "b_out": (q,),
    }[name]


def read_params(source: str | Path | BinaryIO) -> tuple[AggregatorParams, dict]:
    """Parse an MTGP container back into params and its metadata."""

    def _parse(handle: BinaryIO) -> tuple[AggregatorParams, dict]:
        def need(count: int, what: str) -> bytes:
            data = handle.read(count)
            if len(data) != count:
                raise TruncationError(f"checkpoint ends inside {what}")
            return data

        if need(4, "magic") != MAGIC_PARAMS:
            raise FormatError("not a parameter checkpoint (bad magic)")
        version = _U32.unpack(need(4, "version"))[0]
        if version != PARAMS_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        grid = (_U32.unpack(need(4, "grid height"))[0], _U32.unpack(need(4, "grid width"))[0])
        q = _U32.unpack(need(4, "q"))[0]
        if not 1 <= q <= 65536:
            raise FormatError(f"implausible width q = {q}")
        n_layers = _U32.unpack(need(4, "layer count"))[0]
        if n_layers == 0 or n_layers > 4096:
            raise FormatError(f"implausible layer count {n_layers}")
        channels: dict[int, int] = {}
        order: list[int] = []
        for _ in range(n_layers):
            layer_id = _U32.unpack(need(4, "layer id"))[0]
            if layer_id in channels:
                raise FormatError(f"duplicate layer id {layer_id} in checkpoint")
            c = _U32.unpack(need(4, "layer channels"))[0]
            if not 1 <= c <= 65536:
                raise FormatError(f"implausible channel count {c} for layer {layer_id}")
            channels[layer_id] = c
            order.append(layer_id)
        if order != sorted(order):
            raise FormatError("checkpoint layer ids must be ascending")
        tau_trainable = bool(need(1, "tau flag")[0])
        tensors: dict[str, np.ndarray] = {}
        for branch in BRANCHES:
            for layer_id in order:
                for name in _BLOCK_TENSORS:
                    shape = _shape_of(name, q, channels[layer_id])
                    size = 8 * int(np.prod(shape))
                    raw = need(size, f"{branch}/{layer_id}/{name}")
                    tensors[f"{branch}/{layer_id}/{name}"] = (
                        np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
                    )
                tensors[f"{branch}/{layer_id}/weight"] = np.array(
                    _F64.unpack(need(8, "layer weight"))[0]
                )
        tau = _F64.unpack(need(8, "tau"))[0]
        tensors["tau"] = np.array(tau)
        meta_len = _U32.unpack(need(4, "metadata length"))[0]
        try:
            metadata = json.loads(need(meta_len, "metadata").decode()) if meta_len else {}
        except json.JSONDecodeError as exc:
            raise FormatError(f"corrupt checkpoint metadata: {exc}") from exc
        if handle.read(1):
            raise FormatError("trailing bytes after checkpoint")
        arch = ArchConfig(
            layer_channels=channels, q=q, grid=grid, tau=tau, tau_trainable=tau_trainable
        )
        params = AggregatorParams(arch=arch, tensors=tensors)
        params.validate()
        return params, metadata

    if hasattr(source, "read"):
        return _parse(source)
    with open(source, "rb") as handle:
        return _parse(handle)


def layer_weight_table(params: AggregatorParams) -> list[tuple[str, int, float]]:
    """(branch, layer_id, weight) rows for the weight-inspection report."""
    return [
        (branch, layer_id, float(params.tensors[params.weight_key(branch, layer_id)]))
        for branch in BRANCHES
        for layer_id in params.arch.layer_ids
    ]
