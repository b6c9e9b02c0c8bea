"""Training loop: seeded shuffling, AdamW with step decay, per-epoch
checkpoints, and a loss-history CSV."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .disentangle import (
    ArchConfig,
    AggregatorParams,
    LossConfig,
    SampleTensors,
    init_params,
    loss_and_grads,
    map_point_to_grid,
    partition_points,
    stack_to_features,
    write_params,
)
from .errors import IntegrityError
from .optim import AdamWConfig, AdamWState, adamw_step, lr_for_epoch
from .store import SampleRecord, load_manifest, read_corr, read_mask, read_stack, resolve_path

HISTORY_COLUMNS = ("epoch", "l_s", "l_v_in", "l_v_out", "l_total", "lr")


@dataclass
class TrainConfig:
    """Everything the trainer needs beyond the data itself."""

    epochs: int = 30
    batch_size: int = 4
    lr: float = 1e-3
    lr_decay_every: int = 10
    lr_decay_factor: float = 0.1
    alpha: float = 10.0
    tau: float = 0.07
    tau_trainable: bool = False
    use_consistent_pair_term: bool = True
    q: int = 384
    grid: tuple[int, int] | None = None  # None: adopt the stacks' grid
    layer_ids: tuple[int, ...] | None = None  # None: every layer in the stack
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    def __post_init__(self) -> None:
        if self.grid is not None:
            self.grid = (int(self.grid[0]), int(self.grid[1]))
        if self.layer_ids is not None:
            self.layer_ids = tuple(int(x) for x in self.layer_ids)

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise IntegrityError(
                f"epochs and batch size must be positive: {self.epochs}, {self.batch_size}"
            )
        if not self.alpha > 0:
            raise IntegrityError(f"alpha must be positive, got {self.alpha}")
        if self.epochs >= self.lr_decay_every and self.epochs % self.lr_decay_every != 0:
            raise IntegrityError(
                f"decay interval {self.lr_decay_every} must divide the "
                f"{self.epochs}-epoch schedule"
            )
        self.adamw().validate()

    def adamw(self) -> AdamWConfig:
        return AdamWConfig(
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            weight_decay=self.weight_decay,
        )

    def loss(self) -> LossConfig:
        return LossConfig(
            alpha=self.alpha, use_consistent_pair_term=self.use_consistent_pair_term
        )

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        try:
            cfg = cls(**obj)
        except TypeError as exc:
            raise IntegrityError(f"bad train config: {exc}") from exc
        cfg.validate()
        return cfg


# ---------------------------------------------------------------------------
# data loading
# ---------------------------------------------------------------------------

def _flat_indices(points: np.ndarray, src: tuple[int, int], dst: tuple[int, int]) -> np.ndarray:
    """Map (x, y) points from the src grid to flat dst-grid indices."""
    if (points[:, 0] >= src[1]).any() or (points[:, 1] >= src[0]).any():
        raise IntegrityError("correspondence points leave their grid")
    if src == dst:
        return (points[:, 1].astype(np.int64) * dst[1]) + points[:, 0]
    mapped = np.array(
        [map_point_to_grid((int(x), int(y)), src, dst) for x, y in points], dtype=np.int64
    )
    return mapped[:, 1] * dst[1] + mapped[:, 0]


def prepare_sample(
    record: SampleRecord,
    manifest_path: str | Path,
    arch: ArchConfig,
    dtype=np.float32,
) -> SampleTensors:
    """Materialize one record on the common grid; features stay compact in
    ``dtype`` and are upcast at use."""

    def _stack(path: str, image_id: str):
        stack = read_stack(resolve_path(manifest_path, path), image_id)
        feats = stack_to_features(stack, arch)
        return {layer: values.astype(dtype) for layer, values in feats.items()}

    corr = read_corr(resolve_path(manifest_path, record.corr_path))
    region_1 = read_mask(resolve_path(manifest_path, record.region_mask_path_1))
    region_2 = read_mask(resolve_path(manifest_path, record.region_mask_path_2))
    partition = partition_points(corr, region_1, region_2)
    return SampleTensors(
        sample_id=record.sample_id,
        feats_1=_stack(record.stack_path_1, record.image_id_1),
        feats_2=_stack(record.stack_path_2, record.image_id_2),
        feats_1p=_stack(record.inconsistent_stack_path_1, record.image_id_1 + "p"),
        feats_2p=_stack(record.inconsistent_stack_path_2, record.image_id_2 + "p"),
        flat_1=_flat_indices(corr.points_a, corr.grid_a, arch.grid),
        flat_2=_flat_indices(corr.points_b, corr.grid_b, arch.grid),
        partition=partition,
    )


def arch_from_manifest(
    records: list[SampleRecord], manifest_path: str | Path, cfg: TrainConfig
) -> ArchConfig:
    """Derive the architecture from the first sample's consistent stack,
    honoring the explicit overrides in the config."""
    if not records:
        raise IntegrityError("empty training manifest")
    stack = read_stack(resolve_path(manifest_path, records[0].stack_path_1))
    arch = ArchConfig.from_stack(
        stack, q=cfg.q, grid=cfg.grid, tau=cfg.tau, tau_trainable=cfg.tau_trainable
    )
    if cfg.layer_ids is not None:
        missing = sorted(set(cfg.layer_ids) - set(arch.layer_channels))
        if missing:
            raise IntegrityError(f"configured layers {missing} absent from the stacks")
        arch.layer_channels = {k: arch.layer_channels[k] for k in cfg.layer_ids}
    arch.validate()
    return arch


def load_dataset(
    records: list[SampleRecord], manifest_path: str | Path, arch: ArchConfig
) -> list[SampleTensors]:
    return [prepare_sample(record, manifest_path, arch) for record in records]


# ---------------------------------------------------------------------------
# the loop
# ---------------------------------------------------------------------------

def write_history(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(HISTORY_COLUMNS)
        for row in rows:
            writer.writerow([repr(row[col]) if isinstance(row[col], float) else row[col]
                             for col in HISTORY_COLUMNS])


def train(
    manifest_path: str | Path,
    out_dir: str | Path,
    cfg: TrainConfig,
    seed: int,
) -> tuple[AggregatorParams, list[dict]]:
    """Train on every sample of the manifest; checkpoints land in
    ``out_dir`` after each epoch (so a numeric abort always leaves the last
    completed epoch on disk) along with ``history.csv``."""
    cfg.validate()
    manifest_path = Path(manifest_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    records = load_manifest(manifest_path)
    arch = arch_from_manifest(records, manifest_path, cfg)
    dataset = load_dataset(records, manifest_path, arch)
    params = init_params(arch, seed=seed)
    lcfg = cfg.loss()
    adam_cfg = cfg.adamw()
    state = AdamWState()
    trainable = params.trainable_keys()
    n = len(dataset)

    history: list[dict] = []
    for epoch in range(cfg.epochs):
        lr = lr_for_epoch(cfg.lr, epoch, cfg.lr_decay_every, cfg.lr_decay_factor)
        order = np.random.default_rng([seed, epoch]).permutation(n)
        sums = {"l_s": 0.0, "l_v_in": 0.0, "l_v_out": 0.0, "l_total": 0.0}
        for start in range(0, n, cfg.batch_size):
            chunk = order[start : start + cfg.batch_size]
            breakdown, grads = loss_and_grads(params, [dataset[i] for i in chunk], lcfg)
            adamw_step(params.tensors, grads, state, adam_cfg, lr=lr, keys=trainable)
            for key in sums:
                sums[key] += getattr(breakdown, key) * chunk.size
        row = {key: value / n for key, value in sums.items()}
        row.update(epoch=epoch, lr=lr)
        history.append(row)
        write_params(
            params,
            out_dir / f"checkpoint_epoch{epoch:03d}.mtgp",
            metadata={"epoch": epoch, "seed": seed, "lr": lr, "samples": n},
        )
        write_history(out_dir / "history.csv", history)

    write_params(
        params,
        out_dir / "checkpoint_final.mtgp",
        metadata={"epoch": cfg.epochs - 1, "seed": seed, "final": True, "samples": n},
    )
    return params, history
