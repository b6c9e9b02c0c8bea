"""Shared scale and corpus plumbing for the demo scripts.

Every demo runs on a 12x12 world template: it keeps all the invariants of
the full-size worlds (wide matching layer, three code blocks, warped second
view) while finishing in seconds. Later demos reuse the artifacts of earlier
ones from ``demos/out/`` and rebuild them when missing.
"""

from pathlib import Path

from vsmatch.datagen import run_pipeline
from vsmatch.disentangle import read_params
from vsmatch.synth import GeneratorConfig, SynthWorldConfig, generate_pairs
from vsmatch.train import TrainConfig, train

OUT = Path(__file__).resolve().parent / "out"

TRAIN_CFG = dict(epochs=15, batch_size=3, q=16, lr_decay_every=5)


def small_world(**overrides) -> SynthWorldConfig:
    base = dict(
        grid=12,
        part_count=4,
        subject_frac=0.6,
        sem_dim=4,
        pos_dim=14,
        app_dim=30,
        layer_ids=(5, 6, 8),
        layer_channels=(12, 48, 12),
        distinctive_layer=6,
        noise_scale=0.02,
    )
    base.update(overrides)
    return SynthWorldConfig(**base)


def small_generator() -> GeneratorConfig:
    return GeneratorConfig(
        template=small_world(),
        part_count_min=3,
        part_count_max=5,
        subject_frac_min=0.5,
        subject_frac_max=0.7,
    )


def ensure_pairs() -> Path:
    pairs = OUT / "pairs" / "pairs.jsonl"
    if not pairs.exists():
        print(f"[rebuilding] 12 consistent pairs -> {pairs.parent}")
        generate_pairs(pairs.parent, seed=99, count=12, gen=small_generator())
    return pairs


def ensure_samples() -> Path:
    samples = OUT / "data" / "samples.jsonl"
    if not samples.exists():
        print(f"[rebuilding] inconsistency pipeline -> {samples.parent}")
        run_pipeline(ensure_pairs(), samples.parent, seed=99)
    return samples


def ensure_checkpoint() -> Path:
    ckpt = OUT / "run" / "checkpoint_final.mtgp"
    if not ckpt.exists():
        print(f"[rebuilding] training {TRAIN_CFG['epochs']} epochs -> {ckpt.parent}")
        train(ensure_samples(), ckpt.parent, TrainConfig(**TRAIN_CFG), seed=5)
    read_params(ckpt)  # fail fast if an old run left a corrupt file
    return ckpt
