"""Shared fixtures: a fast 12x12 synthetic corpus reused across test modules.

The small template keeps every invariant of the full-size worlds (wide
matching layer with inner-product-preserving mixing, three code blocks,
warped second view) while running orders of magnitude faster.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from vsmatch.datagen import PipelineStats, run_pipeline
from vsmatch.store import SampleRecord, load_manifest, load_pairs
from vsmatch.synth import generate_pairs

from worldlets import small_generator


@pytest.fixture(scope="session")
def tiny_pairs_dir(tmp_path_factory) -> Path:
    """Twelve consistent pairs from the small generator, seed 99."""
    out = tmp_path_factory.mktemp("pairs")
    generate_pairs(out, seed=99, count=12, gen=small_generator())
    return out


@pytest.fixture(scope="session")
def tiny_pairs(tiny_pairs_dir):
    return load_pairs(tiny_pairs_dir / "pairs.jsonl")


@pytest.fixture(scope="session")
def tiny_data(tiny_pairs_dir, tmp_path_factory) -> tuple[Path, PipelineStats]:
    """The inconsistency pipeline run over the tiny pair corpus."""
    out = tmp_path_factory.mktemp("data")
    stats = run_pipeline(tiny_pairs_dir / "pairs.jsonl", out, seed=99)
    return out, stats


@pytest.fixture(scope="session")
def tiny_manifest(tiny_data) -> Path:
    out, stats = tiny_data
    assert stats.accepted >= 8, "tiny corpus unexpectedly starved"
    return out / "samples.jsonl"


@pytest.fixture(scope="session")
def tiny_records(tiny_manifest) -> list[SampleRecord]:
    return load_manifest(tiny_manifest)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(20260822)
