"""Extraction spec: defaults, normalization, rejection of bad requests."""

from pathlib import Path

import pytest

from extractor_adapter import AdapterError, ExtractionSpec


def test_defaults_describe_the_model_backed_path():
    spec = ExtractionSpec("img.png")
    assert spec.backbone == "sd21"
    assert spec.layers == (5, 6, 8)
    assert spec.grid == 48
    assert spec.timestep == 0
    assert spec.prompt == ""


def test_layers_are_sorted_and_deduplicated():
    spec = ExtractionSpec("img.png", layers=(8, 5, 6, 5))
    assert spec.layers == (5, 6, 8)


def test_image_id_is_the_stem():
    assert ExtractionSpec(Path("/data/shots/cat_01.png")).image_id() == "cat_01"


@pytest.mark.parametrize(
    "kwargs",
    [
        {"layers": ()},
        {"grid": 1},
        {"grid": 0},
        {"timestep": -1},
    ],
)
def test_invalid_requests_are_rejected(kwargs):
    with pytest.raises(AdapterError):
        ExtractionSpec("img.png", **kwargs)
