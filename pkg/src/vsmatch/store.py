"""On-disk containers and in-memory models shared by every stage.

Three little-endian binary containers plus a JSON-Lines manifest:

* ``MTGF`` feature stacks: magic, u32 version, u32 layer count, then per
  layer a (layer_id, channels, height, width) u32 header followed by
  ``c*h*w`` float32 values in (row, column, channel) order.
* ``MTGM`` masks: magic, u32 version, u32 height, u32 width, then the 0/1
  bits packed eight per byte row-major, low bit first.
* ``MTGC`` correspondence sets: magic, u32 version, u32 count, the two
  grid shapes, then x/y int32 columns for both sides, float32 scores and
  float32 skewness.

Serialized bytes are a pure function of the value; loaders re-validate
every invariant so a corrupt or hand-edited file cannot flow downstream.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterator

import numpy as np

from .errors import FormatError, IntegrityError, NonFiniteError, TruncationError

MAGIC_STACK = b"MTGF"
MAGIC_MASK = b"MTGM"
MAGIC_CORR = b"MTGC"
FORMAT_VERSION = 1

_U32 = struct.Struct("<I")


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass
class LayerBlock:
    """One layer of a feature stack: values shaped (height, width, channels)."""

    layer_id: int
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 3:
            raise FormatError(
                f"layer {self.layer_id}: expected (h, w, c) values, got shape {self.values.shape}"
            )

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


@dataclass
class FeatureStack:
    """Multi-layer dense feature maps for one image."""

    image_id: str
    layers: list[LayerBlock]

    def validate(self) -> None:
        ids = [b.layer_id for b in self.layers]
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise IntegrityError(f"stack {self.image_id!r}: layer ids not strictly increasing: {ids}")
        for block in self.layers:
            if min(block.height, block.width, block.channels) < 1:
                raise FormatError(
                    f"stack {self.image_id!r} layer {block.layer_id}: degenerate dims "
                    f"{block.values.shape}"
                )
            if not np.all(np.isfinite(block.values)):
                raise NonFiniteError(
                    f"stack {self.image_id!r} layer {block.layer_id}: non-finite values"
                )

    def layer_ids(self) -> list[int]:
        return [b.layer_id for b in self.layers]

    def layer(self, layer_id: int) -> LayerBlock:
        for block in self.layers:
            if block.layer_id == layer_id:
                return block
        raise KeyError(f"stack {self.image_id!r} has no layer {layer_id}; present: {self.layer_ids()}")


@dataclass
class Mask:
    """Binary grid; ``bits`` is (height, width) uint8 with values in {0, 1}."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        self.bits = np.ascontiguousarray(self.bits, dtype=np.uint8)
        if self.bits.ndim != 2:
            raise FormatError(f"mask: expected 2-d bits, got shape {self.bits.shape}")

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def area(self) -> int:
        return int(self.bits.sum())

    def validate(self) -> None:
        if self.height < 1 or self.width < 1:
            raise FormatError(f"mask: degenerate dims {self.bits.shape}")
        if not np.isin(self.bits, (0, 1)).all():
            raise FormatError("mask: bits outside {0, 1}")

    def bbox(self) -> tuple[int, int, int, int]:
        """Tight half-open bounding box (x0, y0, x1, y1) of the set bits."""
        ys, xs = np.nonzero(self.bits)
        if ys.size == 0:
            raise IntegrityError("bbox of an empty mask")
        return int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1

    def is_subset_of(self, other: "Mask") -> bool:
        return self.bits.shape == other.bits.shape and not np.any(self.bits & ~other.bits & 1)

    def resample(self, height: int, width: int) -> "Mask":
        """Resample to a new grid; a target cell is set when its footprint
        covers source foreground with fraction >= 0.5."""
        if height < 1 or width < 1:
            raise FormatError(f"resample to degenerate dims {height}x{width}")
        wr = _overlap_weights(self.height, height)
        wc = _overlap_weights(self.width, width)
        coverage = wr @ self.bits.astype(np.float64) @ wc.T
        cell = (self.height / height) * (self.width / width)
        return Mask((coverage / cell >= 0.5).astype(np.uint8))


def _overlap_weights(src: int, dst: int) -> np.ndarray:
    """(dst, src) matrix of interval-overlap lengths between uniform grids."""
    out = np.zeros((dst, src), dtype=np.float64)
    scale = src / dst
    for i in range(dst):
        lo, hi = i * scale, (i + 1) * scale
        j0, j1 = int(math.floor(lo)), min(src, int(math.ceil(hi)))
        for j in range(j0, j1):
            out[i, j] = min(hi, j + 1) - max(lo, j)
    return out


class RegionCandidate:
    """A proposed region with its cached geometry.

    ``area`` is the exact popcount of the mask and ``bbox`` its tight
    half-open bounding box; both are derived in :meth:`from_mask` so they
    can never drift from the bits.
    """

    def __init__(self, mask: Mask, area: int, bbox: tuple[int, int, int, int]):
        if area != mask.area:
            raise IntegrityError(f"candidate area {area} != mask popcount {mask.area}")
        if area > 0 and bbox != mask.bbox():
            raise IntegrityError(f"candidate bbox {bbox} is not tight for its mask")
        self.mask = mask
        self.area = area
        self.bbox = bbox

    @classmethod
    def from_mask(cls, mask: Mask) -> "RegionCandidate":
        if mask.area == 0:
            raise IntegrityError("empty region candidate")
        return cls(mask, mask.area, mask.bbox())

    def aspect(self) -> float:
        x0, y0, x1, y1 = self.bbox
        return (x1 - x0) / (y1 - y0)


@dataclass
class CorrespondenceSet:
    """Paired point lists with per-pair match scores and skewness.

    Points are (x, y) = (column, row) on the two grids whose shapes are
    recorded so bounds can be re-checked after a round-trip.
    """

    points_a: np.ndarray  # (N, 2) int32, columns (x, y)
    points_b: np.ndarray
    scores: np.ndarray  # (N,) float32
    skewness: np.ndarray  # (N,) float32
    grid_a: tuple[int, int]  # (height, width)
    grid_b: tuple[int, int]

    def __post_init__(self) -> None:
        self.points_a = np.ascontiguousarray(self.points_a, dtype=np.int32).reshape(-1, 2)
        self.points_b = np.ascontiguousarray(self.points_b, dtype=np.int32).reshape(-1, 2)
        self.scores = np.ascontiguousarray(self.scores, dtype=np.float32).reshape(-1)
        self.skewness = np.ascontiguousarray(self.skewness, dtype=np.float32).reshape(-1)
        self.grid_a = (int(self.grid_a[0]), int(self.grid_a[1]))
        self.grid_b = (int(self.grid_b[0]), int(self.grid_b[1]))

    def __len__(self) -> int:
        return self.points_a.shape[0]

    def validate(self) -> None:
        n = len(self)
        if not (self.points_b.shape[0] == self.scores.shape[0] == self.skewness.shape[0] == n):
            raise IntegrityError("correspondence columns disagree on length")
        for pts, (h, w), side in ((self.points_a, self.grid_a, "a"), (self.points_b, self.grid_b, "b")):
            if n and (
                pts[:, 0].min() < 0 or pts[:, 0].max() >= w or pts[:, 1].min() < 0 or pts[:, 1].max() >= h
            ):
                raise IntegrityError(f"correspondence points_{side} outside {h}x{w} grid")
        if n and not np.all(np.isfinite(self.scores) & np.isfinite(self.skewness)):
            raise NonFiniteError("correspondence scores/skewness contain non-finite values")


@dataclass
class Provenance:
    """Filter evidence attached to a sample: why it was kept or dropped."""

    anchor_skewness: float = float("nan")
    anchor_score: float = float("nan")
    anchor_point_1: tuple[int, int] | None = None  # (x, y) on image 1
    anchor_point_2: tuple[int, int] | None = None  # its match on image 2
    perceptual_distance_1: float = float("nan")
    perceptual_distance_2: float = float("nan")
    rejection: str | None = None

    def to_json(self) -> dict:
        def _num(x: float) -> float | None:
            return None if math.isnan(x) else float(x)

        def _pt(p: tuple[int, int] | None) -> list[int] | None:
            return None if p is None else [int(p[0]), int(p[1])]

        return {
            "anchor_skewness": _num(self.anchor_skewness),
            "anchor_score": _num(self.anchor_score),
            "anchor_point_1": _pt(self.anchor_point_1),
            "anchor_point_2": _pt(self.anchor_point_2),
            "perceptual_distance_1": _num(self.perceptual_distance_1),
            "perceptual_distance_2": _num(self.perceptual_distance_2),
            "rejection": self.rejection,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Provenance":
        def _num(x) -> float:
            return float("nan") if x is None else float(x)

        def _pt(x) -> tuple[int, int] | None:
            return None if x is None else (int(x[0]), int(x[1]))

        return cls(
            anchor_skewness=_num(obj.get("anchor_skewness")),
            anchor_score=_num(obj.get("anchor_score")),
            anchor_point_1=_pt(obj.get("anchor_point_1")),
            anchor_point_2=_pt(obj.get("anchor_point_2")),
            perceptual_distance_1=_num(obj.get("perceptual_distance_1")),
            perceptual_distance_2=_num(obj.get("perceptual_distance_2")),
            rejection=obj.get("rejection"),
        )


_SAMPLE_FIELDS = (
    "sample_id",
    "image_id_1",
    "image_id_2",
    "stack_path_1",
    "stack_path_2",
    "inconsistent_stack_path_1",
    "inconsistent_stack_path_2",
    "subject_mask_path_1",
    "subject_mask_path_2",
    "region_mask_path_1",
    "region_mask_path_2",
    "corr_path",
    "subject_prompt",
    "target_prompt",
)


@dataclass
class SampleRecord:
    """One dataset element: a consistent pair, its altered twin, and masks."""

    sample_id: str
    image_id_1: str
    image_id_2: str
    stack_path_1: str
    stack_path_2: str
    inconsistent_stack_path_1: str
    inconsistent_stack_path_2: str
    subject_mask_path_1: str
    subject_mask_path_2: str
    region_mask_path_1: str
    region_mask_path_2: str
    corr_path: str
    subject_prompt: str
    target_prompt: str
    provenance: Provenance = field(default_factory=Provenance)

    def to_json_line(self) -> str:
        obj = {name: getattr(self, name) for name in _SAMPLE_FIELDS}
        obj["provenance"] = self.provenance.to_json()
        return json.dumps(obj, separators=(",", ":"))

    @classmethod
    def from_json(cls, obj: dict) -> "SampleRecord":
        missing = [name for name in _SAMPLE_FIELDS if name not in obj]
        if missing:
            raise IntegrityError(f"sample record missing fields: {missing}")
        return cls(
            **{name: obj[name] for name in _SAMPLE_FIELDS},
            provenance=Provenance.from_json(obj.get("provenance", {})),
        )

    def path_fields(self) -> list[str]:
        return [name for name in _SAMPLE_FIELDS if name.endswith("_path") or "_path_" in name]


@dataclass
class PairRecord:
    """A consistent pair as emitted by the world generator, before the
    inconsistency pipeline has run on it."""

    pair_id: str
    image_id_1: str
    image_id_2: str
    stack_path_1: str
    stack_path_2: str
    subject_mask_path_1: str
    subject_mask_path_2: str
    gt_corr_path: str
    subject_prompt: str
    target_prompt: str
    world: dict = field(default_factory=dict)

    def to_json_line(self) -> str:
        obj = {
            "pair_id": self.pair_id,
            "image_id_1": self.image_id_1,
            "image_id_2": self.image_id_2,
            "stack_path_1": self.stack_path_1,
            "stack_path_2": self.stack_path_2,
            "subject_mask_path_1": self.subject_mask_path_1,
            "subject_mask_path_2": self.subject_mask_path_2,
            "gt_corr_path": self.gt_corr_path,
            "subject_prompt": self.subject_prompt,
            "target_prompt": self.target_prompt,
            "world": self.world,
        }
        return json.dumps(obj, separators=(",", ":"))

    @classmethod
    def from_json(cls, obj: dict) -> "PairRecord":
        try:
            return cls(**obj)
        except TypeError as exc:
            raise IntegrityError(f"bad pair record: {exc}") from exc


# ---------------------------------------------------------------------------
# low-level byte helpers
# ---------------------------------------------------------------------------

def _write_u32(sink: BinaryIO, value: int) -> int:
    sink.write(_U32.pack(value))
    return 4


def _read_exact(source: BinaryIO, count: int, what: str) -> bytes:
    data = source.read(count)
    if len(data) != count:
        raise TruncationError(f"truncated while reading {what}: wanted {count} bytes, got {len(data)}")
    return data


def _read_u32(source: BinaryIO, what: str) -> int:
    return _U32.unpack(_read_exact(source, 4, what))[0]


class _Sink:
    """Context adapter accepting either a path or an open binary stream."""

    def __init__(self, dest: str | Path | BinaryIO, append: bool = False):
        self._dest = dest
        self._own: BinaryIO | None = None
        self._append = append

    def __enter__(self) -> BinaryIO:
        if isinstance(self._dest, (str, Path)):
            self._own = open(self._dest, "ab" if self._append else "wb")
            return self._own
        return self._dest

    def __exit__(self, *exc) -> None:
        if self._own is not None:
            self._own.close()


class _Source:
    def __init__(self, src: str | Path | BinaryIO):
        self._src = src
        self._own: BinaryIO | None = None

    def __enter__(self) -> BinaryIO:
        if isinstance(self._src, (str, Path)):
            self._own = open(self._src, "rb")
            return self._own
        return self._src

    def __exit__(self, *exc) -> None:
        if self._own is not None:
            self._own.close()


# ---------------------------------------------------------------------------
# stacks
# ---------------------------------------------------------------------------

def write_stack(stack: FeatureStack, dest: str | Path | BinaryIO) -> int:
    """Serialize a validated stack; returns the number of bytes written."""
    stack.validate()
    with _Sink(dest) as sink:
        n = 0
        sink.write(MAGIC_STACK)
        n += 4
        n += _write_u32(sink, FORMAT_VERSION)
        n += _write_u32(sink, len(stack.layers))
        for block in stack.layers:
            for value in (block.layer_id, block.channels, block.height, block.width):
                n += _write_u32(sink, value)
            payload = block.values.astype("<f4", copy=False).tobytes()
            sink.write(payload)
            n += len(payload)
        return n


def read_stack(source: str | Path | BinaryIO, image_id: str = "") -> FeatureStack:
    """Inverse of :func:`write_stack`; validates every invariant on load."""
    if isinstance(source, (str, Path)) and not image_id:
        image_id = Path(source).stem
    with _Source(source) as src:
        magic = _read_exact(src, 4, "magic")
        if magic != MAGIC_STACK:
            raise FormatError(f"bad stack magic {magic!r}")
        version = _read_u32(src, "version")
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported stack format version {version}")
        count = _read_u32(src, "layer count")
        layers = []
        for i in range(count):
            layer_id = _read_u32(src, f"layer {i} id")
            channels = _read_u32(src, f"layer {i} channels")
            height = _read_u32(src, f"layer {i} height")
            width = _read_u32(src, f"layer {i} width")
            if min(channels, height, width) < 1:
                raise FormatError(f"layer {layer_id}: degenerate dims {channels}x{height}x{width}")
            raw = _read_exact(src, 4 * channels * height * width, f"layer {layer_id} payload")
            values = np.frombuffer(raw, dtype="<f4").reshape(height, width, channels)
            layers.append(LayerBlock(layer_id, values))
        stack = FeatureStack(image_id=image_id, layers=layers)
        stack.validate()
        return stack


# ---------------------------------------------------------------------------
# masks
# ---------------------------------------------------------------------------

def write_mask(mask: Mask, dest: str | Path | BinaryIO) -> int:
    mask.validate()
    with _Sink(dest) as sink:
        n = 0
        sink.write(MAGIC_MASK)
        n += 4
        n += _write_u32(sink, FORMAT_VERSION)
        n += _write_u32(sink, mask.height)
        n += _write_u32(sink, mask.width)
        payload = np.packbits(mask.bits.ravel(), bitorder="little").tobytes()
        sink.write(payload)
        return n + len(payload)


def read_mask(source: str | Path | BinaryIO) -> Mask:
    with _Source(source) as src:
        magic = _read_exact(src, 4, "magic")
        if magic != MAGIC_MASK:
            raise FormatError(f"bad mask magic {magic!r}")
        version = _read_u32(src, "version")
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported mask format version {version}")
        height = _read_u32(src, "height")
        width = _read_u32(src, "width")
        if height < 1 or width < 1:
            raise FormatError(f"mask: degenerate dims {height}x{width}")
        nbytes = (height * width + 7) // 8
        raw = _read_exact(src, nbytes, "mask payload")
        bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), count=height * width, bitorder="little")
        mask = Mask(bits.reshape(height, width))
        mask.validate()
        return mask


# ---------------------------------------------------------------------------
# correspondences
# ---------------------------------------------------------------------------

def write_corr(corr: CorrespondenceSet, dest: str | Path | BinaryIO) -> int:
    corr.validate()
    with _Sink(dest) as sink:
        n = 0
        sink.write(MAGIC_CORR)
        n += 4
        n += _write_u32(sink, FORMAT_VERSION)
        n += _write_u32(sink, len(corr))
        for dim in (*corr.grid_a, *corr.grid_b):
            n += _write_u32(sink, dim)
        for column in (
            corr.points_a[:, 0], corr.points_a[:, 1],
            corr.points_b[:, 0], corr.points_b[:, 1],
        ):
            payload = column.astype("<i4", copy=False).tobytes()
            sink.write(payload)
            n += len(payload)
        for column in (corr.scores, corr.skewness):
            payload = column.astype("<f4", copy=False).tobytes()
            sink.write(payload)
            n += len(payload)
        return n


def read_corr(source: str | Path | BinaryIO) -> CorrespondenceSet:
    with _Source(source) as src:
        magic = _read_exact(src, 4, "magic")
        if magic != MAGIC_CORR:
            raise FormatError(f"bad correspondence magic {magic!r}")
        version = _read_u32(src, "version")
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported correspondence format version {version}")
        count = _read_u32(src, "count")
        grid_a = (_read_u32(src, "grid_a h"), _read_u32(src, "grid_a w"))
        grid_b = (_read_u32(src, "grid_b h"), _read_u32(src, "grid_b w"))
        ints = [
            np.frombuffer(_read_exact(src, 4 * count, "points"), dtype="<i4") for _ in range(4)
        ]
        scores = np.frombuffer(_read_exact(src, 4 * count, "scores"), dtype="<f4")
        skewness = np.frombuffer(_read_exact(src, 4 * count, "skewness"), dtype="<f4")
        corr = CorrespondenceSet(
            points_a=np.stack([ints[0], ints[1]], axis=1) if count else np.zeros((0, 2), np.int32),
            points_b=np.stack([ints[2], ints[3]], axis=1) if count else np.zeros((0, 2), np.int32),
            scores=scores,
            skewness=skewness,
            grid_a=grid_a,
            grid_b=grid_b,
        )
        corr.validate()
        return corr


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

def append_sample(manifest: str | Path | BinaryIO, record: SampleRecord) -> None:
    """Append one record as a JSON line."""
    line = record.to_json_line() + "\n"
    with _Sink(manifest, append=True) as sink:
        sink.write(line.encode("utf-8"))


def append_pair(manifest: str | Path | BinaryIO, record: PairRecord) -> None:
    line = record.to_json_line() + "\n"
    with _Sink(manifest, append=True) as sink:
        sink.write(line.encode("utf-8"))


def _iter_json_lines(path: str | Path) -> Iterator[dict]:
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: bad JSON: {exc}") from exc


def resolve_path(manifest_path: str | Path, relative: str) -> Path:
    """Record paths are stored relative to the manifest's directory."""
    p = Path(relative)
    return p if p.is_absolute() else Path(manifest_path).parent / p


def load_manifest(path: str | Path, check_files: bool = True) -> list[SampleRecord]:
    """Load sample records; verifies referenced artifacts and R within O."""
    records = []
    for obj in _iter_json_lines(path):
        record = SampleRecord.from_json(obj)
        if check_files:
            _check_sample_files(path, record)
        records.append(record)
    return records


def _check_sample_files(manifest_path: str | Path, record: SampleRecord) -> None:
    for name in record.path_fields():
        target = resolve_path(manifest_path, getattr(record, name))
        if not target.exists():
            raise IntegrityError(f"record {record.sample_id!r}: missing file for {name}: {target}")
    for side in ("1", "2"):
        region = read_mask(resolve_path(manifest_path, getattr(record, f"region_mask_path_{side}")))
        subject = read_mask(resolve_path(manifest_path, getattr(record, f"subject_mask_path_{side}")))
        if not region.is_subset_of(subject):
            raise IntegrityError(
                f"record {record.sample_id!r}: region mask {side} not inside subject mask {side}"
            )


def load_pairs(path: str | Path, check_files: bool = True) -> list[PairRecord]:
    records = []
    for obj in _iter_json_lines(path):
        record = PairRecord.from_json(obj)
        if check_files:
            for name in (
                "stack_path_1", "stack_path_2",
                "subject_mask_path_1", "subject_mask_path_2", "gt_corr_path",
            ):
                target = resolve_path(path, getattr(record, name))
                if not target.exists():
                    raise IntegrityError(f"pair {record.pair_id!r}: missing file for {name}: {target}")
        records.append(record)
    return records


# ---------------------------------------------------------------------------
# quick-look export
# ---------------------------------------------------------------------------

def write_pgm(grid: np.ndarray, dest: str | Path) -> None:
    """Write a [0, 1] grid as an 8-bit binary PGM for quick viewing."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise FormatError(f"PGM export needs a 2-d grid, got shape {grid.shape}")
    levels = np.clip(np.rint(grid * 255.0), 0, 255).astype(np.uint8)
    header = f"P5\n{grid.shape[1]} {grid.shape[0]}\n255\n".encode("ascii")
    with open(dest, "wb") as sink:
        sink.write(header)
        sink.write(levels.tobytes())


def write_float_grid(grid: np.ndarray, dest: str | Path) -> None:
    """Raw float32 grid export: u32 height, u32 width, then row-major values."""
    grid = np.asarray(grid, dtype=np.float32)
    if grid.ndim != 2:
        raise FormatError(f"float-grid export needs a 2-d grid, got shape {grid.shape}")
    with open(dest, "wb") as sink:
        sink.write(_U32.pack(grid.shape[0]))
        sink.write(_U32.pack(grid.shape[1]))
        sink.write(grid.astype("<f4", copy=False).tobytes())
