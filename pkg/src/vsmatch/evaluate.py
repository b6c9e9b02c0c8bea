"""Oracle scores, correlation statistics, baselines, and report generation.

The oracle for a generated sample is the unedited fraction of its subject;
a good inconsistency metric should rank samples the way the oracle does.
Correlations are computed by hand (and cross-checked against independent
implementations in the tests); histograms export the score distributions
as plain CSV plot data.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .correspond import normalize_rows
from .disentangle import AggregatorParams, aggregate
from .errors import IntegrityError
from .metric import VsmConfig, vsm
from .store import (
    FeatureStack,
    Mask,
    SampleRecord,
    read_mask,
    read_stack,
    resolve_path,
)

HISTOGRAM_BINS = 20


# ---------------------------------------------------------------------------
# scalar statistics
# ---------------------------------------------------------------------------

def oracle_score(region_1: Mask, subject_1: Mask) -> float:
    """Unedited fraction of the subject: 1 - |R|/|O|."""
    if subject_1.area == 0:
        raise IntegrityError("oracle needs a non-empty subject mask")
    if not region_1.is_subset_of(subject_1):
        raise IntegrityError("oracle region must lie inside the subject")
    return 1.0 - region_1.area / subject_1.area


def _check_series_pair(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise IntegrityError(f"series lengths differ: {x.size} vs {y.size}")
    if x.size < 3:
        raise IntegrityError(f"correlation needs at least 3 points, got {x.size}")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise IntegrityError("correlation inputs must be finite")
    return x, y


def pearson(x, y) -> float | None:
    """Sample Pearson correlation; None when either series is constant."""
    x, y = _check_series_pair(x, y)
    dx = x - x.mean()
    dy = y - y.mean()
    sx = float(np.sqrt((dx * dx).sum()))
    sy = float(np.sqrt((dy * dy).sum()))
    if sx == 0.0 or sy == 0.0:
        return None
    return float((dx * dy).sum() / (sx * sy))


def average_ranks(values) -> np.ndarray:
    """1-based ranks; tied values share the mean of their rank range."""
    values = np.asarray(values, dtype=np.float64).ravel()
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_values = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_values[j + 1] == sorted_values[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float | None:
    """Pearson on average ranks; None when a series is constant."""
    x, y = _check_series_pair(x, y)
    return pearson(average_ranks(x), average_ranks(y))


def baseline_cosine(embedding_a: np.ndarray, embedding_b: np.ndarray) -> float:
    """Cosine between two image-level embedding vectors."""
    a = np.asarray(embedding_a, dtype=np.float64).ravel()
    b = np.asarray(embedding_b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise IntegrityError(f"embedding dims differ: {a.size} vs {b.size}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise IntegrityError("cosine of a zero embedding is undefined")
    return float(a @ b / (na * nb))


# ---------------------------------------------------------------------------
# series
# ---------------------------------------------------------------------------

@dataclass
class MetricSeries:
    """Named per-sample scores aligned to sample ids."""

    name: str
    ids: list[str]
    scores: np.ndarray

    def __post_init__(self) -> None:
        self.scores = np.asarray(self.scores, dtype=np.float64).ravel()
        self.validate()

    def validate(self) -> None:
        if not self.name:
            raise IntegrityError("series needs a name")
        if len(self.ids) != self.scores.size:
            raise IntegrityError(
                f"series {self.name}: {len(self.ids)} ids vs {self.scores.size} scores"
            )
        if len(set(self.ids)) != len(self.ids):
            raise IntegrityError(f"series {self.name}: duplicate sample ids")
        if not np.isfinite(self.scores).all():
            raise IntegrityError(f"series {self.name}: non-finite scores")

    def aligned_to(self, ids: list[str]) -> np.ndarray:
        lookup = {sid: i for i, sid in enumerate(self.ids)}
        missing = [sid for sid in ids if sid not in lookup]
        extra = sorted(set(self.ids) - set(ids))
        if missing or extra:
            raise IntegrityError(
                f"series {self.name} misaligned with oracle ids: "
                f"missing {missing[:3]}, extra {extra[:3]}"
            )
        return self.scores[[lookup[sid] for sid in ids]]


def write_series_csv(path: str | Path, series: MetricSeries) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["sample_id", "score"])
        for sid, score in zip(series.ids, series.scores):
            writer.writerow([sid, repr(float(score))])


def read_series_csv(path: str | Path, name: str | None = None) -> MetricSeries:
    path = Path(path)
    ids: list[str] = []
    scores: list[float] = []
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["sample_id", "score"]:
            raise IntegrityError(f"{path}: expected a 'sample_id,score' header")
        for row in reader:
            if not row:
                continue
            if len(row) < 2:
                raise IntegrityError(f"{path}: short row {row!r}")
            ids.append(row[0])
            try:
                scores.append(float(row[1]))
            except ValueError as exc:
                raise IntegrityError(f"{path}: bad score in row {row!r}") from exc
    return MetricSeries(name=name or path.stem, ids=ids, scores=np.array(scores))


# ---------------------------------------------------------------------------
# series builders over a sample manifest
# ---------------------------------------------------------------------------

def oracle_series(records: list[SampleRecord], manifest_path: str | Path) -> MetricSeries:
    """Ground-truth unedited fraction per sample, from the stored masks."""
    ids, scores = [], []
    for record in records:
        region = read_mask(resolve_path(manifest_path, record.region_mask_path_1))
        subject = read_mask(resolve_path(manifest_path, record.subject_mask_path_1))
        ids.append(record.sample_id)
        scores.append(oracle_score(region, subject))
    series = MetricSeries(name="oracle", ids=ids, scores=np.array(scores))
    if ((series.scores < 0) | (series.scores > 1)).any():
        raise IntegrityError("oracle scores must lie in [0, 1]")
    return series


def _eval_pair(record: SampleRecord, manifest_path: str | Path):
    """The evaluation pairing: consistent reference image 1 against the
    edited image 2, with both subject masks."""
    stack_1 = read_stack(resolve_path(manifest_path, record.stack_path_1), record.image_id_1)
    stack_2 = read_stack(
        resolve_path(manifest_path, record.inconsistent_stack_path_2), record.image_id_2 + "p"
    )
    mask_1 = read_mask(resolve_path(manifest_path, record.subject_mask_path_1))
    mask_2 = read_mask(resolve_path(manifest_path, record.subject_mask_path_2))
    return stack_1, stack_2, mask_1, mask_2


def vsm_series(
    records: list[SampleRecord],
    manifest_path: str | Path,
    params: AggregatorParams,
    cfg: VsmConfig | None = None,
    name: str = "vsm",
) -> MetricSeries:
    """VSM per sample on the reference-vs-edited pairing; samples with no
    semantic overlap are rejected loudly rather than silently scored."""
    ids, scores = [], []
    for record in records:
        stack_1, stack_2, mask_1, mask_2 = _eval_pair(record, manifest_path)
        report = vsm(stack_1, stack_2, params, mask_1, mask_2, cfg)
        if report.vsm is None:
            raise IntegrityError(
                f"sample {record.sample_id}: no semantic overlap under the "
                f"current thresholds; cannot build a correlation series"
            )
        ids.append(record.sample_id)
        scores.append(report.vsm)
    return MetricSeries(name=name, ids=ids, scores=np.array(scores))


def mean_feature_embedding(stack: FeatureStack) -> np.ndarray:
    """Image-level embedding surrogate: per-layer spatial means, unit-normed
    per layer, concatenated."""
    parts = []
    for block in stack.layers:
        mean = block.values.reshape(-1, block.channels).astype(np.float64).mean(axis=0)
        normed, _ = normalize_rows(mean[None, :])
        parts.append(normed[0])
    return np.concatenate(parts)


def baseline_series(
    records: list[SampleRecord],
    manifest_path: str | Path,
    name: str = "mean_feature_cosine",
) -> MetricSeries:
    """Whole-image mean-pooled feature cosine on the same pairing as VSM —
    the thing a position-blind embedding comparison would report."""
    ids, scores = [], []
    for record in records:
        stack_1, stack_2, _, _ = _eval_pair(record, manifest_path)
        ids.append(record.sample_id)
        scores.append(
            baseline_cosine(mean_feature_embedding(stack_1), mean_feature_embedding(stack_2))
        )
    return MetricSeries(name=name, ids=ids, scores=np.array(scores))


def visual_similarity_split(
    record: SampleRecord, manifest_path: str | Path, params: AggregatorParams
) -> tuple[float | None, float | None, int, int]:
    """Mean visual cosine over edited (P_in) vs untouched (P_out)
    correspondences of one sample's edited pair; the disentanglement
    signature is in < out."""
    from .disentangle import partition_points
    from .store import read_corr
    from .train import _flat_indices

    stack_1 = read_stack(
        resolve_path(manifest_path, record.inconsistent_stack_path_1), record.image_id_1 + "p"
    )
    stack_2 = read_stack(
        resolve_path(manifest_path, record.inconsistent_stack_path_2), record.image_id_2 + "p"
    )
    corr = read_corr(resolve_path(manifest_path, record.corr_path))
    region_1 = read_mask(resolve_path(manifest_path, record.region_mask_path_1))
    region_2 = read_mask(resolve_path(manifest_path, record.region_mask_path_2))
    v_1 = aggregate(stack_1, params, "visual").values
    v_2 = aggregate(stack_2, params, "visual").values
    flat_1 = _flat_indices(corr.points_a, corr.grid_a, params.arch.grid)
    flat_2 = _flat_indices(corr.points_b, corr.grid_b, params.arch.grid)
    cos = np.einsum("ij,ij->i", v_1[flat_1], v_2[flat_2])
    part = partition_points(corr, region_1, region_2)
    mean_in = float(cos[part.p_in].mean()) if part.p_in.size else None
    mean_out = float(cos[part.p_out].mean()) if part.p_out.size else None
    return mean_in, mean_out, int(part.p_in.size), int(part.p_out.size)


# ---------------------------------------------------------------------------
# the report
# ---------------------------------------------------------------------------

@dataclass
class MetricCorrelation:
    name: str
    pearson: float | None
    spearman: float | None
    histogram: list[tuple[float, float, int]]


@dataclass
class CorrelationReport:
    oracle_name: str
    n_samples: int
    entries: list[MetricCorrelation]
    histograms: dict[str, list[tuple[float, float, int]]]

    def to_json(self) -> dict:
        return {
            "oracle": self.oracle_name,
            "n_samples": self.n_samples,
            "metrics": [
                {"name": e.name, "pearson": e.pearson, "spearman": e.spearman}
                for e in self.entries
            ],
        }

    def to_text(self) -> str:
        def fmt(value: float | None) -> str:
            return "undefined" if value is None else f"{value:+.4f}"

        width = max([len("metric")] + [len(e.name) for e in self.entries])
        lines = [
            f"correlations vs {self.oracle_name} over {self.n_samples} samples",
            f"{'metric'.ljust(width)}  {'pearson':>10}  {'spearman':>10}",
        ]
        for e in self.entries:
            lines.append(
                f"{e.name.ljust(width)}  {fmt(e.pearson):>10}  {fmt(e.spearman):>10}"
            )
        return "\n".join(lines) + "\n"


def _histogram(scores: np.ndarray) -> list[tuple[float, float, int]]:
    lo = float(scores.min())
    hi = float(scores.max())
    if lo == hi:  # a constant series still gets a well-formed histogram
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(scores, bins=HISTOGRAM_BINS, range=(lo, hi))
    return [
        (float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(HISTOGRAM_BINS)
    ]


def correlation_report(
    series_list: list[MetricSeries], oracle: MetricSeries
) -> CorrelationReport:
    """Pearson/Spearman of every metric against the oracle, plus 20-bin
    score histograms (oracle included) as distribution plot data."""
    if len({s.name for s in series_list} | {oracle.name}) != len(series_list) + 1:
        raise IntegrityError("metric series names must be unique")
    entries = []
    histograms = {oracle.name: _histogram(oracle.scores)}
    for series in series_list:
        aligned = series.aligned_to(oracle.ids)
        entries.append(
            MetricCorrelation(
                name=series.name,
                pearson=pearson(aligned, oracle.scores),
                spearman=spearman(aligned, oracle.scores),
                histogram=_histogram(aligned),
            )
        )
        histograms[series.name] = entries[-1].histogram
    return CorrelationReport(
        oracle_name=oracle.name,
        n_samples=len(oracle.ids),
        entries=entries,
        histograms=histograms,
    )


def write_report(report: CorrelationReport, out_dir: str | Path) -> list[Path]:
    """report.txt + report.json + one histogram CSV per series."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / "report.txt", out_dir / "report.json"]
    paths[0].write_text(report.to_text())
    with open(paths[1], "w") as handle:
        json.dump(report.to_json(), handle, indent=2, sort_keys=True)
        handle.write("\n")
    for name, rows in report.histograms.items():
        path = out_dir / f"hist_{name}.csv"
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["bin_lo", "bin_hi", "count"])
            for lo, hi, count in rows:
                writer.writerow([repr(lo), repr(hi), count])
        paths.append(path)
    return paths
