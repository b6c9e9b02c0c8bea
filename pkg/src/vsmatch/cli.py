"""Command-line entrypoint.

Subcommands cover the whole workflow: world generation, the inconsistency
pipeline, training, scoring, evaluation, weight inspection, and artifact
validation. Exit codes: 0 success, 1 usage, 2 data/format error, 3 numeric
error.

This module imports numpy lazily so that ``--threads`` can pin the BLAS
thread pools through environment variables before numpy first loads.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .errors import NonFiniteError, VsmatchError

log = logging.getLogger("vsmatch")

THREAD_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


class UsageError(VsmatchError):
    """Bad invocation: wrong flags, missing inputs, refusing to overwrite."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage().rstrip()}")


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------

def _configure_logging() -> None:
    level = os.environ.get("MTG_LOG", "WARNING").upper()
    if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        level = "WARNING"
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _apply_threads(threads: int | None) -> None:
    """Pin thread pools before any numpy import; required for --threads 1
    bitwise reproducibility."""
    if threads is None:
        return
    if threads < 1:
        raise UsageError(f"--threads must be >= 1, got {threads}")
    if "numpy" in sys.modules and os.environ.get(THREAD_ENV_VARS[0]) != str(threads):
        log.warning("numpy already loaded; --threads %d may not take effect", threads)
    for name in THREAD_ENV_VARS:
        os.environ[name] = str(threads)


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    from .errors import IntegrityError

    try:
        with open(path) as handle:
            obj = json.load(handle)
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(obj, dict):
        raise IntegrityError(f"{path}: config root must be a JSON object")
    return obj


def _section(config: dict, name: str) -> dict:
    from .errors import IntegrityError

    sec = config.get(name, {})
    if not isinstance(sec, dict):
        raise IntegrityError(f"config section {name!r} must be a JSON object")
    return dict(sec)


def _guard_dir(out_dir: Path, force: bool) -> None:
    if not force and out_dir.exists() and any(out_dir.iterdir()):
        raise UsageError(f"output directory {out_dir} is not empty; pass --force to overwrite")


def _guard_files(paths: list[Path], force: bool) -> None:
    if force:
        return
    for path in paths:
        if path.exists():
            raise UsageError(f"refusing to overwrite {path}; pass --force")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth_gen(args: argparse.Namespace) -> int:
    from .synth import GeneratorConfig, generate_pairs

    config = _load_config(args.config)
    gen_obj = _section(config, "generator")
    world_obj = _section(config, "world")
    if world_obj and "world" not in gen_obj:
        gen_obj["world"] = world_obj
    gen = GeneratorConfig.from_json(gen_obj)
    out_dir = Path(args.out)
    _guard_dir(out_dir, args.force)
    records = generate_pairs(out_dir, seed=args.seed, count=args.count, gen=gen)
    print(f"wrote {len(records)} pairs -> {out_dir / 'pairs.jsonl'}")
    return 0


def cmd_pipeline(args: argparse.Namespace) -> int:
    from .datagen import PipelineConfig, run_pipeline, synthetic_ports_for

    config = _load_config(args.config)
    cfg = PipelineConfig.from_json(_section(config, "pipeline"))
    out_dir = Path(args.out)
    _guard_dir(out_dir, args.force)
    blend = args.blend
    stats = run_pipeline(
        args.pairs,
        out_dir,
        seed=args.seed,
        cfg=cfg,
        ports_for=lambda record: synthetic_ports_for(record, blend),
    )
    for code, count in stats.rows():
        print(f"{code}: {count}")
    print(f"manifest -> {out_dir / 'samples.jsonl'}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    from .train import TrainConfig, train

    config = _load_config(args.config)
    obj = _section(config, "train")
    for name in ("epochs", "batch_size", "lr", "alpha", "q"):
        value = getattr(args, name)
        if value is not None:
            obj[name] = value
    cfg = TrainConfig.from_json(obj)
    out_dir = Path(args.out)
    _guard_dir(out_dir, args.force)
    _params, history = train(args.manifest, out_dir, cfg, seed=args.seed)
    final = history[-1]
    print(
        f"trained {cfg.epochs} epochs; final l_total {final['l_total']:.6f} "
        f"-> {out_dir / 'checkpoint_final.mtgp'}"
    )
    return 0


def _vsm_config(args: argparse.Namespace, config: dict):
    from .metric import VsmConfig

    obj = _section(config, "vsm")
    if args.t_s is not None:
        obj["t_s"] = args.t_s
    if args.t_v is not None:
        obj["t_v"] = args.t_v
    if args.direction is not None:
        obj["direction"] = args.direction
    if args.full_grid:
        obj["restrict_to_subject"] = False
    return VsmConfig.from_json(obj)


def cmd_vsm(args: argparse.Namespace) -> int:
    from .disentangle import read_params
    from .metric import vsm, write_report
    from .store import read_mask, read_stack

    cfg = _vsm_config(args, _load_config(args.config))
    params, _meta = read_params(args.ckpt)
    out_dir = Path(args.out)

    if args.pair:
        path_a, path_b = args.pair
        stack_1 = read_stack(path_a, Path(path_a).stem)
        stack_2 = read_stack(path_b, Path(path_b).stem)
        mask_1 = read_mask(args.mask_1) if args.mask_1 else None
        mask_2 = read_mask(args.mask_2) if args.mask_2 else None
        prefix = args.prefix
        _guard_files(
            [out_dir / f"{prefix}_report.json", out_dir / f"{prefix}_map.f32",
             out_dir / f"{prefix}_map.pgm"],
            args.force,
        )
        report = vsm(stack_1, stack_2, params, mask_1, mask_2, cfg)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = write_report(report, out_dir, prefix=prefix)
        if report.vsm is None:
            print(f"vsm undefined ({report.reason}); report -> {paths[0]}")
        else:
            print(f"vsm {report.vsm:.6f}; report -> {paths[0]}")
        return 0

    from .evaluate import vsm_series, write_series_csv
    from .store import load_manifest

    records = load_manifest(args.manifest)
    scores_path = out_dir / "vsm_scores.csv"
    _guard_files([scores_path], args.force)
    series = vsm_series(records, args.manifest, params, cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_series_csv(scores_path, series)
    print(f"scored {len(records)} samples -> {scores_path}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    from .disentangle import read_params
    from .evaluate import (
        baseline_series,
        correlation_report,
        oracle_series,
        vsm_series,
        write_report,
        write_series_csv,
    )
    from .store import load_manifest

    cfg = _vsm_config(args, _load_config(args.config))
    params, _meta = read_params(args.ckpt)
    records = load_manifest(args.manifest)
    out_dir = Path(args.out)
    _guard_dir(out_dir, args.force)

    oracle = oracle_series(records, args.manifest)
    metrics = [
        vsm_series(records, args.manifest, params, cfg),
        baseline_series(records, args.manifest),
    ]
    report = correlation_report(metrics, oracle)
    write_report(report, out_dir)
    for series in [oracle, *metrics]:
        write_series_csv(out_dir / f"scores_{series.name}.csv", series)
    sys.stdout.write(report.to_text())
    print(f"report -> {out_dir / 'report.txt'}")
    return 0


def cmd_inspect_weights(args: argparse.Namespace) -> int:
    from .disentangle import layer_weight_table, read_params

    params, _meta = read_params(args.ckpt)
    lines = ["branch,layer_id,weight"]
    for branch, layer_id, weight in layer_weight_table(params):
        lines.append(f"{branch},{layer_id},{weight!r}")
    text = "\n".join(lines) + "\n"
    if args.out:
        path = Path(args.out)
        _guard_files([path], args.force)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        print(f"weights -> {path}")
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------

def _validate_one(kind: str, path: str, problems: list[str]) -> None:
    try:
        if kind == "stack":
            from .store import read_stack

            stack = read_stack(path, Path(path).stem)
            ids = ",".join(str(i) for i in stack.layer_ids())
            print(f"ok stack {path} (layers [{ids}])")
        elif kind == "mask":
            from .store import read_mask

            mask = read_mask(path)
            print(f"ok mask {path} ({mask.height}x{mask.width}, area {mask.area})")
        elif kind == "corr":
            from .store import read_corr

            corr = read_corr(path)
            print(f"ok corr {path} ({len(corr)} points)")
        elif kind == "ckpt":
            from .disentangle import read_params

            params, _meta = read_params(path)
            arch = params.arch
            print(
                f"ok ckpt {path} (q {arch.q}, grid {arch.grid[0]}x{arch.grid[1]}, "
                f"layers {list(arch.layer_ids)})"
            )
    except VsmatchError as exc:
        problems.append(f"{kind} {path}: {exc}")
    except OSError as exc:
        problems.append(f"{kind} {path}: {exc}")


def _independent_skewness(values) -> float:
    """Adjusted Fisher-Pearson sample skewness, written out from the
    definition on purpose: the validator must not share the pipeline's
    implementation."""
    import numpy as np

    x = np.asarray(values, dtype=np.float64)
    n = x.size
    mean = x.sum() / n
    dev = x - mean
    var = (dev * dev).sum() / (n - 1)
    if var == 0.0:
        return 0.0
    third = (dev**3).sum() / n
    return float(n * n / ((n - 1) * (n - 2)) * third / var**1.5)


def _independent_unit_rows(values):
    import numpy as np

    norms = np.linalg.norm(values, axis=1, keepdims=True)
    return values / np.maximum(norms, 1e-12)


def _layer_rows(stack, layer_id):
    from .errors import IntegrityError

    for block in stack.layers:
        if block.layer_id == layer_id:
            return block.values.astype("float64").reshape(-1, block.channels)
    raise IntegrityError(f"stack {stack.image_id} has no layer {layer_id}")


def _recheck_sample(record, manifest_path: Path, cfg) -> list[str]:
    """Re-derive every filter quantity from the artifacts alone and compare
    against the thresholds; returns violation strings."""
    import numpy as np

    from .store import read_mask, read_stack, resolve_path

    sid = record.sample_id
    problems: list[str] = []

    def load_mask(rel):
        return read_mask(resolve_path(manifest_path, rel))

    def load_stack(rel, image_id):
        return read_stack(resolve_path(manifest_path, rel), image_id)

    subjects = {1: load_mask(record.subject_mask_path_1), 2: load_mask(record.subject_mask_path_2)}
    regions = {1: load_mask(record.region_mask_path_1), 2: load_mask(record.region_mask_path_2)}
    before = {
        1: load_stack(record.stack_path_1, record.image_id_1),
        2: load_stack(record.stack_path_2, record.image_id_2),
    }
    after = {
        1: load_stack(record.inconsistent_stack_path_1, record.image_id_1 + "p"),
        2: load_stack(record.inconsistent_stack_path_2, record.image_id_2 + "p"),
    }

    for view in (1, 2):
        region, subject = regions[view], subjects[view]
        bits_r = region.bits.astype(bool)
        bits_o = subject.bits.astype(bool)
        if bits_r.shape != bits_o.shape:
            problems.append(f"{sid}: view {view} region/subject grids differ")
            continue
        if (bits_r & ~bits_o).any():
            problems.append(f"{sid}: view {view} region leaves the subject")
        area_r = int(bits_r.sum())
        area_o = int(bits_o.sum())
        if area_o == 0:
            problems.append(f"{sid}: view {view} empty subject")
            continue
        frac = area_r / area_o
        if not cfg.region_frac_min <= frac <= cfg.region_frac_max:
            problems.append(f"{sid}: view {view} region fraction {frac:.4f} out of bounds")
        rows = np.flatnonzero(bits_r.any(axis=1))
        cols = np.flatnonzero(bits_r.any(axis=0))
        if rows.size == 0:
            problems.append(f"{sid}: view {view} empty region")
            continue
        aspect = (cols[-1] + 1 - cols[0]) / (rows[-1] + 1 - rows[0])
        if not cfg.aspect_min <= aspect <= cfg.aspect_max:
            problems.append(f"{sid}: view {view} aspect {aspect:.4f} out of bounds")

    # anchor ambiguity: one similarity row from scratch at the recorded anchor
    p1 = record.provenance.anchor_point_1
    if p1 is None:
        problems.append(f"{sid}: no anchor point recorded")
    else:
        f1 = _independent_unit_rows(_layer_rows(before[1], cfg.match_layer))
        f2 = _independent_unit_rows(_layer_rows(before[2], cfg.match_layer))
        width = subjects[1].width
        if not (0 <= p1[0] < width and 0 <= p1[1] < subjects[1].height):
            problems.append(f"{sid}: anchor {p1} outside grid")
        else:
            candidates = np.flatnonzero(subjects[2].bits.ravel())
            row = f2[candidates] @ f1[p1[1] * width + p1[0]]
            score = float(row.max())
            if score < cfg.anchor_score_min:
                problems.append(f"{sid}: anchor score {score:.4f} < {cfg.anchor_score_min}")
            if row.size < 3:
                problems.append(f"{sid}: only {row.size} match candidates")
            else:
                skew = _independent_skewness(row)
                if skew < cfg.skewness_min:
                    problems.append(f"{sid}: anchor skewness {skew:.4f} < {cfg.skewness_min}")

    # perceptual visibility of the edit, recomputed from the stored stacks
    distances = []
    for view in (1, 2):
        cells = np.flatnonzero(regions[view].bits.ravel())
        if cells.size == 0:
            continue
        nb = _independent_unit_rows(_layer_rows(before[view], cfg.match_layer)[cells])
        na = _independent_unit_rows(_layer_rows(after[view], cfg.match_layer)[cells])
        distances.append(float(np.sqrt(((nb - na) ** 2).sum(axis=1)).mean()))
    if len(distances) == 2 and min(distances) < cfg.perceptual_min:
        problems.append(
            f"{sid}: perceptual distance {min(distances):.4f} < {cfg.perceptual_min}"
        )
    return problems


def cmd_validate(args: argparse.Namespace) -> int:
    problems: list[str] = []
    for kind, paths in (
        ("stack", args.stack),
        ("mask", args.mask),
        ("corr", args.corr),
        ("ckpt", args.ckpt),
    ):
        for path in paths or []:
            _validate_one(kind, path, problems)

    if args.pairs:
        from .store import load_pairs
        from .synth import SynthWorldConfig

        try:
            records = load_pairs(args.pairs)
            for record in records:
                if record.world:
                    SynthWorldConfig.from_json(record.world)
            print(f"ok pairs {args.pairs} ({len(records)} records)")
        except VsmatchError as exc:
            problems.append(f"pairs {args.pairs}: {exc}")

    if args.manifest:
        from .datagen import PipelineConfig
        from .store import load_manifest, read_corr, resolve_path

        manifest_path = Path(args.manifest)
        cfg = PipelineConfig.from_json(_section(_load_config(args.config), "pipeline"))
        try:
            records = load_manifest(manifest_path)
        except VsmatchError as exc:
            records = []
            problems.append(f"manifest {manifest_path}: {exc}")
        for record in records:
            try:
                read_corr(resolve_path(manifest_path, record.corr_path))
                sample_problems = (
                    _recheck_sample(record, manifest_path, cfg)
                    if args.recheck_filters
                    else []
                )
            except VsmatchError as exc:
                sample_problems = [f"{record.sample_id}: {exc}"]
            problems.extend(sample_problems)
        if records:
            checked = " with filter recheck" if args.recheck_filters else ""
            print(f"ok manifest {manifest_path} ({len(records)} samples{checked})")

    for line in problems:
        print(f"violation: {line}", file=sys.stderr)
    print(f"{len(problems)} violations")
    return 2 if problems else 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vsmatch", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="subcommand", metavar="subcommand")

    def common(p: argparse.ArgumentParser, seed_required: bool = False) -> None:
        p.add_argument("--config", help="JSON config file with per-module sections")
        p.add_argument("--threads", type=int, help="cap thread pools (1 = bit reproducible)")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
        if seed_required:
            p.add_argument("--seed", type=int, required=True, help="global random seed")

    p = sub.add_parser("synth-gen", help="generate synthetic consistent pairs")
    common(p, seed_required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, required=True, help="number of pairs")
    p.set_defaults(handler=cmd_synth_gen)

    p = sub.add_parser("pipeline", help="run the inconsistency pipeline over pairs")
    common(p, seed_required=True)
    p.add_argument("--pairs", required=True, help="pairs.jsonl from synth-gen")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--blend", type=float, default=1.0, help="edit strength in [0, 1]")
    p.set_defaults(handler=cmd_pipeline)

    p = sub.add_parser("train", help="train the two-branch aggregator")
    common(p, seed_required=True)
    p.add_argument("--manifest", required=True, help="samples.jsonl from pipeline")
    p.add_argument("--out", required=True, help="output directory for checkpoints")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--q", type=int)
    p.set_defaults(handler=cmd_train)

    def vsm_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--ckpt", required=True, help="trained checkpoint (.mtgp)")
        p.add_argument("--t-s", dest="t_s", type=float, help="semantic threshold")
        p.add_argument("--t-v", dest="t_v", type=float, help="visual threshold")
        p.add_argument("--direction", choices=["1to2", "2to1", "symmetric"])
        p.add_argument(
            "--full-grid",
            action="store_true",
            help="score every position instead of the subject masks",
        )

    p = sub.add_parser("vsm", help="score one stack pair or a whole manifest")
    common(p)
    vsm_flags(p)
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--pair", nargs=2, metavar=("A.mtgf", "B.mtgf"))
    mode.add_argument("--manifest", help="samples.jsonl to score")
    p.add_argument("--mask-1", dest="mask_1", help="subject mask for the first stack")
    p.add_argument("--mask-2", dest="mask_2", help="subject mask for the second stack")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--prefix", default="vsm", help="basename for pair-mode outputs")
    p.set_defaults(handler=cmd_vsm)

    p = sub.add_parser("evaluate", help="oracle correlations and histograms")
    common(p)
    vsm_flags(p)
    p.add_argument("--manifest", required=True, help="samples.jsonl to evaluate")
    p.add_argument("--out", required=True, help="output directory for the report")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("inspect-weights", help="dump per-layer branch weights as CSV")
    common(p)
    p.add_argument("--ckpt", required=True, help="checkpoint (.mtgp)")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(handler=cmd_inspect_weights)

    p = sub.add_parser("validate", help="re-check artifacts and manifest invariants")
    common(p)
    p.add_argument("--stack", action="append", help="MTGF file (repeatable)")
    p.add_argument("--mask", action="append", help="MTGM file (repeatable)")
    p.add_argument("--corr", action="append", help="MTGC file (repeatable)")
    p.add_argument("--ckpt", action="append", help="MTGP file (repeatable)")
    p.add_argument("--pairs", help="pairs.jsonl to check")
    p.add_argument("--manifest", help="samples.jsonl to check")
    p.add_argument(
        "--recheck-filters",
        action="store_true",
        help="recompute filter quantities from the artifacts",
    )
    p.set_defaults(handler=cmd_validate)

    return parser


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(sys.argv[1:] if argv is None else list(argv))
        if getattr(args, "subcommand", None) is None:
            raise UsageError(f"a subcommand is required\n{parser.format_usage().rstrip()}")
        _apply_threads(getattr(args, "threads", None))
        return args.handler(args)
    except SystemExit as exc:  # argparse --help
        return exc.code if isinstance(exc.code, int) else 0
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NonFiniteError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except (VsmatchError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
