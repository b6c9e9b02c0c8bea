"""Command-line entrypoint.

One subcommand per export op: feature extraction, subject and point
segmentation, inpainting, perceptual distance, and image embeddings, plus
``layer-table`` to print the decoder-layer numbering. Emits only the
interchange formats (MTGF/MTGM), PNG images, and CSV. Exit codes: 0 success,
1 usage, 2 anything wrong with images, models, or files.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from vsmatch import VsmatchError

from .errors import AdapterError


class UsageError(AdapterError):
    """Bad invocation: wrong flags, malformed arguments, refusing to
    overwrite."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage().rstrip()}")


def _guard_files(paths: list[Path], force: bool) -> None:
    if force:
        return
    for path in paths:
        if path.exists():
            raise UsageError(f"refusing to overwrite {path}; pass --force")


def _parse_layers(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise UsageError(f"--layers wants comma-separated integers, got {text!r}") from None


def _parse_point(text: str) -> tuple[int, int]:
    parts = text.split(",")
    try:
        x, y = (int(part) for part in parts)
    except ValueError:
        raise UsageError(f"--point wants X,Y pixel coordinates, got {text!r}") from None
    return x, y


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_extract(args: argparse.Namespace) -> int:
    from .extract import extract_features
    from .spec import ExtractionSpec

    spec = ExtractionSpec(
        image=args.image,
        backbone=args.backbone,
        timestep=args.timestep,
        layers=_parse_layers(args.layers),
        grid=args.grid,
        prompt=args.prompt,
    )
    dest = Path(args.out)
    _guard_files([dest], args.force)
    extract_features(spec, dest)
    print(f"wrote layers {','.join(map(str, spec.layers))} -> {dest}")
    return 0


def cmd_segment(args: argparse.Namespace) -> int:
    from vsmatch import write_mask

    from .segment import segment_subject

    dest = Path(args.out)
    _guard_files([dest], args.force)
    mask = segment_subject(args.image, prompt=args.prompt, grid=args.grid)
    dest.parent.mkdir(parents=True, exist_ok=True)
    write_mask(mask, dest)
    print(f"wrote subject mask ({mask.area} cells) -> {dest}")
    return 0


def cmd_segment_point(args: argparse.Namespace) -> int:
    from .segment import segment_point, write_masks

    prefix = Path(args.out_prefix)
    point = _parse_point(args.point)
    candidates = segment_point(args.image, point, grid=args.grid)
    expected = [
        prefix.parent / f"{prefix.name}_cand{i}.mtgm" for i in range(len(candidates))
    ]
    _guard_files(expected, args.force)
    paths = write_masks(candidates, prefix)
    for mask, path in zip(candidates, paths):
        print(f"wrote candidate mask ({mask.area} cells) -> {path}")
    return 0


def cmd_inpaint(args: argparse.Namespace) -> int:
    from .edits import inpaint

    dest = Path(args.out)
    _guard_files([dest], args.force)
    inpaint(args.image, args.mask, dest, prompt=args.prompt, seed=args.seed)
    print(f"wrote repainted image -> {dest}")
    return 0


def cmd_perceptual(args: argparse.Namespace) -> int:
    from .metrics import perceptual_distance

    value = perceptual_distance(args.a, args.b)
    print(f"{value:.9f}")
    if args.out is not None:
        dest = Path(args.out)
        _guard_files([dest], args.force)
        dest.parent.mkdir(parents=True, exist_ok=True)
        dest.write_text(f"crop_a,crop_b,distance\n{args.a},{args.b},{value:.9f}\n")
    return 0


def cmd_embed(args: argparse.Namespace) -> int:
    from .metrics import embed_image, write_embedding

    dest = Path(args.out)
    _guard_files([dest], args.force)
    vector = embed_image(args.image, model_id=args.model)
    write_embedding(vector, dest)
    print(f"wrote {vector.size}-dim embedding -> {dest}")
    return 0


def cmd_layer_table(args: argparse.Namespace) -> int:
    from .backbones import decoder_layer_table

    del args
    print("layer_id,decoder_location")
    for layer_id, location in decoder_layer_table().items():
        print(f"{layer_id},{location}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="extractor-adapter", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand")

    def add(name: str, handler, help_text: str) -> _Parser:
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(handler=handler)
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
        return p

    p = add("extract", cmd_extract, "export decoder features as an MTGF stack")
    p.add_argument("--image", required=True, help="input image file")
    p.add_argument("--out", required=True, help="destination .mtgf file")
    p.add_argument("--backbone", default="sd21", help="registered backbone name")
    p.add_argument("--layers", default="5,6,8", help="comma-separated decoder layer ids")
    p.add_argument("--timestep", type=int, default=0, help="diffusion timestep (0 = distilled single pass)")
    p.add_argument("--grid", type=int, default=48, help="output grid side length")
    p.add_argument("--prompt", default="", help="text conditioning for the extraction pass")

    p = add("segment", cmd_segment, "export the subject mask as MTGM")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="destination .mtgm file")
    p.add_argument("--prompt", default="", help="what to segment (model-backed segmenters)")
    p.add_argument("--grid", type=int, default=48)

    p = add("segment-point", cmd_segment_point, "export point-prompted candidate masks")
    p.add_argument("--image", required=True)
    p.add_argument("--point", required=True, help="X,Y pixel coordinates")
    p.add_argument("--out-prefix", required=True, help="candidates go to PREFIX_cand{0,1,2}.mtgm")
    p.add_argument("--grid", type=int, default=48)

    p = add("inpaint", cmd_inpaint, "repaint a masked region, write a PNG")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True, help="MTGM mask of the region to repaint")
    p.add_argument("--out", required=True, help="destination .png file")
    p.add_argument("--prompt", default="", help="conditioning for the repaint")
    p.add_argument("--seed", type=int, default=0)

    p = add("perceptual", cmd_perceptual, "multiscale perceptual distance of two crops")
    p.add_argument("--a", required=True, help="first crop image")
    p.add_argument("--b", required=True, help="second crop image")
    p.add_argument("--out", default=None, help="optional CSV destination")

    p = add("embed", cmd_embed, "export an image-level embedding as CSV")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="destination .csv file")
    p.add_argument("--model", default="moments-256", help="registered embedder name")

    add("layer-table", cmd_layer_table, "print the decoder-layer numbering as CSV")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(sys.argv[1:] if argv is None else list(argv))
        if getattr(args, "subcommand", None) is None:
            raise UsageError(f"a subcommand is required\n{parser.format_usage().rstrip()}")
        return args.handler(args)
    except SystemExit as exc:  # argparse --help
        return exc.code if isinstance(exc.code, int) else 0
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (AdapterError, VsmatchError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
