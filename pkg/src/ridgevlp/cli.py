"""Command-line entry point.

Every subcommand exits 0 on success.  On failure it prints one line
``E_<CODE>: message`` to stderr and exits 1 (2 for usage errors).
"""
import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import RidgeVLPError, UsageError

log = logging.getLogger("ridgevlp")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _floats(text: str):
    try:
        values = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None
    if not values:
        raise UsageError("expected at least one number")
    return values


def _ints(text: str):
    return tuple(int(v) for v in _floats(text))


def _run_config(args, extra=None):
    from .config import load_config

    overrides = list(args.set or [])
    if getattr(args, "mask_ratio", None) is not None:
        overrides.append(f"image_mask_ratio={args.mask_ratio}")
    for key, value in (extra or {}).items():
        if value is not None:
            overrides.append(f"{key}={value}")
    return load_config(args.config, overrides)


# -- subcommands --------------------------------------------------------------

def cmd_filter(args):
    from .imaging import load_image, save_image, save_raw_f64
    from .ridge import multiscale_response

    img = load_image(args.image, args.size)
    resp = multiscale_response(img, args.scales).data
    peak = float(resp.max())
    save_image(args.out, resp / peak if peak > 0 else resp)
    raw = Path(args.raw) if args.raw else Path(args.out).with_suffix(".f64")
    save_raw_f64(raw, resp)
    print(json.dumps({"image": str(args.out), "raw": str(raw), "shape": list(resp.shape),
                      "max": peak, "mean": float(resp.mean())}))


def cmd_mask(args):
    from .imaging import PatchGrid, load_image
    from .masking import apply_image_mask, filter_guided_mask, random_patch_mask
    from .plotting import plot_mask_panel
    from .ridge import multiscale_response

    img = load_image(args.image, args.size)
    grid = PatchGrid.for_shape(img.shape, args.patch_size)
    resp = multiscale_response(img, args.scales)
    if args.mode == "random":
        mask = random_patch_mask(grid, args.mask_ratio, args.seed)
    else:
        mask = filter_guided_mask(grid, resp, args.mask_ratio, args.seed)
    plot_mask_panel(img, apply_image_mask(img, mask, args.fill), resp.data, args.out)
    print(json.dumps({"out": str(args.out), "mode": args.mode, "masked": mask.indices.tolist(),
                      "num_patches": grid.num_patches}))


def cmd_manuscript(args):
    from .reports import convert_record, parse_record

    src = sys.stdin if args.input == "-" else open(args.input, encoding="utf-8")
    rows = []
    with src:
        for line in src:
            if line.strip():
                rows.append(json.dumps(convert_record(parse_record(line), args.format)))
    text = "".join(r + "\n" for r in rows)
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text, encoding="utf-8")


def cmd_synth(args):
    from .synth import synth_dataset

    path = synth_dataset(args.n, args.seed, args.out, args.size)
    print(str(path))


def cmd_pretrain(args):
    from .train import loss_reduction, pretrain

    cfg = _run_config(args, {"data": args.data, "out_dir": args.out})
    state = pretrain(cfg, resume=args.resume, figures=not args.no_figures)
    summary = {"out_dir": cfg.out_dir, "steps": state.step, "config_hash": cfg.hash}
    if len(state.log_rows) >= 20:
        summary["loss_ratio"] = loss_reduction(state.log_rows)
    print(json.dumps(summary))


def cmd_eval(args):
    from .data import load_studies
    from .evaluate import eval_retrieval
    from .train import load_model

    if args.config is None:
        saved = Path(args.checkpoint).parent / "config.txt"
        args.config = str(saved) if saved.exists() else None
    cfg = _run_config(args)
    params, mcfg, vocab = load_model(args.checkpoint, cfg)
    out = eval_retrieval(params, mcfg, vocab, load_studies(args.data, cfg), cfg, args.k)
    print(json.dumps(out))


def cmd_ablate(args):
    from .ablation import ablate

    cfg = _run_config(args)
    ratios = args.mask_ratios if args.axis == "masking" else None
    res = ablate(cfg, args.axis, args.train, args.eval, seeds=args.seeds, k=args.k,
                 arms=args.arms, mask_ratios=ratios, out_dir=args.out,
                 figures=not args.no_figures)
    sys.stdout.write(res.table())


# -- parser -----------------------------------------------------------------------

def _add_config(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (repeatable)")


def build_parser():
    parser = _Parser(prog="ridgevlp", description="Ridge-filter guided masked vision-language "
                     "pre-training at desk scale.")
    common = _Parser(add_help=False)
    common.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    add = sub.add_parser

    def add_parser(name, **kw):
        return add(name, parents=[common], **kw)

    sub.add_parser = add_parser

    p = sub.add_parser("filter", help="multi-scale ridge response of one image")
    p.add_argument("image")
    p.add_argument("-o", "--out", required=True, help="8-bit response image (.png or .pgm)")
    p.add_argument("--raw", help="float64 dump path (default: OUT with suffix .f64)")
    p.add_argument("--scales", type=_floats, default=(1.0, 2.0, 4.0))
    p.add_argument("--size", type=int, default=None, help="resize to SIZE x SIZE first")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("mask", help="original | masked | response panel as PNG")
    p.add_argument("image")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--mode", choices=("random", "filter_guided"), default="filter_guided")
    p.add_argument("--mask-ratio", type=float, default=0.75)
    p.add_argument("--patch-size", type=int, default=8)
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--scales", type=_floats, default=(1.0, 2.0, 4.0))
    p.add_argument("--fill", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("manuscript", help="triplet JSONL to report JSONL")
    p.add_argument("input", help="JSONL file or - for stdin")
    p.add_argument("-o", "--out", help="output JSONL (default stdout)")
    p.add_argument("--format", choices=("manuscript", "triplet_string", "passthrough"),
                   default="manuscript")
    p.set_defaults(func=cmd_manuscript)

    p = sub.add_parser("synth", help="write a synthetic image/report dataset")
    p.add_argument("-n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--size", type=int, default=32)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="train and write checkpoint, loss log and figure")
    _add_config(p)
    p.add_argument("--data", help="studies JSONL (overrides config key data)")
    p.add_argument("--out", help="output directory (overrides config key out_dir)")
    p.add_argument("--mask-ratio", type=float)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("eval", help="held-out image-text retrieval recall@k")
    _add_config(p)
    p.add_argument("checkpoint")
    p.add_argument("--data", required=True, help="held-out studies JSONL")
    p.add_argument("-k", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="A/B runs along the masking or report axis")
    _add_config(p)
    p.add_argument("--axis", choices=("masking", "report"), required=True)
    p.add_argument("--train", required=True, help="training studies JSONL")
    p.add_argument("--eval", required=True, help="held-out studies JSONL")
    p.add_argument("--arms", type=lambda s: tuple(a.strip() for a in s.split(",") if a.strip()))
    p.add_argument("--seeds", type=_ints, default=(0, 1, 2))
    p.add_argument("--mask-ratios", type=_floats, default=(0.5, 0.75),
                   help="swept on the masking axis")
    p.add_argument("-k", type=int, default=1)
    p.add_argument("-o", "--out", default="runs/ablation")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_ablate)
    return parser


def _one_line(text: str) -> str:
    return " ".join(str(text).split())


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                            format="%(message)s", stream=sys.stderr)
        args.func(args)
    except UsageError as e:
        print(f"{e.code}: {_one_line(e)}", file=sys.stderr)
        return 2
    except RidgeVLPError as e:
        print(f"{e.code}: {_one_line(e)}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"E_IO: {_one_line(e)}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
