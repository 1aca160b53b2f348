"""Command-line driver.

Exit codes: 0 success, 2 input error, 3 corrupted stream or weights file,
4 evaluation-domain error (e.g. RD curves that do not overlap).
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
import time
from pathlib import Path

import numpy as np

from .bitstream import load_weights, read_header, save_weights
from .codec import MODES, WeightsMismatchError, decode_stream, encode_clip
from .coding import CorruptStreamError
from .config import ConfigError, RunConfig, load_config
from .metrics import NoOverlapError, append_rd_point, bd_rate, bpp, psnr_rgb, rate_report, read_rd_csv
from .models.gop import gop_plan
from .synthetic import KINDS, make_clip
from .train import train_global
from .video import VideoClip, VideoFormatError, ingest_video, pad_to_multiple, read_frame_dir, write_frame_dir, write_y4m

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CORRUPT = 3
EXIT_DOMAIN = 4


class InputError(Exception):
    pass


class DomainError(Exception):
    pass


def _load_clip(path: str, subsample: int = 1) -> VideoClip:
    clip = ingest_video(path)
    return clip.subsample(subsample) if subsample > 1 else clip


def _config(args) -> RunConfig:
    return load_config(getattr(args, "config", None))


def _fmt_gop(g: int) -> str:
    return "inf" if g == 0 else str(g)


def _print_rate_report(data: bytes) -> None:
    report = rate_report(data)
    for part, frac in report.fractions.items():
        print(f"  {part:16s} {report.bits[part]:10d} bits  {100 * frac:7.3f}%")
    print(f"  {'container':16s} {report.overhead_bits:10d} bits")


# ---------------------------------------------------------------------------
# commands


def _training_clips(path: Path) -> list[np.ndarray]:
    if not path.is_dir():
        raise InputError(f"{path}: training clip directory not found")
    sources = sorted(p for p in path.iterdir() if p.suffix == ".y4m" or p.is_dir())
    if not sources:
        raise InputError(f"{path}: no .y4m files or frame directories found")
    return [pad_to_multiple(ingest_video(p).frames)[0] for p in sources]


def cmd_train_global(args) -> int:
    config = _config(args)
    clips = _training_clips(Path(args.clips))
    cfg = config.training
    if args.steps is not None:
        cfg = dataclasses.replace(cfg, steps=args.steps)
    print(f"training {config.arch} on {len(clips)} clips for {cfg.iframe_steps} + {cfg.steps} steps", flush=True)
    model, losses = train_global(clips, config.arch_config, cfg, log_every=args.log_every)
    size = save_weights(model, args.out)
    if losses:
        window = max(1, min(25, len(losses) // 4))
        print(f"rd_loss first {losses[0]:.6f}  final (mean of last {window}) {np.mean(losses[-window:]):.6f}")
    print(f"wrote {args.out} ({size} bytes)")
    return EXIT_OK


def cmd_encode(args) -> int:
    config = _config(args)
    model = load_weights(args.weights)
    clip = _load_clip(args.input, config.subsample)
    settings = config.codec_settings(args.mode)
    t0 = time.perf_counter()
    result = encode_clip(clip.frames, model, settings)
    Path(args.out).write_bytes(result.data)
    print(f"encoded {clip.num_frames} frames {clip.width}x{clip.height} mode={args.mode} gop={_fmt_gop(config.gop_size)} "
          f"in {time.perf_counter() - t0:.1f}s")  # fmt: skip
    print(f"bytes {len(result.data)}  bpp {result.bpp:.6f}  psnr {psnr_rgb(clip.frames, result.recon):.3f} dB  loss {result.loss:.6f}")
    print("rate report:")
    _print_rate_report(result.data)
    if result.report is not None:
        csv_path = Path(args.report) if args.report else Path(str(args.out) + ".csv")
        result.report.write_csv(csv_path)
        best = result.report.best()
        print(f"finetune best step {best.step} total {best.total_loss:.6f}{'  (diverged)' if result.report.diverged else ''}")
        print(f"finetune report {csv_path}")
    if args.recon:
        write_frame_dir(result.recon, args.recon)
    return EXIT_OK


def cmd_decode(args) -> int:
    model = load_weights(args.weights)
    data = Path(args.input).read_bytes()
    result = decode_stream(data, model)
    write_frame_dir(result.frames, args.out)
    h = result.header
    print(f"decoded {h.num_frames} frames {h.width}x{h.height} to {args.out}")
    print(f"update decode {result.update_seconds:.3f}s" if h.has_updates else "no update section")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _config(args)
    k = args.subsample or config.subsample
    original = _load_clip(args.original, k)
    data = None
    if args.stream:
        data = Path(args.stream).read_bytes()
    if args.decoded:
        decoded = read_frame_dir(args.decoded).frames
    else:
        if args.weights is None:
            raise InputError("eval needs --decoded frames or --weights to decode/encode")
        model = load_weights(args.weights)
        if data is None:
            gop = config.gop_size if args.gop is None else args.gop
            settings = config.replace(gop_size=gop).codec_settings(args.mode)
            data = encode_clip(original.frames, model, settings).data
        decoded = decode_stream(data, model).frames
    if decoded.shape != original.frames.shape:
        raise DomainError(f"decoded clip {decoded.shape} does not match the original {original.frames.shape} (subsample {k})")
    psnr = psnr_rgb(original.frames, decoded)
    print(f"frames {original.num_frames} (subsample {k})")
    if data is not None:
        header = read_header(data)
        intra = sum(e.kind == "I" for e in gop_plan(header.num_frames, header.gop_size))
        rate = bpp(8 * len(data), original.num_frames, original.width, original.height)
        print(f"gop {_fmt_gop(header.gop_size)}  I-frames {intra}")
        print(f"bpp {rate:.6f}  psnr {psnr:.3f} dB")
        if args.csv:
            if not np.isfinite(psnr):
                raise DomainError("lossless reconstruction: PSNR is infinite, no RD point written")
            append_rd_point(args.csv, args.label, rate, psnr)
            print(f"appended RD point to {args.csv}")
    else:
        print(f"psnr {psnr:.3f} dB (no stream given, bpp unknown)")
    return EXIT_OK


def _pick_curve(path: str, label: str | None):
    curves = read_rd_csv(path)
    if label is not None:
        if label not in curves:
            raise InputError(f"{path}: no curve labelled {label!r} (have {sorted(curves)})")
        return curves[label]
    if len(curves) != 1:
        raise InputError(f"{path}: holds {len(curves)} curves, pick one with a label option")
    return next(iter(curves.values()))


def cmd_bdrate(args) -> int:
    ref = _pick_curve(args.reference, args.ref_label)
    test = _pick_curve(args.test, args.test_label)
    try:
        value = bd_rate(ref, test)
    except NoOverlapError:
        raise
    except ValueError as exc:  # too few points, repeated PSNR values
        raise DomainError(str(exc)) from exc
    print(f"BD-rate {test.label} vs {ref.label}: {value:.4f}%")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plots import plot_rate_bars, plot_rd_curves

    if args.kind == "rd":
        curves = [c for path in args.inputs for c in read_rd_csv(path).values()]
        plot_rd_curves(curves, args.out)
    else:
        reports = {Path(p).name: rate_report(Path(p).read_bytes()) for p in args.inputs}
        plot_rate_bars(reports, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_make_synthetic(args) -> int:
    clip = make_clip(args.kind, args.frames, (args.height, args.width), args.seed)
    out = Path(args.out)
    if out.suffix == ".y4m":
        write_y4m(clip, out)
    else:
        write_frame_dir(clip.frames, out)
    print(f"wrote {clip.num_frames} frames {clip.width}x{clip.height} to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def _gop_arg(value: str) -> int:
    if value.lower() in ("inf", "0"):
        return 0
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("gop must be a positive integer or inf")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="instacodec", description="Instance-adaptive neural video codec.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-global", help="train a global model and write a .wts file")
    p.add_argument("--clips", required=True, help="directory of .y4m files and/or PPM frame directories")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--steps", type=int, help="override train_steps")
    p.add_argument("--log-every", type=int, default=50)
    p.set_defaults(func=cmd_train_global)

    p = sub.add_parser("encode", help="encode a clip to an .insa stream")
    p.add_argument("--weights", required=True)
    p.add_argument("--input", required=True, help=".y4m file or PPM frame directory")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--mode", choices=MODES, default="insta")
    p.add_argument("--report", help="finetune CSV path (default: <out>.csv)")
    p.add_argument("--recon", help="also write the encoder-side reconstruction here")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decode an .insa stream to PPM frames")
    p.add_argument("--weights", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="PSNR and bpp of a decoded or freshly encoded clip")
    p.add_argument("--original", required=True)
    p.add_argument("--decoded", help="PPM frame directory to compare against")
    p.add_argument("--stream", help=".insa stream (for bpp, or to decode)")
    p.add_argument("--weights")
    p.add_argument("--config")
    p.add_argument("--mode", choices=MODES, default="global")
    p.add_argument("--subsample", type=int, help="keep every k-th original frame")
    p.add_argument("--gop", type=_gop_arg, help="GoP size for a fresh encode (integer or inf)")
    p.add_argument("--csv", help="append label,bpp,psnr here")
    p.add_argument("--label", default="run")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bdrate", help="BD-rate of a test curve against a reference curve")
    p.add_argument("reference")
    p.add_argument("test")
    p.add_argument("--ref-label")
    p.add_argument("--test-label")
    p.set_defaults(func=cmd_bdrate)

    p = sub.add_parser("plot", help="SVG charts")
    p.add_argument("kind", choices=("rd", "rates"))
    p.add_argument("inputs", nargs="+", help="RD CSV files (rd) or .insa streams (rates)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("make-synthetic", help="render a procedural test clip")
    p.add_argument("--kind", choices=KINDS, default="blobs")
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help=".y4m path or output directory")
    p.set_defaults(func=cmd_make_synthetic)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CorruptStreamError as exc:
        print(f"error: corrupted input: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except (NoOverlapError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except (InputError, FileNotFoundError, IsADirectoryError, VideoFormatError, ConfigError, WeightsMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
