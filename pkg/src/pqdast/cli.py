"""Command line entry point: ``pqdast <command> ...``."""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import torch


def _cmd_flip(args):
    from PIL import Image

    from .data import read_image
    from .flip import FlipParams, flip_heatmap, flip_map

    ref = torch.from_numpy(read_image(args.reference))
    test = torch.from_numpy(read_image(args.test))
    with torch.no_grad():
        m = flip_map(ref, test, FlipParams(ppd=args.ppd))
    print(f"{float(m.mean()):.4f}")
    if args.heatmap:
        Image.fromarray(flip_heatmap(m)).save(args.heatmap)


def _cmd_stylize(args):
    from .checkpoint import load_model
    from .inference import stylize_video

    model = load_model(args.checkpoint, encoder_weights=args.encoder)
    for path in stylize_video(args.content, args.style, model, args.out):
        print(path)


def _cmd_export(args):
    from .inference import export_model

    bundle = export_model(
        args.checkpoint, args.out, size=(args.height, args.width),
        style_size=(args.style_height or args.height, args.style_width or args.width),
        encoder_weights=args.encoder, opset=args.opset,
    )
    print(bundle.graph_path)


def _cmd_convert_colorspace(args):
    from .colorspace import linear_to_srgb, srgb_to_linear
    from .data import read_image, write_image

    fn = linear_to_srgb if args.to == "srgb" else srgb_to_linear
    src = Path(args.input)
    if src.suffix == ".npy":
        np.save(args.output, fn(np.load(src)))
    else:
        write_image(args.output, fn(read_image(src)))


def _cmd_evaluate(args):
    from .evaluation import evaluate_sequence, make_report, perceptual_net_from_spec
    from .flip import FlipParams

    result = evaluate_sequence(
        args.frames, args.flows, args.occlusions, perceptual_net_from_spec(args.perceptual),
        FlipParams(ppd=args.ppd), args.heatmaps, args.reference, args.style_name, args.scene_name,
    )
    rows = make_report([result], args.out)
    print(Path(args.out).with_suffix(".txt").read_text(), end="")
    return rows


def _cmd_train(args):
    from .training import TrainConfig, Trainer

    overrides = dict(kv.split("=", 1) for kv in args.set)
    overrides = {k.strip(): v.strip() for k, v in overrides.items()}
    cfg = TrainConfig.from_file(args.config, overrides) if args.config else TrainConfig.from_mapping(overrides)
    trainer = Trainer(cfg)
    if args.resume:
        trainer.resume(args.resume)
    print(trainer.run())


def _cmd_make_fixture(args):
    from .synthetic import write_style_fixture, write_video_fixture

    out = Path(args.out)
    write_video_fixture(out / "mini_sintel", args.frames, args.height, args.width)
    write_style_fixture(out / "styles")
    print(out)


def _cmd_convert_teacher(args):
    from .checkpoint import convert_sanet_weights

    print(convert_sanet_weights(args.transformer, args.decoder, args.out))


def build_parser():
    p = argparse.ArgumentParser(prog="pqdast", description="Distilled video style transfer toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("flip", help="FLIP error between two sRGB images")
    s.add_argument("--reference", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--ppd", type=float, default=67.0)
    s.add_argument("--heatmap", help="write a magma heatmap PNG here")
    s.set_defaults(fn=_cmd_flip)

    s = sub.add_parser("stylize", help="stylise an image or a directory of frames")
    s.add_argument("--content", required=True, help="image or directory of frames")
    s.add_argument("--style", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--encoder", help="VGG weights (needed unless the checkpoint used a surrogate)")
    s.set_defaults(fn=_cmd_stylize)

    s = sub.add_parser("export", help="export a checkpoint to ONNX")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--height", type=int, default=256)
    s.add_argument("--width", type=int, default=256)
    s.add_argument("--style-height", type=int)
    s.add_argument("--style-width", type=int)
    s.add_argument("--opset", type=int, default=18)
    s.add_argument("--encoder")
    s.set_defaults(fn=_cmd_export)

    s = sub.add_parser("convert-colorspace", help="sRGB <-> linear for PNG or .npy files")
    s.add_argument("--to", choices=("srgb", "linear"), required=True)
    s.add_argument("input")
    s.add_argument("output")
    s.set_defaults(fn=_cmd_convert_colorspace)

    s = sub.add_parser("evaluate", help="temporal metrics of a stylised sequence")
    s.add_argument("--frames", required=True)
    s.add_argument("--flows")
    s.add_argument("--occlusions")
    s.add_argument("--reference", help="original frames, for side-by-side temporal FLIP")
    s.add_argument("--out", required=True, help="report TSV")
    s.add_argument("--heatmaps")
    s.add_argument("--perceptual", default="surrogate:0",
                   help="'surrogate:<seed>', a VGG weight file, or 'none'")
    s.add_argument("--ppd", type=float, default=67.0)
    s.add_argument("--style-name", default="")
    s.add_argument("--scene-name", default="")
    s.set_defaults(fn=_cmd_evaluate)

    s = sub.add_parser("train", help="teacher or distillation training")
    s.add_argument("--config", help="key = value config file")
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    s.add_argument("--resume", help="checkpoint with training state")
    s.set_defaults(fn=_cmd_train)

    s = sub.add_parser("make-fixture", help="write the synthetic video/style fixture")
    s.add_argument("--out", required=True)
    s.add_argument("--frames", type=int, default=4)
    s.add_argument("--height", type=int, default=64)
    s.add_argument("--width", type=int, default=80)
    s.set_defaults(fn=_cmd_make_fixture)

    s = sub.add_parser("convert-teacher", help="convert SANet transformer/decoder weights")
    s.add_argument("--transformer", required=True)
    s.add_argument("--decoder", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=_cmd_convert_teacher)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.fn(args)
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
