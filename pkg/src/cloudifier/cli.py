"""Command-line entry point: gen-data, train, eval, infer.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import colorsys
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import io as cfio
from .augment import AugmentPolicy, expand_dataset
from .errors import BuildError, FormatError, NumericError, ShapeError
from .metrics import evaluate
from .network import VARIANTS, build_network, variant_config
from .synth.scene import DEFAULT_COUNT, DEFAULT_SIZE, ScenePolicy, iter_observations
from .synth.taxonomy import COARSE_NAMES, NUM_COARSE, num_classes, taxonomy
from .training import SplitSpec, TrainConfig, infer_logits, split_dataset, train_loop

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive(text):
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _fraction(text):
    value = float(text)
    if not 0.0 <= value < 1.0:
        raise argparse.ArgumentTypeError(f"expected a fraction in [0, 1), got {text}")
    return value


def _non_negative_float(text):
    value = float(text)
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative number, got {text}")
    return value


def batch_paths(out: str, count: int) -> list:
    """``out`` itself for one meta-batch, else ``stem-000.ext``, ``stem-001.ext``..."""
    if count == 1:
        return [out]
    stem, ext = os.path.splitext(out)
    return [f"{stem}-{k:03d}{ext}" for k in range(count)]


# ---------------------------------------------------------------- gen-data


def cmd_gen_data(args) -> int:
    classes = num_classes(args.granularity, args.classes)
    policy = ScenePolicy(max_coarse=args.classes)
    for k, path in enumerate(batch_paths(args.out, args.meta_batches)):
        t0 = time.time()
        stream = iter_observations(
            args.obs, args.theme, args.granularity, args.seed, args.size, policy, workers=args.workers, start=k * args.obs
        )
        cfio.write_dataset(path, stream, args.obs, args.size, classes, args.granularity, args.theme, args.seed)
        print(f"wrote {path}: {args.obs} observations {args.size}x{args.size}x3, {classes} {args.granularity} classes ({time.time() - t0:.1f}s)")
    return EXIT_OK


# ---------------------------------------------------------------- train


def load_datasets(paths) -> tuple:
    """Read and concatenate dataset files that agree on size and label space."""
    observations, first = [], None
    for path in paths:
        header = cfio.read_dataset_header(path)
        if first is None:
            first = (path, header)
        else:
            ref_path, ref = first
            for field in ("height", "width", "num_classes", "granularity"):
                if getattr(header, field) != getattr(ref, field):
                    raise FormatError(
                        f"{path}: field {field}={getattr(header, field)} differs from {ref_path} ({getattr(ref, field)})"
                    )
        observations.extend(cfio.iter_dataset(path))
    return observations, first[1]


def _augment_policy(args, crop: int) -> AugmentPolicy:
    policy = AugmentPolicy.load(args.augment_policy) if args.augment_policy else AugmentPolicy(crop=crop)
    overrides = {
        "rotation_range": args.aug_rotation,
        "shift_range": args.aug_shift,
        "channel_shift_range": args.aug_channel_shift,
        "flip_probability": args.aug_flip_probability,
        "rescale_min": args.aug_rescale_min,
        "rescale_max": args.aug_rescale_max,
        "crop": args.aug_crop,
        "expansion_factor": args.aug_factor,
        "augment_artificial": args.aug_artificial,
        "augment_natural": args.aug_natural,
    }
    policy = replace(policy, **{k: v for k, v in overrides.items() if v is not None})
    if args.aug_no_flip:
        policy = replace(policy, flip=False)
    policy.validate()
    return policy


def cmd_train(args) -> int:
    observations, header = load_datasets(args.data)
    config = variant_config(args.variant, header.num_classes)
    if header.height % config.max_downsample or header.width % config.max_downsample:
        raise FormatError(
            f"{args.data[0]}: field H x W = {header.height}x{header.width} is not a multiple of "
            f"{config.max_downsample}, required by {args.variant}"
        )
    train, test, dev = split_dataset(observations, SplitSpec(seed=args.seed))
    print(f"split: {len(train)} train / {len(test)} test / {len(dev)} dev")
    if args.augment or args.augment_policy:
        policy = _augment_policy(args, min(header.height, header.width))
        if policy.crop % config.max_downsample:
            raise FormatError(f"augmentation crop {policy.crop} is not a multiple of {config.max_downsample}")
        train = expand_dataset(train, policy, seed=args.seed)
        print(f"augmented train partition to {len(train)} samples (factor {policy.expansion_factor})")
    weights = None
    if args.background_weight is not None:
        weights = np.ones(header.num_classes)
        weights[0] = args.background_weight
    tcfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        lr=args.lr,
        loss=args.loss,
        focal_gamma=args.focal_gamma,
        class_weights=weights,
        seed=args.seed,
        patience=args.patience,
        min_delta=args.min_delta,
        lr_floor=args.lr_floor,
        monitor=args.monitor,
        holdout=args.holdout,
    )
    net = build_network(config, seed=args.seed)

    def report(row):
        epoch, train_loss, dev_loss, lr = row
        dev_text = "-" if dev_loss is None else f"{dev_loss:.5f}"
        print(f"epoch {epoch:3d}  train {train_loss:.5f}  dev {dev_text}  lr {lr:.3g}", flush=True)

    net, history = train_loop(net, train, dev, tcfg, on_epoch=report)
    cfio.save_checkpoint(net, args.ckpt)
    print(f"wrote checkpoint {args.ckpt}")
    if args.history:
        history.to_csv(args.history)
        figure = os.path.splitext(args.history)[0] + ".png"
        if history.rows:
            from .plotting import plot_loss_history

            plot_loss_history(history.rows, figure)
            print(f"wrote {args.history} and {figure}")
        else:
            print(f"wrote {args.history}")
    return EXIT_OK


# ---------------------------------------------------------------- eval


def class_names(granularity: str, count: int) -> list:
    if granularity == "coarse":
        return list(COARSE_NAMES[:count])
    return [c.name for c in taxonomy()[:count]]


def cmd_eval(args) -> int:
    net = cfio.load_checkpoint(args.ckpt)
    observations, header = load_datasets(args.data)
    if header.num_classes != net.num_classes:
        raise FormatError(
            f"{args.data[0]}: field num_classes={header.num_classes} does not match the checkpoint's {net.num_classes}"
        )
    if args.split != "all":
        train, test, dev = split_dataset(observations, SplitSpec(seed=args.seed))
        observations = {"train": train, "test": test, "dev": dev}[args.split]
    report = evaluate(net, observations, header.granularity, batch_size=args.batch)
    print(report.table())
    if args.report:
        with cfio.atomic_write(args.report) as fh:
            fh.write(report.to_json().encode("utf-8"))
        figure = os.path.splitext(args.report)[0] + "-confusion.png"
        from .plotting import plot_confusion

        plot_confusion(report.confusion, figure, class_names(header.granularity, header.num_classes))
        print(f"wrote {args.report} and {figure}")
    return EXIT_OK


# ---------------------------------------------------------------- infer


def class_colors(count: int) -> np.ndarray:
    """Fixed palette: black background, then evenly spaced golden-ratio hues."""
    colors = [(0, 0, 0)]
    for k in range(1, count):
        r, g, b = colorsys.hsv_to_rgb((k * 0.618033988749895) % 1.0, 0.85, 0.95)
        colors.append((round(r * 255), round(g * 255), round(b * 255)))
    return np.asarray(colors, dtype=np.uint8)


def overlay(image: np.ndarray, labels: np.ndarray, count: int) -> np.ndarray:
    """50% blend of the per-class colour over the image."""
    colors = class_colors(count)[labels].astype(np.uint16)
    return ((image.astype(np.uint16) + colors + 1) // 2).astype(np.uint8)


def pad_to_multiple(image: np.ndarray, multiple: int, mode: str = "reflect"):
    h, w = image.shape[:2]
    ph, pw = (-h) % multiple, (-w) % multiple
    if ph == 0 and pw == 0:
        return image
    if mode == "none":
        raise ShapeError(f"image height and width must be multiples of {multiple} (use --pad reflect)", image.shape)
    # reflect needs the pad to be smaller than the side; fall back to edge-symmetric otherwise
    np_mode = "reflect" if ph < h and pw < w else "symmetric"
    return np.pad(image, ((0, ph), (0, pw), (0, 0)), mode=np_mode)


def cmd_infer(args) -> int:
    from PIL import Image, UnidentifiedImageError

    net = cfio.load_checkpoint(args.ckpt)
    try:
        with Image.open(args.image) as im:
            image = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, UnidentifiedImageError) as err:
        raise FormatError(f"{args.image}: cannot read image ({err})") from err
    h, w = image.shape[:2]
    padded = pad_to_multiple(image, net.max_downsample, args.pad)
    logits = infer_logits(net, padded[None])[0, :h, :w]
    labels = logits.argmax(axis=-1).astype(np.uint16)
    if args.labels_out:
        with cfio.atomic_write(args.labels_out) as fh:
            fh.write(labels.astype("<u2").tobytes())
    if args.logits_out:
        with cfio.atomic_write(args.logits_out) as fh:
            fh.write(np.ascontiguousarray(logits, dtype="<f4").tobytes())
    if args.overlay_out:
        Image.fromarray(overlay(image, labels, net.num_classes)).save(args.overlay_out)
    counts = np.bincount(labels.ravel(), minlength=net.num_classes)
    print(f"{args.image}: {h}x{w}, {net.num_classes} classes")
    for k in np.nonzero(counts)[0]:
        print(f"  class {k:3d}: {counts[k] / labels.size:7.2%}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cloudifier", description="Dense UI-widget segmentation: data, training, evaluation, inference.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="render synthetic meta-batches to dataset files")
    g.add_argument("--out", required=True, help="output file (one meta-batch) or name stem")
    g.add_argument("--meta-batches", type=_positive, default=1)
    g.add_argument("--obs", type=_positive, default=DEFAULT_COUNT, help="observations per meta-batch")
    g.add_argument("--size", type=_positive, default=DEFAULT_SIZE, help="square side in pixels")
    g.add_argument("--theme", choices=("win95", "win98", "winxp", "sketch", "mixed"), default="mixed")
    g.add_argument("--granularity", choices=("coarse", "fine"), default="coarse")
    g.add_argument("--classes", type=int, choices=range(2, NUM_COARSE + 1), default=NUM_COARSE, metavar="N",
                   help="use only the first N coarse classes (2..11)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--workers", type=_positive, default=1, help="render processes")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a network on dataset files")
    t.add_argument("--data", nargs="+", required=True)
    t.add_argument("--variant", choices=VARIANTS, default="cloudifier50")
    t.add_argument("--batch", type=_positive, default=32)
    t.add_argument("--lr", type=_non_negative_float, default=0.01)
    t.add_argument("--loss", choices=("nll", "focal"), default="nll")
    t.add_argument("--focal-gamma", type=_non_negative_float, default=2.0)
    t.add_argument("--background-weight", type=_non_negative_float, default=None,
                   help="loss weight of class 0 (others stay 1)")
    t.add_argument("--epochs", type=int, default=10)
    t.add_argument("--patience", type=_positive, default=3, help="plateau epochs before the rate is halved")
    t.add_argument("--min-delta", type=_non_negative_float, default=1e-3)
    t.add_argument("--lr-floor", type=_non_negative_float, default=1e-5)
    t.add_argument("--monitor", choices=("dev", "train"), default="dev", help="loss that drives the plateau schedule")
    t.add_argument("--holdout", type=_fraction, default=0.0, help="random share of the train partition scored as dev (e.g. 0.05)")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--augment", action="store_true", help="expand the train partition with the default policy")
    t.add_argument("--augment-policy", help="key=value policy file (implies --augment)")
    t.add_argument("--aug-rotation", type=_non_negative_float)
    t.add_argument("--aug-shift", type=_non_negative_float)
    t.add_argument("--aug-channel-shift", type=int)
    t.add_argument("--aug-no-flip", action="store_true")
    t.add_argument("--aug-flip-probability", type=_non_negative_float)
    t.add_argument("--aug-rescale-min", type=float)
    t.add_argument("--aug-rescale-max", type=float)
    t.add_argument("--aug-crop", type=_positive)
    t.add_argument("--aug-factor", type=_positive)
    t.add_argument("--aug-artificial", action=argparse.BooleanOptionalAction, default=None)
    t.add_argument("--aug-natural", action=argparse.BooleanOptionalAction, default=None)
    t.add_argument("--ckpt", required=True, help="checkpoint output path")
    t.add_argument("--history", help="loss-history CSV (a PNG curve is written next to it)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on dataset files")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", nargs="+", required=True)
    e.add_argument("--split", choices=("all", "train", "test", "dev"), default="all")
    e.add_argument("--seed", type=int, default=0, help="split seed (must match training)")
    e.add_argument("--batch", type=_positive, default=8)
    e.add_argument("--report", help="JSON report path (a confusion-matrix PNG is written next to it)")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="dense prediction for one image")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--image", required=True)
    i.add_argument("--labels-out", help="raw little-endian u16 class map, H*W values")
    i.add_argument("--logits-out", help="raw little-endian float32 logits, H*W*C values")
    i.add_argument("--overlay-out", help="image with class colours blended at 50%%")
    i.add_argument("--pad", choices=("reflect", "none"), default="reflect",
                   help="how to reach a size divisible by the network's downsample factor")
    i.set_defaults(func=cmd_infer)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericError as err:
        print(f"cloudifier: numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, ShapeError, BuildError, ValueError, OSError) as err:
        print(f"cloudifier: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
