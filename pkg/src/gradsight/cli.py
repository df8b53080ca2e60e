"""``gradsight`` command line.

Exit codes: 0 success, 1 usage or input error, 2 internal invariant violated.
The default seed is 42, overridable with the ``GRADSIGHT_SEED`` variable.
"""

from __future__ import annotations

import argparse
import copy
import os
import sys
from pathlib import Path

import numpy as np

from gradsight import classviz, data, deconv, modelio, network, pnm
from gradsight import saliency as sal
from gradsight.segment import InvariantError, SegmentConfig, localize


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def default_seed() -> int:
    raw = os.environ.get("GRADSIGHT_SEED")
    if raw is None:
        return 42
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"GRADSIGHT_SEED must be an integer, got {raw!r}") from None


def _seed(args) -> int:
    return args.seed if args.seed is not None else default_seed()


def _load_model(path):
    try:
        return modelio.load_model(path)
    except FileNotFoundError:
        raise UsageError(f"model file not found: {path}") from None
    except modelio.ModelFormatError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _load_image(net, path):
    try:
        img = pnm.read_image(path)
    except FileNotFoundError:
        raise UsageError(f"image file not found: {path}") from None
    except pnm.PNMError as exc:
        raise UsageError(f"{path}: {exc}") from None
    if img.shape != net.input_shape:
        raise UsageError(f"{path}: image shape {img.shape} does not match model input {net.input_shape}")
    return img


def _check_class(net, class_id):
    if not 0 <= class_id < net.num_classes:
        raise UsageError(f"class {class_id} out of range for {net.num_classes} classes")


def export_range(values: np.ndarray) -> np.ndarray:
    """Map to [0, 1] by min-max over the values' range widened to include [0, 1].

    Images already inside the pixel range export unchanged; larger ranges are
    compressed linearly.
    """
    lo = min(float(values.min()), 0.0)
    hi = max(float(values.max()), 1.0)
    return (values - lo) / (hi - lo)


def _as_channels(image: np.ndarray, out: Path) -> np.ndarray:
    if out.suffix.lower() == ".pgm" and image.shape[0] != 1:
        return image.mean(axis=0, keepdims=True)
    if out.suffix.lower() == ".ppm" and image.shape[0] == 1:
        return np.repeat(image, 3, axis=0)
    return image


def cmd_synth_data(args):
    if args.n < 0:
        raise UsageError("--n must be >= 0")
    ds = data.synth_dataset(args.n, args.size, _seed(args))
    data.save_dataset(ds, args.out)
    print(f"wrote {len(ds)} images to {args.out}")


def cmd_train(args):
    if args.epochs < 0:
        raise UsageError("--epochs must be >= 0")
    try:
        ds = data.load_dataset(args.data)
    except (FileNotFoundError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    if len(ds) == 0:
        raise UsageError(f"dataset {args.data} is empty")
    seed = _seed(args)
    net = network.reference_network(
        len(ds.class_names),
        ds.images.shape[1:],
        seed=seed,
        mean_image=ds.images.mean(axis=0),
        class_names=ds.class_names,
    )
    cfg = network.TrainConfig(args.lr, args.momentum, args.epochs, args.batch, seed)
    net = network.train_sgd(
        net,
        ds.images,
        ds.labels,
        cfg,
        on_epoch=lambda e, loss, acc: print(f"epoch {e} loss {loss:.6f} acc {acc:.4f}", flush=True),
    )
    modelio.save_model(net, args.out)


def cmd_class_image(args):
    net = _load_model(args.model)
    _check_class(net, args.class_id)
    try:
        cfg = classviz.VizConfig(
            lam=args.lam, steps=args.steps, step_size=args.lr, momentum=args.momentum, seed=_seed(args)
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    image, trace = classviz.synthesize_class_image(net, args.class_id, cfg)
    out = Path(args.out)
    shown = export_range(classviz.display_image(net, image))
    pnm.write_image(out, _as_channels(shown, out))
    if args.trace:
        lines = [f"{k},{v:.9g}" for k, v in enumerate(trace)]
        out.with_suffix(".csv").write_text("\n".join(lines) + "\n")


def cmd_saliency(args):
    if args.class_id is not None and args.top1:
        raise UsageError("--class and --top1 are mutually exclusive")
    net = _load_model(args.model)
    x = net.preprocess(_load_image(net, args.image))
    if args.class_id is None:
        class_id = sal.top1_class(net, x)
        print(f"class {class_id} {net.class_name(class_id)}")
    else:
        class_id = args.class_id
        _check_class(net, class_id)
    _, h, w = x.shape
    crops = sal.CropSpec.ten_crop(h, w) if args.crops == 10 else sal.CropSpec.single(h, w)
    smap = sal.multicrop_saliency(net, x, class_id, crops, image_id=str(args.image))
    pnm.write_image(args.out, pnm.normalize(smap.values)[None])
    if args.raw:
        Path(args.raw).write_bytes(np.ascontiguousarray(smap.values, dtype="<f4").tobytes())


def cmd_localize(args):
    net = _load_model(args.model)
    image = _load_image(net, args.image)
    if not 0 < args.bg_q < args.fg_q < 1:
        raise UsageError(f"need 0 < --bg-q < --fg-q < 1, got {args.bg_q} and {args.fg_q}")
    if not 1 <= args.topk <= net.num_classes:
        raise UsageError(f"--topk must be in [1, {net.num_classes}]")
    cfg = SegmentConfig(
        fg_q=args.fg_q, bg_q=args.bg_q, gamma=args.gamma, crops=args.crops, seed=_seed(args)
    )
    detections = localize(net, image, args.topk, cfg)
    Path(args.out_boxes).write_text("".join(d.line() + "\n" for d in detections))
    if args.out_mask:
        pnm.write_image(args.out_mask, detections[0].mask[None].astype(np.float32))
    for d in detections:
        print(d.line())


def cmd_check_deconv(args):
    net = _load_model(args.model)
    _check_class(net, args.class_id)
    x = net.preprocess(_load_image(net, args.image))
    net64 = net.astype(np.float64)
    _, trace = network.forward(net64, x)
    seed, top = deconv.neuron_seed(trace, None, args.class_id)
    g = deconv.grad_reconstruct(net64, trace, seed, top)
    dtrace = trace
    if args.corrupt_trace:
        dtrace = _corrupt(trace)
    d = deconv.deconv_reconstruct(net64, dtrace, seed, top)
    report = deconv.compare(g, d)
    sys.stdout.write(report.to_text())
    if not report.ok:
        raise InvariantError("DeconvNet and gradient rules disagree outside ReLU mask differences")


def _corrupt(trace):
    """Test hook: redirect one pooling switch so the unpooling path goes wrong."""
    bad = copy.copy(trace)
    bad.switches = dict(trace.switches)
    if not bad.switches:
        bad.inputs = list(trace.inputs)
        bad.inputs[0] = trace.inputs[0] + 1.0
        return bad
    n = min(bad.switches)
    sw = bad.switches[n].copy()
    h, w = trace.inputs[n].shape[2:]
    flat = sw.reshape(-1)
    flat[:] = (flat + 1) % (h * w)
    bad.switches[n] = sw
    return bad


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gradsight", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth-data", help="generate a synthetic shape dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=2000)
    s.add_argument("--size", type=int, default=32)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth_data)

    s = sub.add_parser("train", help="train the reference network")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int, default=10)
    s.add_argument("--lr", type=float, default=0.02)
    s.add_argument("--momentum", type=float, default=0.9)
    s.add_argument("--batch", type=int, default=32)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("class-image", help="synthesise a class model image")
    s.add_argument("--model", required=True)
    s.add_argument("--class", dest="class_id", type=int, required=True)
    s.add_argument("--lambda", dest="lam", type=float, default=classviz.VizConfig.lam)
    s.add_argument("--steps", type=int, default=classviz.VizConfig.steps)
    s.add_argument("--lr", type=float, default=classviz.VizConfig.step_size)
    s.add_argument("--momentum", type=float, default=classviz.VizConfig.momentum)
    s.add_argument("--out", required=True)
    s.add_argument("--trace", action="store_true", help="also write the objective trace as CSV")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_class_image)

    s = sub.add_parser("saliency", help="image-specific class saliency map")
    s.add_argument("--model", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--class", dest="class_id", type=int)
    s.add_argument("--top1", action="store_true")
    s.add_argument("--crops", type=int, choices=(1, 10), default=10)
    s.add_argument("--out", required=True)
    s.add_argument("--raw", help="dump raw float32 values, row-major little-endian")
    s.set_defaults(func=cmd_saliency)

    s = sub.add_parser("localize", help="saliency-seeded GraphCut boxes for the top-k classes")
    s.add_argument("--model", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--topk", type=int, default=5)
    s.add_argument("--fg-q", type=float, default=0.95)
    s.add_argument("--bg-q", type=float, default=0.30)
    s.add_argument("--gamma", type=float, default=50.0)
    s.add_argument("--crops", type=int, choices=(1, 10), default=10)
    s.add_argument("--out-boxes", required=True)
    s.add_argument("--out-mask")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_localize)

    s = sub.add_parser("check-deconv", help="compare DeconvNet and gradient reconstructions")
    s.add_argument("--model", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--class", dest="class_id", type=int, required=True)
    s.add_argument("--corrupt-trace", action="store_true", help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_check_deconv)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except UsageError as exc:
        print(f"gradsight: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"gradsight: error: {exc}", file=sys.stderr)
        return 1
    except InvariantError as exc:
        print(f"gradsight: invariant violated: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
