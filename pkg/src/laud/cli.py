"""Command-line entry point: ``laud <subcommand> ...``.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.
"""

import argparse
import json
import logging
import os
import sys
from contextlib import contextmanager

import numpy as np

from . import metrics
from .checkpoint import read_container, write_container
from .data import crop_to_multiple, make_lr, read_png, write_png
from .errors import ConfigError, DataError, FormatError, GeometryError, NumericError
from .model import load_checkpoint
from .pyramid import DETAIL_KERNEL, LaplacianPyramid, detail_target, lp_decompose, lp_reconstruct
from .resample import ResampleKernel, bicubic_resize
from .tensor import Tensor
from .trainer import TrainConfig, bench, format_table, run_ablation, run_k_sweep, train

log = logging.getLogger("laud")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


# --- config handling ---------------------------------------------------------


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc, overrides):
    """Apply ``dotted.key=value`` strings to a nested dict; values parse as JSON when possible."""
    doc = json.loads(json.dumps(doc))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = doc
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set {key}: {p!r} is not a section")
        node[parts[-1]] = _parse_value(raw)
    return doc


def load_config_doc(path):
    if path is None:
        return {}
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return doc


def resolve_config(args):
    doc = apply_overrides(load_config_doc(args.config), args.set)
    if args.seed is not None:
        doc["seed"] = args.seed
    return TrainConfig.from_dict(doc)


def _out_dir(args):
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


def write_snapshot(out, args, config=None, extra=None):
    snap = {"subcommand": args.command, "argv": sys.argv[1:] if args.argv is None else args.argv}
    if config is not None:
        snap["config"] = config.to_dict()
    if extra:
        snap.update(extra)
    with open(os.path.join(out, "resolved_config.json"), "w", encoding="utf-8") as f:
        json.dump(snap, f, indent=2, sort_keys=True)
        f.write("\n")


@contextmanager
def _maybe_single_thread(enabled):
    if not enabled:
        yield
        return
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        yield
        return
    with threadpool_limits(limits=1):
        yield


def _write_table(out, stem, table):
    with open(os.path.join(out, stem + ".json"), "w", encoding="utf-8") as f:
        json.dump(table, f, indent=2, sort_keys=True)
        f.write("\n")
    text = format_table(table)
    with open(os.path.join(out, stem + ".txt"), "w", encoding="utf-8") as f:
        f.write(text)
    return text


def _offset_view(img):
    return np.clip(np.asarray(img, dtype=np.float64) + 0.5, 0.0, 1.0)


# --- subcommands ---------------------------------------------------------------


def cmd_train(args):
    config = resolve_config(args)
    out = _out_dir(args)
    config.checkpoint_dir = out
    write_snapshot(out, args, config)
    result = train(config)
    if result.val:
        print(f"final val PSNR {result.val['psnr']:.4f} dB  SSIM {result.val['ssim']:.4f}")
    print(f"checkpoint written to {os.path.join(out, 'final.laud')}")
    return EXIT_OK


def _collect_inputs(paths):
    files = []
    for p in paths:
        if os.path.isdir(p):
            files.extend(os.path.join(p, n) for n in sorted(os.listdir(p)) if n.lower().endswith(".png"))
        elif os.path.isfile(p):
            files.append(p)
        else:
            raise DataError(f"input not found: {p}")
    return files


def feature_grid(fmap, last=None):
    """Tile ``(C, H, W)`` feature maps into one grayscale mosaic, each channel min-max normalized."""
    fmap = np.asarray(fmap, dtype=np.float64)
    if last:
        fmap = fmap[-last:]
    c, h, w = fmap.shape
    side = int(np.ceil(np.sqrt(c)))
    rows = int(np.ceil(c / side))
    grid = np.zeros((rows * h, side * w))
    for i in range(c):
        ch = fmap[i]
        lo, hi = ch.min(), ch.max()
        ch = (ch - lo) / (hi - lo) if hi > lo else np.zeros_like(ch)
        r, q = divmod(i, side)
        grid[r * h : (r + 1) * h, q * w : (q + 1) * w] = ch
    return grid


def cmd_infer(args):
    if not args.checkpoint:
        raise ConfigError("infer needs --checkpoint")
    try:
        with open(args.checkpoint, "rb") as f:
            model = load_checkpoint(f.read())
    except OSError as exc:
        raise ConfigError(f"cannot read checkpoint: {exc}") from None
    except FormatError as exc:
        raise ConfigError(f"bad checkpoint {args.checkpoint}: {exc}") from None
    s = model.config.scale
    if args.scale is not None and args.scale != s:
        raise ConfigError(f"checkpoint was trained for scale {s}, --scale asked for {args.scale}")
    out = _out_dir(args)
    write_snapshot(out, args, extra={"model": model.config.to_dict()})
    for path in _collect_inputs(args.inputs):
        stem = os.path.splitext(os.path.basename(path))[0]
        lr = read_png(path)
        trace = model.forward(Tensor(lr[None]), retain_features=args.dump_features)
        write_png(os.path.join(out, f"{stem}_sr.png"), np.clip(trace.output.data[0], 0, 1))
        if args.all_steps:
            for k, (sr, d) in enumerate(zip(trace.sr_images, trace.detail_images), start=1):
                write_png(os.path.join(out, f"{stem}_sr_k{k}.png"), np.clip(sr.data[0], 0, 1))
                write_png(os.path.join(out, f"{stem}_detail_k{k}.png"), _offset_view(d.data[0]))
        if args.dump_features:
            for k, feats in enumerate(trace.features, start=1):
                for key, t in feats.items():
                    grid = feature_grid(t.data[0], last=16 if args.last_16 else None)
                    write_png(os.path.join(out, f"{stem}_step{k}_{key}.png"), grid)
        print(f"{path} -> {os.path.join(out, stem + '_sr.png')}")
    return EXIT_OK


def cmd_eval(args):
    s = args.scale
    if not args.hr_dir:
        raise ConfigError("eval needs --hr-dir")
    hr_files = {n for n in os.listdir(args.hr_dir) if n.lower().endswith(".png")} if os.path.isdir(args.hr_dir) else None
    if hr_files is None:
        raise DataError(f"HR directory not found: {args.hr_dir}")
    if args.bicubic:
        names = sorted(hr_files)
    else:
        if not args.sr_dir or not os.path.isdir(args.sr_dir):
            raise DataError(f"SR directory not found: {args.sr_dir}")
        sr_files = {n for n in os.listdir(args.sr_dir) if n.lower().endswith(".png")}
        unmatched = sorted(sr_files ^ hr_files)
        if unmatched:
            raise DataError("unmatched filenames: " + ", ".join(unmatched))
        names = sorted(hr_files)
    report = metrics.MetricReport(scale=s, border_crop=s)
    for n in names:
        hr = read_png(os.path.join(args.hr_dir, n))
        if args.bicubic:
            hr = crop_to_multiple(hr, s)
            sr = bicubic_resize(make_lr(hr, s), hr.shape[-2], hr.shape[-1])
        else:
            sr = read_png(os.path.join(args.sr_dir, n))
            if sr.shape != hr.shape:
                raise DataError(f"{n}: SR shape {sr.shape} differs from HR shape {hr.shape}")
        report.add(n, *metrics.evaluate_pair(sr, hr, s, rounding=not args.no_round))
    out = _out_dir(args)
    write_snapshot(out, args)
    with open(os.path.join(out, "metrics.json"), "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2)
        f.write("\n")
    text = report.to_text()
    with open(os.path.join(out, "metrics.txt"), "w", encoding="utf-8") as f:
        f.write(text)
    print(text, end="")
    return EXIT_OK


def _kernel_from_args(args):
    return ResampleKernel(args.kernel) if args.kernel == "burt5" else DETAIL_KERNEL


def cmd_pyramid(args):
    out = _out_dir(args)
    write_snapshot(out, args)
    if args.mode == "reconstruct":
        try:
            with open(args.input, "rb") as f:
                tensors, meta = read_container(f.read())
        except OSError as exc:
            raise DataError(f"cannot read sidecar: {exc}") from None
        except FormatError as exc:
            raise ConfigError(f"bad sidecar {args.input}: {exc}") from None
        if not meta or meta.get("kind") != "laud-pyramid":
            raise ConfigError(f"{args.input} is not a pyramid sidecar")
        kernel = ResampleKernel(**meta["kernel"])
        details = [tensors[f"detail_{i}"] for i in range(1, meta["levels"] + 1)]
        image = lp_reconstruct(LaplacianPyramid(details, tensors["base"], meta["factor"], kernel))
        write_png(os.path.join(out, "reconstructed.png"), np.clip(image, 0, 1))
        return EXIT_OK

    # float64 throughout; the sidecar stores float32 like every container
    image = read_png(args.input)
    kernel = _kernel_from_args(args)
    if args.mode == "decompose":
        pyr = lp_decompose(image, args.levels, kernel, args.factor)
        tensors = {f"detail_{i}": d for i, d in enumerate(pyr.details, start=1)}
        tensors["base"] = pyr.base
        for i, d in enumerate(pyr.details, start=1):
            write_png(os.path.join(out, f"detail_{i}.png"), _offset_view(d))
        write_png(os.path.join(out, "base.png"), np.clip(pyr.base, 0, 1))
        meta = {"kind": "laud-pyramid", "mode": "decompose", "levels": pyr.levels, "factor": pyr.factor, "kernel": kernel.to_dict()}
    else:
        d = detail_target(image, args.scale, kernel)
        tensors = {"detail_1": d}
        write_png(os.path.join(out, "detail.png"), _offset_view(d))
        meta = {"kind": "laud-pyramid", "mode": "detail", "levels": 1, "factor": args.scale, "kernel": kernel.to_dict()}
    with open(os.path.join(out, "pyramid.laud"), "wb") as f:
        f.write(write_container(tensors, meta))
    return EXIT_OK


def _int_list(text):
    return [int(x) for x in str(text).split(",") if x.strip()]


def cmd_ablate(args):
    config = resolve_config(args)
    out = _out_dir(args)
    seeds = _int_list(args.seeds) if args.seeds else [config.seed]
    write_snapshot(out, args, config)

    def progress(name, run):
        print(f"{name} seed={run['seed']}: PSNR {run['psnr']:.4f} SSIM {run['ssim']:.4f} ({run['seconds']:.1f}s)")

    if args.k_sweep:
        table = run_k_sweep(config, _int_list(args.k_sweep), seeds, progress=progress)
        stem = "k_sweep"
    else:
        variants = [v.strip().upper() for v in args.variants.split(",") if v.strip()]
        table = run_ablation(config, variants, seeds, progress=progress)
        stem = "ablation"
    print(_write_table(out, stem, table), end="")
    return EXIT_OK


def cmd_bench(args):
    config = resolve_config(args)
    out = _out_dir(args)
    write_snapshot(out, args, config)
    ks = _int_list(args.k) if args.k else [config.model.rudp_steps]
    results = []
    for k in ks:
        mcfg = type(config.model)(**{**config.model.to_dict(), "rudp_steps": k})
        res = bench(mcfg, batch=args.batch, lr_size=args.lr_size, warmup=args.warmup, iters=args.iters, dry=args.dry)
        results.append(res)
        line = f"K={k}: params {res['param_count']} ({res['param_count'] / 1e6:.2f}M)"
        if not args.dry:
            line += (
                f", train step {res['time_per_train_step'] * 1e3:.2f} ms"
                f", inference {res['time_per_inference'] * 1e3:.2f} ms"
                f", memory ~{res['peak_memory_estimate'] / 2**20:.1f} MiB"
            )
        print(line)
    with open(os.path.join(out, "bench.json"), "w", encoding="utf-8") as f:
        json.dump(results, f, indent=2)
        f.write("\n")
    return EXIT_OK


# --- parser ------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config mirroring TrainConfig")
    common.add_argument("--out", help="output directory (default: current directory)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="dotted config override, repeatable")
    common.add_argument("--deterministic", action="store_true", help="pin BLAS to one thread")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="laud", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("train", parents=[common], help="train a model")

    q = sub.add_parser("infer", parents=[common], help="super-resolve PNG images")
    q.add_argument("inputs", nargs="+", help="PNG files or directories")
    q.add_argument("--checkpoint", required=True)
    q.add_argument("--scale", type=int)
    q.add_argument("--all-steps", action="store_true", help="also write every RUDP step's SR and detail image")
    q.add_argument("--dump-features", action="store_true", help="write H_U/H_D/H_SR feature mosaics per step")
    q.add_argument("--last-16", action="store_true", help="restrict feature mosaics to the last 16 channels")

    q = sub.add_parser("eval", parents=[common], help="PSNR/SSIM on the Y channel")
    q.add_argument("--sr-dir")
    q.add_argument("--hr-dir", required=True)
    q.add_argument("--scale", type=int, required=True)
    q.add_argument("--bicubic", action="store_true", help="evaluate bicubic down/up of the HR images instead of --sr-dir")
    q.add_argument("--no-round", action="store_true", help="skip rounding to 8-bit before measuring")

    q = sub.add_parser("pyramid", parents=[common], help="Laplacian pyramid tools")
    q.add_argument("mode", choices=["decompose", "reconstruct", "detail"])
    q.add_argument("input", help="PNG image, or the .laud sidecar for reconstruct")
    q.add_argument("--levels", type=int, default=3)
    q.add_argument("--factor", type=int, default=2)
    q.add_argument("--scale", type=int, default=2, help="SR scale for detail mode")
    q.add_argument("--kernel", choices=["burt5", "bicubic"], default="burt5")

    q = sub.add_parser("ablate", parents=[common], help="ablation table or K-sweep")
    q.add_argument("--variants", default="m1,m2,m3,m4")
    q.add_argument("--seeds", help="comma-separated seeds")
    q.add_argument("--k-sweep", help="comma-separated K values; replaces the ablation variants")

    q = sub.add_parser("bench", parents=[common], help="parameter count, memory, timing")
    q.add_argument("--dry", action="store_true", help="parameter count only")
    q.add_argument("--k", help="comma-separated K values (default: config)")
    q.add_argument("--batch", type=int, default=2)
    q.add_argument("--lr-size", type=int, default=16)
    q.add_argument("--warmup", type=int, default=10)
    q.add_argument("--iters", type=int, default=100)
    return p


COMMANDS = {
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "pyramid": cmd_pyramid,
    "ablate": cmd_ablate,
    "bench": cmd_bench,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = list(argv) if argv is not None else None
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        with _maybe_single_thread(args.deterministic):
            return COMMANDS[args.command](args)
    except (ConfigError, GeometryError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
