"""Command-line entry point: ``aosr {scenes,synth,train,restore,eval,gradcheck}``.

Exit codes: 0 success, 2 usage, 3 I/O, 4 data integrity, 5 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import imaging, metrics, plotting, synth
from .config import describe_defaults, load_config
from .errors import (ConfigError, ContractError, DimensionError, DomainError, FormatError, IntegrityError,
                     NonFiniteError, SingularityError)
from .gradcheck import network_grad_check
from .imaging import Airlight, ControlCoeffs
from .net import AOSRNet, load_checkpoint
from .stf import read_stf, write_stf
from .trainer import EvalReport, evaluate, train

log = logging.getLogger("aosr")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_INTEGRITY, EXIT_NUMERIC = 0, 2, 3, 4, 5


class UsageError(Exception):
    pass


def _formatter(prog):
    return argparse.RawDescriptionHelpFormatter(prog, max_help_position=32)


def build_parser() -> argparse.ArgumentParser:
    epilog = describe_defaults()
    ap = argparse.ArgumentParser(prog="aosr", description="Sandstorm image synthesis, restoration and evaluation.",
                                 epilog=epilog, formatter_class=_formatter)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scenes", help="write procedural clear images as PNG", formatter_class=_formatter)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("synth", help="synthesise training triples from clear images", epilog=epilog,
                       formatter_class=_formatter)
    p.add_argument("--input-dir", required=True, help="directory of clear PNG images")
    p.add_argument("--output-dir", required=True)
    p.add_argument("--config")
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patch-size", type=int)
    p.add_argument("--beta-min", type=float)
    p.add_argument("--beta-max", type=float)
    p.add_argument("--depth", help="procedural:KIND (ramp_h, ramp_v, radial, fractal_noise, random) or dir:PATH")
    p.add_argument("--verify", action="store_true", help="re-read and round-trip check every triple")
    p.add_argument("--no-previews", action="store_true")

    p = sub.add_parser("train", help="train the network on a synthesised dataset", epilog=epilog,
                       formatter_class=_formatter)
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--deterministic", action="store_true", help="serial execution, timing column written as 0")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("restore", help="restore images with a checkpoint or analytically", formatter_class=_formatter)
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--model", help="checkpoint file")
    mode.add_argument("--analytic", help="sample metadata JSON (airlight, beta_atten, depth)")
    p.add_argument("--input", required=True, help="PNG/STF file or directory of PNGs")
    p.add_argument("--output", required=True, help="output PNG file or directory")

    p = sub.add_parser("eval", help="full-reference metrics over filename-matched PNGs", formatter_class=_formatter)
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--degraded-dir")
    p.add_argument("--out", required=True, help="report path (.json); .csv and .png are written beside it")
    p.add_argument("--config")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("gradcheck", help="central-difference check of the full network", epilog=epilog,
                       formatter_class=_formatter)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rtol", type=float, default=1e-4)
    p.add_argument("--step", type=float, default=1e-6)
    p.add_argument("--size", type=int, default=8)
    p.add_argument("--max-entries", type=int, default=6, help="entries probed per parameter tensor (0 = all)")
    return ap


# -- commands -------------------------------------------------------------------

def cmd_scenes(args):
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for k in range(args.count):
        synth.save_png(out / f"scene{k:04d}.png", synth.generate_scene(args.seed * 100003 + k, args.size, args.size))
    print(f"wrote {args.count} scenes to {out}")
    return EXIT_OK


def _parse_depth(spec):
    kind, _, value = spec.partition(":")
    if kind == "procedural":
        value = value or "random"
        if value != "random" and value not in synth.DEPTH_KINDS:
            raise UsageError(f"unknown procedural depth kind '{value}'")
        return value, None
    if kind == "dir" and value:
        return "supplied", Path(value)
    raise UsageError(f"--depth must be procedural:KIND or dir:PATH, got {spec!r}")


def cmd_synth(args):
    cfg = load_config(args.config)["synth"]
    count = args.count if args.count is not None else cfg.count
    patch = args.patch_size if args.patch_size is not None else cfg.patch_size
    bmin = args.beta_min if args.beta_min is not None else cfg.beta_min
    bmax = args.beta_max if args.beta_max is not None else cfg.beta_max
    if bmin > bmax:
        raise UsageError(f"--beta-min {bmin} exceeds --beta-max {bmax}")
    if bmin <= 0:
        raise UsageError("--beta-min must be positive")
    if count < 1 or patch < 1:
        raise UsageError("--count and --patch-size must be positive")
    depth_kind, depth_dir = _parse_depth(args.depth or cfg.depth)
    box = synth.validate_box(cfg.box)

    in_dir = Path(args.input_dir)
    if not in_dir.is_dir():
        raise FileNotFoundError(f"input directory {in_dir} does not exist")
    paths = synth.list_pngs(in_dir)
    images, kept = [], []
    for path in paths:
        try:
            images.append(synth.load_png(path))
            kept.append(path)
        except OSError as exc:
            log.warning("skipping %s: %s", path, exc)
    if not images:
        raise FileNotFoundError(f"no decodable PNG images in {in_dir}")
    depth_maps = depth_paths = None
    if depth_dir is not None:
        depth_maps, depth_paths = [], []
        for path, img in zip(kept, images):
            dpath = depth_dir / path.name
            d = synth.load_gray_png(dpath)
            if d.shape != img.shape[:2]:
                raise IntegrityError(f"depth {dpath} has shape {d.shape}, image has {img.shape[:2]}")
            depth_maps.append(d)
            depth_paths.append(str(dpath))

    out = Path(args.output_dir)
    manifest = synth.build_dataset(images, out, count, args.seed, patch, (bmin, bmax), box,
                                   depth_kind="random" if depth_kind == "supplied" else depth_kind,
                                   depth_maps=depth_maps, depth_paths=depth_paths,
                                   verify=args.verify, previews=not args.no_previews)
    if not args.no_previews:
        triples = [synth.read_sample(out / "samples", e["id"]) for e in manifest.samples[:4]]
        plotting.plot_triples(triples, out / "preview" / "overview.png")
    print(f"wrote {manifest.count} triples ({patch}x{patch}) to {out}")
    return EXIT_OK


def cmd_train(args):
    cfg = load_config(args.config)
    tcfg = cfg["train"]
    overrides = {k: v for k, v in (("epochs", args.epochs), ("lr", args.lr), ("batch_size", args.batch_size),
                                   ("max_steps", args.max_steps), ("seed", args.seed)) if v is not None}
    tcfg = replace(tcfg, **overrides).validate()
    data = Path(args.data)
    if not (data / "manifest.json").exists():
        raise FileNotFoundError(f"{data} has no manifest.json")
    triples = synth.load_dataset(data, verify=True)
    net = AOSRNet.build(cfg["model"], seed=tcfg.seed)
    out = Path(args.out)
    result = train(triples, net, cfg["loss"], tcfg, out_dir=out, resume=args.resume,
                   deterministic=args.deterministic)
    if not args.no_figures and result.log.rows:
        plotting.plot_training_curve(result.log, out / "loss_curve.png")
    means = result.log.epoch_means()
    last = max(means) if means else None
    if last is not None:
        print(f"epoch {last + 1}/{tcfg.epochs}: mean total loss {means[last]:.6f} "
              f"({len(result.log.rows)} steps), checkpoint {out / 'model.ckpt'}")
    return EXIT_OK


META_REQUIRED = ("airlight", "beta_atten", "depth_kind", "seed", "height", "width")


def _load_input(path):
    path = Path(path)
    if path.suffix.lower() == ".stf":
        arr = read_stf(path)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise FormatError(f"{path}: expected H x W x 3 tensor, got {arr.shape}")
        return arr
    return synth.load_png(path)


def _inputs(path):
    path = Path(path)
    if path.is_dir():
        return [(p, _load_input(p)) for p in synth.list_pngs(path)]
    if not path.exists():
        raise FileNotFoundError(f"{path} does not exist")
    return [(path, _load_input(path))]


def _output_path(out, src, many):
    out = Path(out)
    if many or out.is_dir():
        out.mkdir(parents=True, exist_ok=True)
        return out / (Path(src).stem + ".png")
    out.parent.mkdir(parents=True, exist_ok=True)
    return out


def cmd_restore(args):
    items = _inputs(args.input)
    if not items:
        raise FileNotFoundError(f"no input images in {args.input}")
    many = len(items) > 1 or Path(args.input).is_dir()
    if args.analytic:
        meta_path = Path(args.analytic)
        meta = json.loads(meta_path.read_text())
        missing = [k for k in META_REQUIRED if k not in meta]
        if missing:
            raise UsageError(f"metadata {meta_path} lacks {missing}")
        c = ControlCoeffs(meta.get("alpha", 1.6), meta.get("beta_ctrl", 1.0))
        h, w = int(meta["height"]), int(meta["width"])
        if meta["depth_kind"] == "supplied":
            if "depth_file" not in meta:
                raise UsageError(f"metadata {meta_path} uses supplied depth but has no depth_file")
            depth = read_stf(meta_path.parent / meta["depth_file"]).astype(np.float64)
        else:
            depth = synth.generate_depth(meta["depth_kind"], int(meta["seed"]), h, w)
        t = imaging.transmission(depth, float(meta["beta_atten"]))
        air = Airlight(meta["airlight"])
        for src, img in items:
            if img.shape[:2] != (h, w):
                raise UsageError(f"{src}: size {img.shape[:2]} does not match metadata {(h, w)}")
            restored = imaging.restore_classic(img.astype(np.float64), air, t)
            synth.save_png(_output_path(args.output, src, many), restored)
    else:
        net, side, _ = load_checkpoint(args.model)
        for src, img in items:
            if img.shape[0] % 4 or img.shape[1] % 4:
                raise UsageError(f"{src}: size {img.shape[:2]} is not divisible by 4")
            _, restored = net.predict(img.astype(net.config.dtype))
            synth.save_png(_output_path(args.output, src, many), restored)
    print(f"restored {len(items)} image(s) -> {args.output}")
    return EXIT_OK


def cmd_eval(args):
    peak = load_config(args.config)["metrics"].psnr_peak
    pred_dir, gt_dir = Path(args.pred_dir), Path(args.gt_dir)
    for d in (pred_dir, gt_dir) + ((Path(args.degraded_dir),) if args.degraded_dir else ()):
        if not d.is_dir():
            raise FileNotFoundError(f"{d} is not a directory")
    preds = {p.name: p for p in synth.list_pngs(pred_dir)}
    gts = {p.name: p for p in synth.list_pngs(gt_dir)}
    degr = {p.name: p for p in synth.list_pngs(args.degraded_dir)} if args.degraded_dir else None
    unmatched = sorted(set(preds) ^ set(gts))
    if degr is not None:
        unmatched += sorted(n for n in preds if n in gts and n not in degr)
    if unmatched:
        raise IntegrityError("unmatched files: " + ", ".join(unmatched))
    if not preds:
        raise IntegrityError("no image pairs found")
    rows = []
    for name in sorted(preds):
        gt = synth.load_png(gts[name], np.float64)
        pred = synth.load_png(preds[name], np.float64)
        if pred.shape != gt.shape:
            raise IntegrityError(f"{name}: prediction {pred.shape} vs ground truth {gt.shape}")
        r = metrics.compare(pred, gt, peak)
        row = {"id": name, "psnr_restored": r.psnr_db, "ssim_restored": r.ssim,
               "ciede2000_restored": r.ciede2000, "identical": r.identical}
        if degr is not None:
            d = metrics.compare(synth.load_png(degr[name], np.float64), gt, peak)
            row.update({"psnr_degraded": d.psnr_db, "ssim_degraded": d.ssim, "ciede2000_degraded": d.ciede2000,
                        "delta_psnr": r.psnr_db - d.psnr_db})
        rows.append(row)
    report = EvalReport(rows)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write(out, out.with_suffix(".csv"))
    if not args.no_figures:
        plotting.plot_metric_report(rows, out.with_suffix(".png"), has_degraded=degr is not None)
    m = report.mean
    print(f"{len(rows)} pairs: PSNR {m['psnr_restored']:.4f} dB, SSIM {m['ssim_restored']:.4f}, "
          f"CIEDE2000 {m['ciede2000_restored']:.4f}")
    return EXIT_OK


def cmd_gradcheck(args):
    cfg = load_config(args.config)
    report = network_grad_check(cfg["model"], cfg["loss"], seed=args.seed, size=args.size, h=args.step,
                                rtol=args.rtol, max_entries=args.max_entries or None)
    for line in report.lines():
        print(line)
    verdict = "PASS" if report.passed else "FAIL: " + ", ".join(report.failures)
    print(f"{len(report.checks)} parameter groups, rtol {args.rtol:g}: {verdict}")
    return EXIT_OK if report.passed else EXIT_NUMERIC


COMMANDS = {"scenes": cmd_scenes, "synth": cmd_synth, "train": cmd_train, "restore": cmd_restore,
            "eval": cmd_eval, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, DomainError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, IntegrityError, ContractError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except (NonFiniteError, SingularityError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
