"""Command-line entry point: ``drln {degrade,train,sr,eval,gradcheck}``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

log = logging.getLogger("drln")


class CliFailure(Exception):
    """Runtime failure reported to the user with exit status 1."""


def worker_count() -> int:
    raw = os.environ.get("DRLN_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise CliFailure(f"DRLN_THREADS must be an integer, got {raw!r}")
    return max(1, n)


def _echo_config(cfg) -> None:
    sys.stderr.write("# resolved config\n" + cfg.to_text())


def _overrides(pairs: Sequence[str]) -> dict[str, str]:
    out = {}
    for p in pairs or ():
        if "=" not in p:
            raise CliFailure(f"--set expects KEY=VALUE, got {p!r}")
        k, v = p.split("=", 1)
        out[k.strip()] = v.strip()
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_degrade(args) -> int:
    from .config import CliConfig
    from .degradation import make_pairs, read_manifest

    items = {"degrade.kind": args.kind.upper(), "degrade.scale": str(args.scale),
             "degrade.sigma_noise": repr(float(args.sigma)), "degrade.rng_seed": str(args.seed),
             "net.scale": str(args.scale), "path.hr_dir": str(args.hr), "path.out_dir": str(args.out)}
    cfg = CliConfig.resolve(items)
    _echo_config(cfg)
    for msg in cfg.degrade.protocol_warnings():
        print(f"warning: {msg}", file=sys.stderr)
    hr = Path(args.hr)
    if not hr.is_dir():
        raise CliFailure(f"HR directory {hr} does not exist")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        manifest = make_pairs(hr, cfg.degrade, args.out, workers=worker_count())
    print(f"wrote {len(read_manifest(manifest))} pairs to {manifest}")
    return 0


def cmd_train(args) -> int:
    from .arch import build_network
    from .checkpoint import Checkpoint
    from .config import CliConfig, parse_config_file
    from .degradation import read_manifest
    from .trainer import TrainingDiverged, format_trace, load_pairs, train

    items: dict[str, str] = {}
    if args.config:
        items.update(parse_config_file(args.config))
    resume = None
    if args.resume:
        resume = Checkpoint.load(args.resume)
        ck_items = {f"net.{k}": v for k, v in resume.net_config.to_items()}
        ck_items.update({k: v for k, v in resume.extra.items() if k.startswith("train.")})
        items = {**ck_items, **items}
    if args.preset:
        items["net.preset"] = args.preset
    if args.scale:
        items["net.scale"] = str(args.scale)
    if args.steps is not None:
        items["train.max_steps"] = str(args.steps)
    if args.seed is not None:
        items["train.seed"] = str(args.seed)
    if args.manifest:
        items["path.manifest"] = str(args.manifest)
    if args.out:
        items["path.out_dir"] = str(args.out)
    items.update(_overrides(args.set))
    cfg = CliConfig.resolve(items)
    _echo_config(cfg)

    out_dir = Path(cfg.paths.get("out_dir", "runs/train"))
    if resume is not None and resume.step >= cfg.train.max_steps:
        print(f"checkpoint already at step {resume.step} >= {cfg.train.max_steps}; nothing to do")
        return 0
    manifest = cfg.paths.get("manifest")
    if not manifest or not Path(manifest).is_file():
        raise CliFailure(f"training manifest not found: {manifest!r} (pass --manifest)")
    rows = read_manifest(manifest)
    if not rows:
        raise CliFailure(f"training manifest {manifest} has no rows")
    pairs = load_pairs(rows, cfg.net.scale)
    net = build_network(cfg.net, seed=cfg.train.seed)
    try:
        ckpt, trace = train(net, pairs, cfg.train, out_dir=out_dir, resume=resume, log_every=args.log_every)
    except TrainingDiverged as exc:
        raise CliFailure(str(exc))
    except ValueError as exc:
        raise CliFailure(str(exc))
    trace_path = out_dir / "trace.csv"
    append = resume is not None and trace_path.exists()
    with open(trace_path, "a" if append else "w") as fh:
        fh.write(format_trace(trace, header=not append))
    last = f", last loss {trace[-1][1]:.6f}" if trace else ""
    print(f"trained to step {ckpt.step}{last}; checkpoint {out_dir / 'checkpoint.ckpt'}")
    return 0


def _list_inputs(path: Path) -> list[Path]:
    if path.is_dir():
        return sorted(p for p in path.iterdir() if p.suffix.lower() == ".png")
    if path.is_file():
        return [path]
    raise CliFailure(f"input {path} does not exist")


def cmd_sr(args) -> int:
    from .checkpoint import Checkpoint, network_from_checkpoint
    from .config import CliConfig
    from .degradation import bicubic_resize
    from .engine import Tensor, no_grad
    from .ensemble import self_ensemble
    from .imageio import ImageFormatError, from_nchw, read_png, to_nchw, write_png

    if args.bicubic:
        if not args.scale:
            raise CliFailure("--bicubic needs --scale")
        scale = args.scale

        def model(img):
            return bicubic_resize(img, scale, "up")

        items = {"net.scale": str(scale)}
    else:
        if not args.checkpoint:
            raise CliFailure("pass --checkpoint or --bicubic")
        ckpt = Checkpoint.load(args.checkpoint)
        scale = ckpt.net_config.scale
        if args.scale and args.scale != scale:
            raise CliFailure(f"checkpoint is x{scale} but x{args.scale} was requested")
        net = network_from_checkpoint(ckpt)

        def model(img):
            with no_grad():
                return from_nchw(net(Tensor(to_nchw(img))).data)

        items = {f"net.{k}": v for k, v in ckpt.net_config.to_items()}
        items["path.checkpoint"] = str(args.checkpoint)
    items.update({"path.input": str(args.input), "path.out_dir": str(args.out)})
    _echo_config(CliConfig.resolve(items))

    inputs = _list_inputs(Path(args.input))
    out = Path(args.out)

    def job(path: Path) -> str:
        try:
            img = read_png(path)
        except (OSError, ImageFormatError) as exc:
            return f"{path.name}: {exc}"
        sr = self_ensemble(model, img) if args.self_ensemble else model(img)
        write_png(out / path.name, sr)
        return ""

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        errors = [e for e in pool.map(job, inputs) if e]
    for e in errors:
        print(f"error: {e}", file=sys.stderr)
    print(f"wrote {len(inputs) - len(errors)} SR images to {out}")
    return 1 if errors else 0


def cmd_eval(args) -> int:
    from .degradation import read_manifest
    from .metrics import evaluate

    manifest = Path(args.manifest)
    if not manifest.is_file():
        raise CliFailure(f"manifest {manifest} not found")
    rows = read_manifest(manifest)
    if not rows:
        raise CliFailure("no rows in manifest")
    sys.stderr.write(f"# resolved config\npath.manifest = {manifest}\npath.sr_dir = {args.sr}\n"
                     f"net.scale = {args.scale}\neval.shave = {args.shave if args.shave is not None else args.scale}\n")
    report = evaluate(rows, args.sr, args.scale, shave=args.shave, workers=worker_count())
    sys.stdout.write(report.to_text())
    csv_path = Path(args.csv) if args.csv else Path(args.sr) / "eval.csv"
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    csv_path.write_text(report.to_csv())
    if report.failed_rows:
        names = ", ".join(r.name for r in report.failed_rows)
        print(f"error: {len(report.failed_rows)} row(s) failed: {names}", file=sys.stderr)
        return 1
    return 0


def cmd_gradcheck(args) -> int:
    import contextlib

    from .engine import inject_fault
    from .gradcheck import run_gradcheck

    ops = [o.strip() for o in args.ops.split(",")] if args.ops else None
    ctx = inject_fault(args.inject_fault) if args.inject_fault else contextlib.nullcontext()
    sys.stderr.write(f"# resolved config\ngradcheck.ops = {args.ops or 'all'}\ngradcheck.samples = {args.samples}\n"
                     f"gradcheck.seed = {args.seed}\ngradcheck.threshold = {args.threshold!r}\n")
    with ctx:
        try:
            results = run_gradcheck(ops, samples=args.samples, seed=args.seed)
        except ValueError as exc:
            raise CliFailure(str(exc))
    bad = []
    for r in results:
        status = "ok" if r.passed(args.threshold) else "FAIL"
        print(f"{r.op:<28} worst rel err {r.worst:.3e}  ({r.n_checked} coords, {r.where})  {status}")
        if not r.passed(args.threshold):
            bad.append(r.op)
    if bad:
        print(f"gradient check failed for: {', '.join(bad)}", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="drln", description="Densely residual Laplacian super-resolution toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("degrade", help="make LR/HR pairs and a manifest from a directory of HR PNGs")
    d.add_argument("--kind", choices=["bi", "bd", "nd"], required=True)
    d.add_argument("--scale", type=int, choices=[2, 3, 4, 8], required=True)
    d.add_argument("--sigma", type=float, default=0.0, help="ND noise level in [0,255] units")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--hr", required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_degrade)

    t = sub.add_parser("train", help="train a network on a manifest")
    t.add_argument("--config")
    t.add_argument("--preset", choices=["paper", "desk"])
    t.add_argument("--steps", type=int)
    t.add_argument("--resume")
    t.add_argument("--manifest")
    t.add_argument("--out")
    t.add_argument("--scale", type=int, choices=[2, 3, 4, 8])
    t.add_argument("--seed", type=int)
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    t.add_argument("--log-every", type=int, default=0)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sr", help="super-resolve PNG image(s)")
    s.add_argument("--checkpoint")
    s.add_argument("--bicubic", action="store_true", help="plain bicubic upscaling instead of a network")
    s.add_argument("--input", required=True, help="PNG file or directory")
    s.add_argument("--out", required=True)
    s.add_argument("--scale", type=int, choices=[2, 3, 4, 8])
    s.add_argument("--self-ensemble", action="store_true")
    s.set_defaults(func=cmd_sr)

    e = sub.add_parser("eval", help="Y-channel PSNR/SSIM of SR images against a manifest")
    e.add_argument("--manifest", required=True)
    e.add_argument("--sr", required=True)
    e.add_argument("--scale", type=int, required=True)
    e.add_argument("--shave", type=int)
    e.add_argument("--csv")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference check of every op and a desk network")
    g.add_argument("--ops", help="comma-separated op classes")
    g.add_argument("--samples", type=int, default=20)
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--threshold", type=float, default=1e-3)
    g.add_argument("--inject-fault", help=argparse.SUPPRESS)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    from threadpoolctl import threadpool_limits

    from .config import ConfigError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        # single-threaded BLAS keeps every artifact bit-identical whatever DRLN_THREADS is
        with threadpool_limits(limits=1):
            return args.func(args)
    except (CliFailure, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
