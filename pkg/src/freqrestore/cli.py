"""Command-line driver: ``freqrestore {analyze,train,eval,modulation-report,decompose}``.

Exit codes: 0 ok, 2 usage/config error, 3 numeric failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import fields

import numpy as np

from . import freq_analysis, imageio, spectral
from .degrade import synth_clean, parse_task
from .dformer import DformerConfig
from .errors import ConfigError, ContractError, NumericError
from .rformer import RformerConfig
from .train import (TrainConfig, evaluate, load_models, modulation_report, save_models, train,
                    train_learned_ratios)

DEFAULT_TASKS = ["noise:25", "rain", "haze", "blur"]
EVAL_HEADER = ["task", "n", "psnr_in", "ssim_in", "psnr_out", "ssim_out"]
RUN_KEYS = {"seed", "tasks", "out_dir", "dformer", "rformer", "train"}

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def default_seed() -> int:
    raw = os.environ.get("FREQRESTORE_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"FREQRESTORE_SEED must be an integer, got {raw!r}") from None


def _section(cls, data: dict | None, name: str):
    data = dict(data or {})
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {name!r}: {', '.join(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"bad {name!r} section: {exc}") from None


class RunConfig:
    """Validated run document: model sections, train section, tasks, paths, seed."""

    def __init__(self, doc: dict | None = None, seed: int | None = None):
        doc = dict(doc or {})
        unknown = sorted(set(doc) - RUN_KEYS)
        if unknown:
            raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
        self.seed = seed if seed is not None else int(doc.get("seed", default_seed()))
        tasks = doc.get("tasks", DEFAULT_TASKS)
        if not isinstance(tasks, list) or not tasks:
            raise ConfigError("'tasks' must be a non-empty list of task strings")
        self.tasks = [parse_task(t) for t in tasks]
        self.out_dir = doc.get("out_dir", "run")
        sections = {k: dict(doc.get(k) or {}) for k in ("dformer", "rformer", "train")}
        for sec in sections.values():
            if not isinstance(sec, dict):
                raise ConfigError("model/train sections must be JSON objects")
        sections["train"]["seed"] = self.seed
        sections["dformer"].setdefault("seed", self.seed)
        sections["rformer"].setdefault("seed", self.seed)
        self.dformer = _section(DformerConfig, sections["dformer"], "dformer")
        sections["rformer"].setdefault("repr_dim", self.dformer.repr_dim)
        sections["rformer"].setdefault("L", max(self.dformer.L, 2))
        self.rformer = _section(RformerConfig, sections["rformer"], "rformer")
        self.train = _section(TrainConfig, sections["train"], "train")

    @classmethod
    def load(cls, path: str | None, seed: int | None = None, overrides: dict | None = None) -> "RunConfig":
        doc = {}
        if path is not None:
            with open(path) as fh:
                try:
                    doc = json.load(fh)
                except json.JSONDecodeError as exc:
                    raise ConfigError(f"{path}: invalid JSON ({exc})") from None
            if not isinstance(doc, dict):
                raise ConfigError(f"{path}: top level must be an object")
        for key, val in (overrides or {}).items():
            if val is None:
                continue
            if key in ("tasks", "out_dir"):
                doc[key] = val
            else:
                doc.setdefault("train", {})[key] = val
        return cls(doc, seed)


def _tasks(values: list[str] | None) -> list:
    return [parse_task(t) for t in (values or DEFAULT_TASKS)]


def _write_csv(path: str | None, header: list[str], rows: list[list]) -> None:
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    finally:
        if path:
            fh.close()


def _print_table(header: list[str], rows: list[list], stream=None) -> None:
    stream = stream or sys.stderr
    cells = [header] + [[f"{v:.4f}" if isinstance(v, float) else str(v) for v in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    for r in cells:
        print("  ".join(c.rjust(w) for c, w in zip(r, widths)), file=stream)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_analyze(args) -> int:
    specs = _tasks(args.tasks)
    rows = freq_analysis.analyze(specs, args.pairs, out=args.out or sys.stdout, size=args.size, seed=args.seed)
    for kind, s in freq_analysis.direction_summary(rows).items():
        sign = "+" if s["mean_delta"] > 0 else "-"
        print(f"{kind}: high-frequency share {sign} (increased in {s['increased']}/{s['n']} pairs, "
              f"mean delta {s['mean_delta']:+.5f})", file=sys.stderr)
    return EXIT_OK


def cmd_train(args) -> int:
    overrides = {"tasks": args.tasks, "out_dir": args.out, "stage1_epochs": args.stage1_epochs,
                 "stage2_epochs": args.stage2_epochs, "steps_per_epoch": args.steps_per_epoch,
                 "batch_size": args.batch_size}
    run = RunConfig.load(args.config, args.seed, overrides)
    result = train(run.train, run.tasks, run.dformer, run.rformer, out_dir=run.out_dir)
    last = result.log[-1] if result.log else {}
    print(f"done: {len(result.log)} epochs, last {json.dumps(last)}; checkpoints in {run.out_dir}",
          file=sys.stderr)
    return EXIT_OK


def cmd_eval(args) -> int:
    dformer, rformer = load_models(args.ckpt)
    rows = evaluate(dformer, rformer, _tasks(args.tasks), args.pairs, size=args.size, seed=args.seed)
    table = [[r[k] for k in EVAL_HEADER] for r in rows]
    _write_csv(args.out, EVAL_HEADER, table)
    _print_table(EVAL_HEADER, table)
    return EXIT_OK


def cmd_modulation_report(args) -> int:
    specs = _tasks(args.tasks)
    rows = []
    if args.learnable:
        if args.ckpt:
            if len(args.ckpt) != len(specs):
                raise ConfigError("--learnable with --ckpt needs one checkpoint per task")
            models = [load_models(p)[1] for p in args.ckpt]
        else:
            run = RunConfig.load(args.config, args.seed)
            models = []
            for spec in specs:
                rformer, _ = train_learned_ratios(spec, run.train, run.rformer)
                models.append(rformer)
                if args.save_dir:
                    os.makedirs(args.save_dir, exist_ok=True)
                    save_models(os.path.join(args.save_dir, f"{spec.label.replace(':', '_')}.ckpt"),
                                None, rformer, run.train)
        for spec, rformer in zip(specs, models):
            if not rformer.learnable_ratios:
                raise ConfigError("--learnable needs checkpoints trained with free ratios")
            rows += modulation_report(None, rformer, [spec], args.samples, args.size, args.seed)
    else:
        if not args.ckpt or len(args.ckpt) != 1:
            raise ConfigError("embedded mode needs exactly one --ckpt")
        dformer, rformer = load_models(args.ckpt[0])
        rows = modulation_report(dformer, rformer, specs, args.samples, args.size, args.seed)
    bands = sorted({k for r in rows for k in r if k.startswith("M")}, key=lambda k: int(k[1:]))
    header = ["task", "n"] + bands
    table = [[r[k] for k in header] for r in rows]
    _write_csv(args.out, header, table)
    _print_table(header, table)
    return EXIT_OK


def cmd_decompose(args) -> int:
    img = imageio.read_image(args.input) if args.input else synth_clean(args.seed, args.size, args.size)
    bands = spectral.decompose(img, args.L).bands
    os.makedirs(args.out_dir, exist_ok=True)
    for k, band in enumerate(bands, start=1):
        # non-DC bands are zero-mean; shift them to mid-grey for viewing
        view = band if k == 1 else band + 0.5
        imageio.write_ppm(os.path.join(args.out_dir, f"band_{k}.ppm"), view)
    print(f"wrote {len(bands)} band images to {args.out_dir}", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="freqrestore", description="Frequency-aware restoration experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def seeded(sp):
        sp.add_argument("--seed", type=int, default=None,
                        help="random seed (default: $FREQRESTORE_SEED or 0)")
        return sp

    a = seeded(sub.add_parser("analyze", help="frequency statistics of degraded/clean pairs"))
    a.add_argument("--tasks", nargs="+", help=f"degradations, e.g. noise:25 (default: {' '.join(DEFAULT_TASKS)})")
    a.add_argument("--pairs", type=int, default=150)
    a.add_argument("--size", type=int, default=64)
    a.add_argument("--out", help="CSV path (default: stdout)")
    a.set_defaults(func=cmd_analyze)

    t = seeded(sub.add_parser("train", help="two-stage training from a JSON run config"))
    t.add_argument("--config", help="run config JSON")
    t.add_argument("--tasks", nargs="+")
    t.add_argument("--out", help="output directory for metrics.jsonl and checkpoints")
    t.add_argument("--stage1-epochs", type=int)
    t.add_argument("--stage2-epochs", type=int)
    t.add_argument("--steps-per-epoch", type=int)
    t.add_argument("--batch-size", type=int)
    t.set_defaults(func=cmd_train)

    e = seeded(sub.add_parser("eval", help="PSNR/SSIM of a checkpoint on held-out pairs"))
    e.add_argument("--ckpt", required=True)
    e.add_argument("--tasks", nargs="+")
    e.add_argument("--pairs", type=int, default=20)
    e.add_argument("--size", type=int, default=64)
    e.add_argument("--out", help="CSV path (default: stdout)")
    e.set_defaults(func=cmd_eval)

    m = seeded(sub.add_parser("modulation-report", help="mean modulation ratio per band and task"))
    m.add_argument("--ckpt", nargs="+")
    m.add_argument("--tasks", nargs="+")
    m.add_argument("--samples", type=int, default=16)
    m.add_argument("--size", type=int, default=32)
    m.add_argument("--learnable", action="store_true",
                   help="free-parameter ratios, one model per task (trained here unless --ckpt is given)")
    m.add_argument("--config", help="run config JSON used when training learnable models")
    m.add_argument("--save-dir", help="where to save models trained with --learnable")
    m.add_argument("--out", help="CSV path (default: stdout)")
    m.set_defaults(func=cmd_modulation_report)

    d = seeded(sub.add_parser("decompose", help="write the frequency bands of one image as PPMs"))
    d.add_argument("--input", help="PPM or PNG image (default: a procedural image)")
    d.add_argument("--L", type=int, default=2)
    d.add_argument("--size", type=int, default=64)
    d.add_argument("--out-dir", default="bands")
    d.set_defaults(func=cmd_decompose)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is None and args.command != "train":
            args.seed = default_seed()
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ContractError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
