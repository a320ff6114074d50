"""``core-ecg`` command line.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure. ``CORE_ECG_THREADS`` caps BLAS/OpenMP threads.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .autodiff import CheckpointError, Tensor, load_checkpoint
from .autodiff.gradcheck import DEFAULT_SHAPES, grad_check
from .config import ConfigError, RunConfig, load_config, preset
from .fda import FrequencyImportance, augment_signal, importance_map
from .signal import (
    LEAD_NAMES,
    DatasetManifest,
    RecordError,
    WindowCache,
    build_cache,
    crop_windows,
    generate_synthetic,
    prepare_windows,
    read_record,
    write_record,
    zscore_normalize,
)
from .stdm import sample_mask
from .trainer import NonFiniteError, evaluate, finetune, load_classifier, pretrain, sweep_masks

log = logging.getLogger("core_ecg")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _with_epochs(cfg, epochs):
    if epochs is None:
        return cfg
    return replace(cfg, epochs=epochs, warmup_epochs=min(cfg.warmup_epochs, max(epochs - 1, 0)))


def _run_config(args) -> RunConfig:
    return load_config(args.config) if args.config else RunConfig.from_dict(preset("toy"))


def _out_dir(args, rc: RunConfig) -> Path:
    out = Path(args.out or rc.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=1, sort_keys=True, default=float))


# ------------------------------------------------------------------- commands


def cmd_gen(args) -> int:
    records, manifest = generate_synthetic(args.n, fs=args.fs, duration_s=args.duration, class_mix=args.class_mix,
                                           seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ext = "cecg" if args.format == "cecg" else "csv"
    for rec, entry in zip(records, manifest.entries):
        name = f"{rec.record_id}.{ext}"
        write_record(rec, out / name)
        entry.path = name
    manifest.save(out / "manifest.json")
    log.info("wrote %d records to %s", len(records), out)
    return EXIT_OK


def cmd_preprocess(args) -> int:
    mpath = Path(args.manifest)
    manifest = DatasetManifest.load(mpath)
    records, failures = [], []
    for e in manifest.entries:
        try:
            rec = read_record(mpath.parent / e.path, fs=args.fs)
            records.append(rec.replace(label=e.label) if rec.label is None else rec)
        except (RecordError, OSError) as exc:
            failures.append((e.record_id, str(exc)))
    splits = {e.record_id: e.split for e in manifest.entries}
    try:
        cache, more = build_cache(records, splits, manifest.class_names, manifest.multilabel)
    except RecordError as exc:
        for rid, msg in failures:
            log.error("skipped %s: %s", rid, msg)
        raise
    failures += more
    for rid, msg in failures:
        log.error("skipped %s: %s", rid, msg)
    cache.save(args.out)
    log.info("cached %d windows from %d records (%d failed) -> %s", len(cache.record_ids),
             len(records) - len(more), len(failures), args.out)
    return EXIT_DATA if failures else EXIT_OK


def cmd_pretrain(args) -> int:
    rc = _run_config(args)
    cfg = _with_epochs(rc.train, args.epochs)
    out = _out_dir(args, rc)
    res = pretrain(cfg, rc.model, WindowCache.load(args.cache), out_dir=out)
    _print_json({"epochs": res.epochs, "checkpoint": str(res.checkpoints[-1])})
    return EXIT_OK


def cmd_finetune(args) -> int:
    rc = _run_config(args)
    cfg = _with_epochs(rc.finetune, args.epochs)
    if args.lead_subset:
        cfg = replace(cfg, lead_subset=args.lead_subset.split(","))
    if args.data_ratio is not None:
        cfg = replace(cfg, data_ratio=args.data_ratio)
    out = _out_dir(args, rc)
    res = finetune(cfg, rc.model, WindowCache.load(args.cache), checkpoint=args.checkpoint, out_dir=out)
    _print_json({"best_epoch": res.best_epoch, "val": res.val, "test": res.test, "checkpoint": str(res.checkpoint)})
    return EXIT_OK


def cmd_eval(args) -> int:
    model, header = load_classifier(args.checkpoint)
    cache = WindowCache.load(args.cache)
    leads = header["config"].get("leads")
    if leads and list(leads) != list(cache.leads):
        cache = cache.select_leads(leads)
    _print_json(evaluate(model, cache, args.split))
    return EXIT_OK


def cmd_sweep(args) -> int:
    rc = _run_config(args)
    pre = _with_epochs(rc.train, args.epochs)
    ft = _with_epochs(rc.finetune, args.finetune_epochs)
    out = _out_dir(args, rc)
    csv_path = Path(args.csv) if args.csv else out / "sweep.csv"
    rows = sweep_masks(pre, ft, rc.model, WindowCache.load(args.cache), args.p_time, args.p_lead, out_csv=csv_path)
    log.info("wrote %d sweep rows to %s", len(rows), csv_path)
    return EXIT_OK


def _checkpoint_fda(path) -> tuple[np.ndarray, dict]:
    state, header = load_checkpoint(path)
    if "fda.W" not in state:
        raise CheckpointError(f"{path} holds no fda.W")
    return state["fda.W"].astype(np.float64), header


def cmd_augment(args) -> int:
    rec = read_record(args.input, fs=args.fs)
    x = rec.samples.astype(np.float64)
    if args.checkpoint:
        W, header = _checkpoint_fda(args.checkpoint)
        crop_len = header["config"]["train"].get("crop_len", 2250)
        win = prepare_windows(rec)[0]
        (crop,) = crop_windows(win, mode="center", crop_len=crop_len)
        rec = zscore_normalize(crop)
        x = rec.samples.astype(np.float64)
        W = W[[LEAD_NAMES.index(n) for n in rec.leads]]
    else:
        W = np.zeros((x.shape[0], x.shape[1] // 2 + 1))
    fi = FrequencyImportance(W=Tensor(W), epsilon=args.epsilon)
    sig, ns = augment_signal(x, fi, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    aug = rec.replace(samples=sig.data.astype(np.float32), record_id=f"{rec.record_id}_fda{args.seed}")
    aug.meta["fda_seed"] = args.seed
    write_record(aug, out / f"{aug.record_id}.cecg")
    A = importance_map(fi).data
    with open(out / f"{aug.record_id}_importance.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lead", "bin", "A", "lambda", "threshold"])
        for c, lead in enumerate(rec.leads):
            for k in range(A.shape[1]):
                w.writerow([lead, k, repr(float(A[c, k])), repr(float(ns.lam[c, k])), repr(float(ns.threshold[c]))])
    log.info("augmented %s -> %s", args.input, out)
    return EXIT_OK


def cmd_mask(args) -> int:
    plan = sample_mask(args.c, args.n, args.p_time, args.p_lead, args.k, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("V", "M", "D"):
        np.savetxt(out / f"{name}.csv", getattr(plan, name).astype(int), fmt="%d", delimiter=",")
    _print_json({"visible": int(plan.V.sum()), "masked": int(plan.M.sum()), "dropped": int(plan.D.sum())})
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    kinds = args.kind or sorted(DEFAULT_SHAPES)
    reports = [grad_check(k, tol=args.tol, seed=args.seed).as_dict() for k in kinds]
    _print_json(reports)
    return EXIT_OK if all(r["pass"] for r in reports) else EXIT_NUMERIC


# --------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="core-ecg", description="ECG self-supervised pretraining at desk scale")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic 12-lead dataset")
    g.add_argument("--n", type=int, default=200)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--fs", type=float, default=500.0)
    g.add_argument("--duration", type=float, default=10.0)
    g.add_argument("--class-mix", type=_floats, default=[0.25, 0.25, 0.25, 0.25])
    g.add_argument("--format", choices=("cecg", "csv"), default="cecg")
    g.set_defaults(func=cmd_gen)

    pp = sub.add_parser("preprocess", help="filter, resample and window records into a cache")
    pp.add_argument("--manifest", required=True)
    pp.add_argument("--out", required=True)
    pp.add_argument("--fs", type=float, default=500.0, help="sampling rate assumed for CSV records")
    pp.set_defaults(func=cmd_preprocess)

    for name, func in (("pretrain", cmd_pretrain), ("finetune", cmd_finetune), ("sweep", cmd_sweep)):
        sp = sub.add_parser(name)
        sp.add_argument("--config")
        sp.add_argument("--cache", required=True)
        sp.add_argument("--out")
        sp.add_argument("--epochs", type=int)
        sp.set_defaults(func=func)
        if name == "finetune":
            sp.add_argument("--checkpoint", help="pretraining checkpoint; omit to train from scratch")
            sp.add_argument("--lead-subset", help="comma-separated lead names, e.g. I")
            sp.add_argument("--data-ratio", type=float)
        if name == "sweep":
            sp.add_argument("--p-time", type=_floats, default=[0.5])
            sp.add_argument("--p-lead", type=_floats, default=[0.2])
            sp.add_argument("--finetune-epochs", type=int)
            sp.add_argument("--csv")

    e = sub.add_parser("eval", help="metrics of a fine-tuned checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--cache", required=True)
    e.add_argument("--split", choices=("train", "val", "test"), default="test")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("augment", help="frequency-domain augmentation of one record")
    a.add_argument("--input", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--checkpoint", help="take importance weights from a pretraining checkpoint")
    a.add_argument("--epsilon", type=float, default=1e-6)
    a.add_argument("--fs", type=float, default=500.0)
    a.set_defaults(func=cmd_augment)

    m = sub.add_parser("mask", help="sample one visible/masked/dropped plan")
    m.add_argument("--c", type=int, default=12)
    m.add_argument("--n", type=int, default=30)
    m.add_argument("--p-time", type=float, default=0.5)
    m.add_argument("--p-lead", type=float, default=0.2)
    m.add_argument("--k", type=int, default=4)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_mask)

    gc = sub.add_parser("gradcheck", help="finite-difference check of autodiff primitives")
    gc.add_argument("--kind", action="append", choices=sorted(DEFAULT_SHAPES))
    gc.add_argument("--tol", type=float, default=1e-4)
    gc.add_argument("--seed", type=int, default=0)
    gc.set_defaults(func=cmd_gradcheck)
    return p


def _threads() -> int | None:
    raw = os.environ.get("CORE_ECG_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"CORE_ECG_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"CORE_ECG_THREADS must be a positive integer, got {raw!r}")
    return n


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        n = _threads()
        with threadpool_limits(limits=n) if n else contextlib.nullcontext():
            return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RecordError, CheckpointError, FileNotFoundError, KeyError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
