"""Command-line entry point: gen, train, eval, degrade, estimate-qf, gradcheck.

Each subcommand prints one JSON object on stdout when it succeeds. Failures
exit nonzero and print ``{"error": <type>, "message": <text>}`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .checkpoint import Checkpoint
from .data import WORKERS_ENV, DatasetSpec, build_dataset, materialize, read_manifest, write_manifest
from .degrade import DegradeParams, degrade_pipeline
from .model import ModelConfig, desk_config, full_config
from .plates import Alphabet, read_pgm, write_pgm
from .qtables import estimate_qf, parse_table, standard_qtable, table_distances
from .training import SIDE_INFO_MODES, TrainConfig, evaluate, train

EXIT_FAILURE = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True, ensure_ascii=False))


# -- gen ------------------------------------------------------------------

def _spec_from_args(a) -> DatasetSpec:
    if a.profile == "desk":
        base = dict(width=120, height=28, chars_range=(4, 6), r_w_range=(20, 120))
    else:
        base = {}
    for f in fields(DatasetSpec):
        v = getattr(a, f.name, None)
        if v is not None:
            base[f.name] = tuple(v) if isinstance(v, list) else v
    return DatasetSpec(**base)


def cmd_gen(a) -> dict:
    spec = _spec_from_args(a)
    n = write_manifest(a.out, spec)
    result = {"manifest": str(a.out), "samples": n, "cells": len(spec.cells())}
    if a.pgm_dir:
        out = Path(a.pgm_dir)
        out.mkdir(parents=True, exist_ok=True)
        for k, s in enumerate(build_dataset(spec)):
            write_pgm(out / f"{k:06d}_qf{s.qf:03d}_rw{s.r_w:03d}.pgm", s.image)
        result["pgm_dir"] = str(out)
    return result


# -- train / eval -----------------------------------------------------------

MODEL_FIELDS = ("d_model", "seq_w", "enc_layers", "dec_layers", "heads", "d_ff", "k_classes",
                "max_decode_len", "dropout_emb", "dropout_inner")


def _model_config(a, alphabet: Alphabet) -> ModelConfig:
    cfg = full_config(0, alphabet.vocab_size) if a.profile == "full" else desk_config(0, alphabet.vocab_size)
    over = {f: getattr(a, f) for f in MODEL_FIELDS if getattr(a, f) is not None}
    return cfg.with_(**over)


def _corpus(path, alphabet):
    spec, _ = read_manifest(path)
    return spec, materialize(spec, alphabet)


def cmd_train(a) -> dict:
    alphabet = Alphabet.german(a.alphabet)
    cfg = _model_config(a, alphabet)
    tspec, tr = _corpus(a.train, alphabet)
    _, va = _corpus(a.val, alphabet)
    if (tspec.height, tspec.width) != (cfg.d_model, cfg.seq_w):
        raise ValueError(f"manifest images are {tspec.width}x{tspec.height}, model expects {cfg.seq_w}x{cfg.d_model}")
    tcfg = TrainConfig(epochs=a.epochs, batch_size=a.batch_size, lr=a.lr, seed=a.seed,
                       factor=a.factor, patience=a.patience,
                       stop_on_train_acc_every=a.stop_on_train_acc_every)
    res = train(cfg, tr, va, tcfg)
    res.checkpoint.meta["alphabet"] = alphabet.glyphs
    res.checkpoint.save(a.out)
    if a.history:
        Path(a.history).write_text(json.dumps(res.history, indent=1))
    last = res.history[-1]
    return {"checkpoint": str(a.out), "epochs_run": len(res.history), "best_epoch": res.best_epoch,
            "train_loss": last["train_loss"], "val_loss": last["val_loss"]}


def cmd_eval(a) -> dict:
    ck = Checkpoint.load(a.ckpt)
    alphabet = Alphabet(ck.meta["alphabet"]) if "alphabet" in ck.meta else Alphabet.german()
    mode = a.side_info_mode or ("oracle" if ck.config.k_classes else "disabled")
    _, corpus = _corpus(a.data, alphabet)
    rep = evaluate(ck, corpus, mode, alphabet)
    if a.report:
        Path(a.report).write_text(json.dumps(rep.to_dict(), indent=1, ensure_ascii=False))
    return {"acc_lp": rep.acc_lp, "cer": rep.cer, "n": rep.n, "cells": len(rep.cells), "mode": mode}


# -- single images ----------------------------------------------------------

def cmd_degrade(a) -> dict:
    img = read_pgm(a.input)
    table = parse_table(Path(a.qtable).read_text()) if a.qtable else standard_qtable(a.qf)
    out = degrade_pipeline(img, DegradeParams(a.r_w, a.qf, a.seed), table)
    write_pgm(a.output, out)
    return {"output": str(a.output), "shape": list(out.shape), "qf": a.qf, "r_w": a.r_w}


def cmd_estimate_qf(a) -> dict:
    table = parse_table(Path(a.table).read_text())
    qf = estimate_qf(table)
    return {"qf": qf, "distance": float(table_distances(table)[qf - 1])}


def cmd_gradcheck(a) -> dict:
    from .selfcheck import run_gradcheck

    results = run_gradcheck(a.seed)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'} {r.name:<14} rel_err={r.error:.2e} tol={r.tol:.0e}", file=sys.stderr)
    failed = [r.name for r in results if not r.ok]
    if failed:
        raise ArithmeticError(f"gradient check failed for {', '.join(failed)}")
    return {"checks": len(results), "max_error": max(r.error for r in results)}


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="flpr", description="Forensic license-plate recognition workbench.",
                epilog=f"Set {WORKERS_ENV} to render datasets with several processes.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="write a dataset manifest (and optionally PGM images)")
    g.add_argument("--out", required=True, type=Path)
    g.add_argument("--profile", choices=("desk", "full"), default="desk")
    g.add_argument("--sample_count", type=int, required=True)
    g.add_argument("--base_seed", type=int)
    g.add_argument("--r_w_range", type=int, nargs=2, metavar=("LO", "HI"))
    g.add_argument("--qf_range", type=int, nargs=2, metavar=("LO", "HI"))
    g.add_argument("--grid", choices=("random", "full", "low"))
    g.add_argument("--width", type=int)
    g.add_argument("--height", type=int)
    g.add_argument("--chars_range", type=int, nargs=2, metavar=("LO", "HI"))
    g.add_argument("--k_classes", type=int)
    g.add_argument("--pgm_dir", type=Path, help="also write every degraded image here")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model on manifest data")
    t.add_argument("--train", required=True, type=Path)
    t.add_argument("--val", required=True, type=Path)
    t.add_argument("--out", required=True, type=Path)
    t.add_argument("--history", type=Path)
    t.add_argument("--profile", choices=("desk", "full"), default="desk")
    t.add_argument("--alphabet", type=int, choices=(40, 41), default=40)
    for name in MODEL_FIELDS:
        t.add_argument(f"--{name}", type=float if name.startswith("dropout") else int)
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--batch_size", type=int, default=64)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--factor", type=float, default=0.1)
    t.add_argument("--patience", type=int, default=3)
    t.add_argument("--stop_on_train_acc_every", type=int, default=0)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on manifest data")
    e.add_argument("--ckpt", required=True, type=Path)
    e.add_argument("--data", required=True, type=Path)
    e.add_argument("--side_info_mode", choices=SIDE_INFO_MODES)
    e.add_argument("--report", type=Path, help="write the per-cell report as JSON")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("degrade", help="downsample + JPEG + upsample one PGM image")
    d.add_argument("input", type=Path)
    d.add_argument("output", type=Path)
    d.add_argument("--r_w", type=int, required=True)
    d.add_argument("--qf", type=int, required=True)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--qtable", type=Path, help="64-integer table file; overrides the standard table for --qf")
    d.set_defaults(func=cmd_degrade)

    q = sub.add_parser("estimate-qf", help="nearest standard quality factor for a table file")
    q.add_argument("table", type=Path)
    q.set_defaults(func=cmd_estimate_qf)

    c = sub.add_parser("gradcheck", help="finite-difference check of every op and a tiny model")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(json.dumps({"error": "UsageError", "message": str(exc)}), file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _emit(args.func(args))
    except (ValueError, KeyError, OSError, ArithmeticError, RuntimeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_FAILURE
    return 0


if __name__ == "__main__":
    sys.exit(main())
