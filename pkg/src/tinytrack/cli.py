"""Command-line entry points: train, track, eval, gradcheck, ablate."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .ablation import AXES, ablate
from .attention import write_attention_map
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, gradcheck_config
from .data import load_sequence_dir, read_results, write_results
from .gradcheck import gradcheck
from .metrics import evaluate
from .tracker import run_sequence
from .train import train, write_loss_log

log = logging.getLogger("tinytrack")


def cmd_train(args) -> int:
    cfg = RunConfig.load(args.config)
    every = max(1, cfg.train.steps // 20)

    def progress(row):
        if row["step"] % every == 0 or row["step"] == cfg.train.steps - 1:
            log.info("step %5d  total %.4f  cls %.4f  reg %.4f  lr %.2e", row["step"], row["total"],
                     row["cls_loss"], row["reg_loss"], row["lr"])

    result = train(cfg, progress=progress)
    out = Path(args.out)
    save_checkpoint(out, result.model, cfg)
    log_path = Path(args.log) if args.log else out.with_suffix(".csv")
    write_loss_log(result.log, log_path)
    print(f"checkpoint: {out}\nloss log:   {log_path}")
    return 0


def cmd_track(args) -> int:
    model, cfg = load_checkpoint(args.ckpt)
    track_cfg = cfg.track
    if args.gamma is not None:
        track_cfg = dataclasses.replace(track_cfg, gamma=args.gamma)
        track_cfg.validate()
    seq = load_sequence_dir(args.seq)
    on_step = None
    if args.dump_attn:
        dump = Path(args.dump_attn)
        dump.mkdir(parents=True, exist_ok=True)

        def on_step(i, state):
            for k, amap in enumerate(state.attention):
                write_attention_map(dump / f"frame{i + 1:05d}_attn{k:02d}.ttam", amap)

    boxes = run_sequence(model, seq.frames, seq.box(0), track_cfg, on_step=on_step)
    write_results(args.out, boxes)
    print(f"{len(boxes)} frames -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    pred = read_results(args.results)
    seq = load_sequence_dir(args.seq)
    if len(pred) != len(seq):
        raise ValueError(f"{args.results} has {len(pred)} frames, {args.seq} has {len(seq)}")
    report = evaluate({seq.name: pred}, {seq.name: seq.gt})
    Path(args.out).write_text(report.to_json() + "\n")
    print(report.table())
    return 0


def cmd_gradcheck(args) -> int:
    cfg = RunConfig.load(args.config) if args.config else gradcheck_config()
    report = gradcheck(cfg, max_params=args.max_params)
    print("\n".join(report.lines()))
    return 0 if report.passed else 1


def cmd_ablate(args) -> int:
    cfg = RunConfig.load(args.config)
    result = ablate(cfg, args.axis)
    print(result.table())
    if args.out:
        doc = {"axis": result.axis, "delta_suc": result.delta,
               "rows": [{"label": r.label, "n_parameters": r.n_parameters, **r.report.to_dict()}
                        for r in result.rows]}
        Path(args.out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tinytrack", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write a checkpoint plus CSV loss log")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="loss log path (default: checkpoint path with .csv)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("track", help="track one sequence directory")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--seq", required=True, help="directory with frames and groundtruth.txt")
    p.add_argument("--out", required=True, help="results file (frame,x,y,w,h)")
    p.add_argument("--gamma", type=float, help="override the window-penalty weight")
    p.add_argument("--dump-attn", help="write per-frame attention maps into this directory")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="score a results file against a sequence's ground truth")
    p.add_argument("--results", required=True)
    p.add_argument("--seq", required=True)
    p.add_argument("--out", required=True, help="JSON report path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter gradient")
    p.add_argument("--config")
    p.add_argument("--max-params", type=int, help="check only the first N scalars of each tensor")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train paired configs differing along one axis")
    p.add_argument("--axis", required=True, choices=sorted(AXES))
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="optional JSON comparison")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
