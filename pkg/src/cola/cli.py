"""Single executable driving the whole pipeline.

Subcommands: synth, train, infer, eval, mine, gradcheck, repro. Exit codes:
0 success, 1 usage, 2 data/config error, 3 numeric failure. Human-readable
messages go to stderr; machine output goes to files (or stdout with --json).
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from cola import config as config_mod
from cola import data as data_io
from cola import evaluation, gradcheck, inference, model, repro, trainer
from cola.errors import ConfigError, DataFormatError, TrainingDiverged

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="cola", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config key (repeatable)")
        p.add_argument("--seed", type=int, help="shortcut for --set seed=N")
        p.add_argument("--json", action="store_true",
                       help="emit a machine-readable summary on stdout")

    p = sub.add_parser("synth", help="generate the synthetic dataset")
    p.add_argument("--out", required=True)
    common(p)

    p = sub.add_parser("train", help="train from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    common(p)

    p = sub.add_parser("infer", help="localize actions with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="proposal file (JSON lines)")
    common(p)

    p = sub.add_parser("eval", help="score proposals against ground truth")
    p.add_argument("--preds", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--grid", help="IoU grid, e.g. 0.1:0.7:0.1")
    p.add_argument("--out", help="write the report as JSON here")
    common(p)

    p = sub.add_parser("mine", help="dump mined snippet sets per video")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    common(p)

    p = sub.add_parser("gradcheck", help="run the finite-difference suite")
    common(p)

    p = sub.add_parser("repro", help="run the synthetic comparison experiment")
    p.add_argument("--out", required=True)
    p.add_argument("--data", help="reuse an existing dataset directory")
    p.add_argument("--seeds", default="42,43,44", help="comma list of training seeds")
    p.add_argument("--quick", action="store_true",
                   help="single seed, smaller budget (finishes in minutes)")
    common(p)
    return parser


def load_run_config(args):
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return config_mod.load_config(args.config, overrides)


def cmd_synth(args):
    cfg = load_run_config(args)
    paths = data_io.generate_synthetic(cfg.synth_config(), args.out)
    summary = {name: str(path) for name, path in paths.items()}
    if args.json:
        print(json.dumps(summary))
    else:
        print(f"wrote dataset under {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_train(args):
    cfg = load_run_config(args)
    records = data_io.read_manifest(args.manifest, training=True)
    stats = trainer.train(records, cfg.train_config(), args.out,
                          manifest_dir=Path(args.manifest).parent)
    summary = {"epochs": len(stats),
               "final": stats[-1].to_json() if stats else None,
               "checkpoint": str(Path(args.out) / "model.ckpt")}
    if args.json:
        print(json.dumps(summary))
    else:
        print(f"trained {len(stats)} epochs -> {summary['checkpoint']}", file=sys.stderr)
    return EXIT_OK


def cmd_infer(args):
    cfg = load_run_config(args)
    model_cfg, params = model.load_checkpoint(args.checkpoint)
    records = data_io.read_manifest(args.manifest)
    proposals, errors = inference.localize(
        records, params, model_cfg, cfg.mining_config(), cfg.infer_config(),
        cfg.sample_length, manifest_dir=Path(args.manifest).parent)
    inference.write_proposals(args.out, proposals, errors)
    summary = {"proposals": len(proposals), "errors": len(errors), "out": args.out}
    if args.json:
        print(json.dumps(summary))
    else:
        print(f"{len(proposals)} proposals ({len(errors)} video errors) -> {args.out}",
              file=sys.stderr)
    return EXIT_OK


def cmd_eval(args):
    cfg = load_run_config(args)
    grid = config_mod.parse_grid(args.grid) if args.grid else cfg.eval_grid()
    preds = inference.read_proposals(args.preds)
    gt = data_io.read_gt(args.gt)
    report = evaluation.evaluate(preds, gt, grid)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(report.to_json(), fh, indent=2, sort_keys=True)
    if args.json:
        print(json.dumps(report.to_json()))
    else:
        print(report.format_table())
    return EXIT_OK


def cmd_mine(args):
    cfg = load_run_config(args)
    model_cfg, params = model.load_checkpoint(args.checkpoint)
    records = data_io.read_manifest(args.manifest)
    records.sort(key=lambda r: r.video_id)
    cache = trainer.FeatureCache(Path(args.manifest).parent)
    trainer.dump_mining(records, cache, params, model_cfg, cfg.mining_config(),
                        np.random.default_rng(cfg.seed), args.out)
    if args.json:
        print(json.dumps({"videos": len(records), "out": args.out}))
    else:
        print(f"mined {len(records)} videos -> {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_gradcheck(args):
    load_run_config(args)  # validate config if given
    results = gradcheck.run_suite()
    failed = [r for r in results if not r.passed]
    if args.json:
        print(json.dumps([{"name": r.name, "max_rel_err": r.max_rel_err,
                           "passed": r.passed} for r in results]))
    else:
        for r in results:
            print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: "
                  f"max rel err {r.max_rel_err:.2e}")
    return EXIT_OK if not failed else EXIT_NUMERIC


def cmd_repro(args):
    cfg = load_run_config(args)
    seeds = [int(s) for s in str(args.seeds).split(",") if s.strip()]
    if args.quick:
        seeds = seeds[:1]
    summary = repro.run_experiment(cfg, args.out, seeds, with_negative_ablation=False,
                                   data_dir=args.data,
                                   progress=lambda msg: print(msg, file=sys.stderr))
    if args.json:
        print(json.dumps(summary, sort_keys=True))
    else:
        print(repro.format_summary(summary))
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "mine": cmd_mine,
    "gradcheck": cmd_gradcheck,
    "repro": cmd_repro,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DataFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
