"""Command-line entry point: ``orderdisent <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data/integrity error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import config as cfgmod
from . import seqgen
from .autodiff import NonFiniteError
from .experiments import Experiment, RowSpec, run_ablation, run_comparison, sequence_strips
from .gradcheck import run_gradcheck
from .metrics import METRIC_NAMES, evaluate_predictions, fmt_pct
from .net import CheckpointError, load_checkpoint, save_checkpoint
from .trainer import METHODS, TrainingError, predict_proba, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("orderdisent")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}")
    if not seeds:
        raise argparse.ArgumentTypeError("at least one seed required")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="orderdisent", description="Order-guided disentangled representation learning toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, data=True, out_required=False):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", required=out_required, help="output directory")
        if data:
            sp.add_argument("--data", help="dataset directory (generated from the config if omitted)")
        return sp

    common(sub.add_parser("gen", help="generate a synthetic dataset"), data=False, out_required=True)
    t = common(sub.add_parser("train", help="train one method"), out_required=True)
    t.add_argument("--method", choices=METHODS)
    e = common(sub.add_parser("eval", help="evaluate a checkpoint"))
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", choices=seqgen.SPLITS, default="test")
    for name, helptext in (("compare", "method comparison table"), ("ablate", "ablation table")):
        sp = common(sub.add_parser(name, help=helptext), out_required=True)
        sp.add_argument("--seeds", type=_seeds, default=[0, 1, 2, 3, 4])
    s = common(sub.add_parser("strips", help="per-sequence prediction strips"), out_required=True)
    s.add_argument("--sequences", type=_seeds, help="sequence ids (default: the test split)")
    g = sub.add_parser("gradcheck", help="finite-difference audit of the training graph")
    g.add_argument("--cases", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tol", type=float, default=1e-4)
    return p


def _dataset(args, rc: cfgmod.RunConfig):
    if getattr(args, "data", None):
        data, manifest = seqgen.load(args.data)
    else:
        data, manifest = seqgen.generate(rc.generator, args.seed)
    if data.x.shape[1] != rc.generator.input_dim:
        rc = rc.with_overrides({"input_dim": str(data.x.shape[1])})
    return data, manifest, rc


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _file_log(out: Path, name: str = "run.log") -> logging.Handler:
    handler = logging.FileHandler(out / name, mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    return handler


def cmd_gen(args, rc):
    data, manifest = seqgen.generate(rc.generator, args.seed)
    out = _out(args)
    seqgen.save(data, manifest, out)
    (out / "config.txt").write_text(rc.echo())
    print(f"wrote {len(data)} records in {manifest.n_sequences} sequences to {out}")


def _epoch_rows(result):
    terms = list(result.history[0].values) if result.history else []
    rows = [["epoch", *terms, *(f"val_{m}" for m in METRIC_NAMES)]]
    for e, bundle in enumerate(result.history):
        val = result.val_metrics[e].as_dict() if e < len(result.val_metrics) else {}
        rows.append([e + 1, *(f"{bundle[t]:.6f}" for t in terms),
                     *("" if val.get(m) is None else f"{val[m]:.2f}" for m in METRIC_NAMES)])
    return rows


def cmd_train(args, rc):
    if args.method:
        rc = replace(rc, train=replace(rc.train, method=args.method))
    data, manifest, rc = _dataset(args, rc)
    out = _out(args)
    handler = _file_log(out)
    try:
        exp = Experiment(data, manifest, rc.net, rc.train)
        log.info("method %s seed %d", rc.train.method, args.seed)
        log.info("config hash %s records hash %s", manifest.config_hash, seqgen.records_hash(data))
        cfg = replace(rc.train, seed=args.seed)
        result = train(exp.train_set, manifest.visible_uc(exp.train_set), exp.val_set, rc.net, cfg)
        (out / "config.txt").write_text(rc.echo())
        with open(out / "metrics.csv", "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(_epoch_rows(result))
        save_checkpoint(result.params, out / "checkpoint.npz")
        report = exp.test_report(result.params)
        log.info("selected epoch %d", result.selected_epoch)
        log.info("test %s", " ".join(f"{k}={fmt_pct(v)}" for k, v in report.as_dict().items()))
    finally:
        log.removeHandler(handler)
        handler.close()
    print(f"selected epoch {result.selected_epoch}; test accuracy {fmt_pct(report.accuracy)}")


def cmd_eval(args, rc):
    params = load_checkpoint(args.checkpoint)
    data, manifest, rc = _dataset(args, rc)
    part = data.subset(manifest.split_rows(data, args.split))
    if part.x.shape[1] != params.config.input_dim:
        raise seqgen.DatasetError("checkpoint input_dim does not match the dataset")
    report = evaluate_predictions(predict_proba(params, part.x).argmax(axis=1), part.uc)
    header = ",".join(METRIC_NAMES)
    line = ",".join("" if v is None else f"{v:.2f}" for v in report.as_dict().values())
    print(" ".join(f"{k}={fmt_pct(v)}" for k, v in report.as_dict().items()))
    if args.out:
        (_out(args) / "eval.csv").write_text(f"split,{header}\n{args.split},{line}\n")


def _table(args, rc, driver, name):
    data, manifest, rc = _dataset(args, rc)
    table = driver(data, manifest, args.seeds, rc.net, rc.train)
    out = _out(args)
    (out / f"{name}.csv").write_text(table.to_csv())
    (out / "config.txt").write_text(rc.echo())
    print(table.render())


def cmd_compare(args, rc):
    _table(args, rc, run_comparison, "comparison")


def cmd_ablate(args, rc):
    _table(args, rc, run_ablation, "ablation")


def cmd_strips(args, rc):
    data, manifest, rc = _dataset(args, rc)
    exp = Experiment(data, manifest, rc.net, rc.train)
    with_order = exp.run(RowSpec("order", "proposed"), args.seed).params
    without = exp.run(RowSpec("no order", "proposed_no_order"), args.seed).params
    ids = args.sequences or manifest.split_ids("test")
    try:
        report = sequence_strips(with_order, without, data, manifest, ids, _out(args))
    except KeyError as exc:
        raise seqgen.DatasetError(str(exc.args[0])) from exc
    (Path(args.out) / "config.txt").write_text(rc.echo())
    print(f"wrote {report.csv_path} and {report.svg_path}")


def cmd_gradcheck(args, rc):
    if args.cases < 1:
        raise UsageError("--cases must be positive")
    report = run_gradcheck(args.cases, args.seed)
    print(f"cases {report.cases}  max relative error {report.max_rel_error:.3e}  "
          f"routing violations {report.routing_violations}  {report.seconds:.1f}s")
    if not report.passed(args.tol):
        print(f"FAILED: tolerance {args.tol:g}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "compare": cmd_compare,
    "ablate": cmd_ablate, "strips": cmd_strips, "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        rc = cfgmod.load(getattr(args, "config", None))
        return COMMANDS[args.command](args, rc) or EXIT_OK
    except (UsageError, cfgmod.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (seqgen.DatasetError, CheckpointError, TrainingError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
