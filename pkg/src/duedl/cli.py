"""Command-line interface: ``duedl <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numeric failure.
"""
import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import fields, replace

import numpy as np

from . import metrics, synthdata, tnsr
from . import tensor as T
from .dualnet import ConfigMismatchError, DualNet
from .train import TrainConfig, TrainingDiverged, run_protocol, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_config(args):
    """Merge defaults, an optional JSON file and explicit flags (flags win)."""
    values = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                values.update(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
    for f in fields(TrainConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    try:
        return TrainConfig.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _add_train_flags(p):
    p.add_argument("--config", help="JSON file with training options")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--lambda-u", dest="lambda_u", type=float)
    p.add_argument("--fusion", choices=["dempster", "mean"])
    p.add_argument("--loss", choices=["edl", "ce"])
    p.add_argument("--ecl-scope", dest="ecl_scope", choices=["all", "unlabeled"])
    p.add_argument("--dropout-scope", dest="dropout_scope", choices=["all-skips", "bottleneck"])
    p.add_argument("--anneal-unit", dest="anneal_unit", choices=["epoch", "iteration"])
    p.add_argument("--dropout-rate", dest="dropout_rate", type=float)
    p.add_argument("--base-width", dest="base_width", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--grad-clip", dest="grad_clip", type=float, help="max global gradient L2 norm")
    p.add_argument("--lr-schedule", dest="lr_schedule", choices=["constant", "poly"])


def _progress(row):
    print(json.dumps({k: (round(v, 6) if isinstance(v, float) else v) for k, v in row.items()}), flush=True)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_generate(args):
    seed = 0 if args.seed is None else args.seed
    ds = synthdata.generate(seed, args.n, args.size, args.size, args.classes, args.ood,
                            args.n_val, args.n_test)
    synthdata.write(ds, args.out)
    print(f"wrote {len(ds.samples)} samples to {args.out}")


def cmd_corrupt(args):
    seed = 0 if args.seed is None else args.seed
    ds = synthdata.corrupt_dataset(synthdata.read(args.input), args.kind, args.sigma, seed)
    synthdata.write(ds, args.out)
    print(f"wrote {args.kind} sigma={args.sigma} copy to {args.out}")


def cmd_train(args):
    cfg = _load_config(args)
    ds = synthdata.read(args.data)
    _, record = train(cfg, ds, args.out, progress=None if args.quiet else _progress)
    print(f"best val Dice {record.best_val_dice:.4f} at epoch {record.best_epoch}; "
          f"checkpoint {record.checkpoint}")


def _report_rows(doc):
    """Flatten a report document into ``(name, report-dict)`` rows."""
    if "mean_dice" in doc:
        return [("report", doc)]
    rows = []
    for name, v in doc.items():
        if isinstance(v, dict) and "mean_dice" in v:
            rows.append((name, v))
        elif isinstance(v, dict):
            rows.extend((f"{name}/{sub}", r) for sub, r in v.items()
                        if isinstance(r, dict) and "mean_dice" in r)
    return rows


COLUMNS = ("mean_dice", "mean_assd", "ece", "ueo", "count")


def render(rows, fmt="text"):
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("name",) + COLUMNS)
        for name, r in rows:
            w.writerow([name] + [r[c] for c in COLUMNS])
        return buf.getvalue()
    table = [("name",) + COLUMNS]
    for name, r in rows:
        table.append((name,) + tuple(f"{r[c]:.4f}" if isinstance(r[c], float) else str(r[c])
                                     for c in COLUMNS))
    widths = [max(len(row[i]) for row in table) for i in range(len(COLUMNS) + 1)]
    lines = ["  ".join(cell.ljust(w) if i == 0 else cell.rjust(w)
                       for i, (cell, w) in enumerate(zip(row, widths))) for row in table]
    return "\n".join(lines) + "\n"


def cmd_evaluate(args):
    net = DualNet.from_checkpoint(args.checkpoint)
    ds = synthdata.read(args.data)
    rep = metrics.evaluate(net, ds.split(args.split))
    os.makedirs(args.out, exist_ok=True)
    rep.to_json(os.path.join(args.out, "report.json"), per_sample=True)
    if args.csv:
        with open(os.path.join(args.out, "report.csv"), "w") as fh:
            fh.write(render([(args.split, rep.to_dict())], "csv"))
    sys.stdout.write(render([(args.split, rep.to_dict())]))


def cmd_predict(args):
    net = DualNet.from_checkpoint(args.checkpoint)
    ds = synthdata.read(args.data)
    os.makedirs(args.out, exist_ok=True)
    samples = ds.split(args.split)
    for s in samples:
        p, u, labels = net.inference(s.image)
        tnsr.save(os.path.join(args.out, f"{s.id}.p.tnsr"), p)
        tnsr.save(os.path.join(args.out, f"{s.id}.u.tnsr"), u)
        tnsr.save(os.path.join(args.out, f"{s.id}.labels.tnsr"), labels.astype(np.uint8))
    print(f"wrote predictions for {len(samples)} samples to {args.out}")


def cmd_protocol(args):
    cfg = _load_config(args)
    train_set = synthdata.read(args.data)
    tests = {}
    if args.test_data:
        tests["clean"] = synthdata.read(args.test_data)
    if args.ood_data:
        tests["ood"] = synthdata.read(args.ood_data)
    if args.kind == "ood" and "ood" not in tests:
        raise UsageError("the ood protocol needs --ood-data")
    net = DualNet.from_checkpoint(args.checkpoint) if args.checkpoint else None
    if net is not None and args.kind == "ablation":
        raise UsageError("--checkpoint cannot be combined with the ablation protocol")
    out = run_protocol(args.kind, train_set, tests, cfg, args.out, net, args.noise_kind)
    doc = {k: (v.to_dict() if isinstance(v, metrics.EvalReport) else v) for k, v in out.items()}
    if args.kind != "ablation":
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, f"{args.kind}.json"), "w") as fh:
            json.dump(doc, fh, indent=1)
    sys.stdout.write(render(_report_rows(doc)))


def cmd_report(args):
    rows = []
    for path in args.reports:
        with open(path) as fh:
            doc = json.load(fh)
        found = _report_rows(doc)
        if not found:
            raise tnsr.FormatError(f"{path} does not contain an evaluation report")
        prefix = os.path.splitext(os.path.basename(path))[0]
        rows.extend((prefix if name == "report" else f"{prefix}:{name}", r) for name, r in found)
    text = render(rows, args.format)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    sys.stdout.write(text)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="duedl", description="Dual-branch evidential scribble segmentation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate-data", help="write a synthetic scribble dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=200, help="number of training samples")
    p.add_argument("--n-val", dest="n_val", type=int)
    p.add_argument("--n-test", dest="n_test", type=int)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--ood", action="store_true", help="use the shifted generator")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("corrupt", help="write a noise- or blur-corrupted copy of a dataset")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=["noise", "blur"], default="noise")
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("train", help="train a model and save its checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--quiet", action="store_true")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="compute Dice/ASSD/ECE/UEO for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--csv", action="store_true", help="also write report.csv")
    p.add_argument("--seed", type=int, help="accepted for uniformity; evaluation is deterministic")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="write p, u and labels as TNSR files")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="accepted for uniformity; inference is deterministic")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("protocol", help="run the clean, robustness, ood or ablation protocol")
    p.add_argument("kind", choices=["clean", "robustness", "ood", "ablation"])
    p.add_argument("--data", required=True, help="training dataset (its test split is the default test set)")
    p.add_argument("--test-data", dest="test_data")
    p.add_argument("--ood-data", dest="ood_data")
    p.add_argument("--checkpoint", help="evaluate this model instead of training one")
    p.add_argument("--noise-kind", dest="noise_kind", choices=["noise", "blur"], default="noise")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    _add_train_flags(p)
    p.set_defaults(func=cmd_protocol)

    p = sub.add_parser("report", help="render JSON reports as an aligned table or CSV")
    p.add_argument("reports", nargs="+")
    p.add_argument("--format", choices=["text", "csv"], default="text")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"duedl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (synthdata.DatasetError, tnsr.FormatError, ConfigMismatchError, FileNotFoundError) as exc:
        print(f"duedl: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDiverged, T.NumericError) as exc:
        print(f"duedl: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"duedl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
