"""Command-line entry point: ``msdatf <command> [options]``.

Commands
    synth               generate a synthetic cohort (DE CSVs, or raw EEG CSVs)
    extract             raw EEG CSV -> DE feature CSV
    group               correlation grouping of source subjects
    train               adaptation training for one target subject
    eval                score a checkpoint on a subject
    baseline            leave-one-subject-out run of one comparison mode
    export-embeddings   per-sample generator embeddings as CSV

Every failure exits non-zero after printing one line of the form
``error kind=<kind> message=<json string>`` to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ArgumentError, MSDAError
from .features import extract_subject, synth_cohort, synth_features
from .grouping import group_subjects
from .harness import io
from .harness.config import load_config
from .harness.metrics import compute_metrics
from .harness.pipeline import (
    MODES,
    export_embeddings,
    fold_data,
    load_model,
    make_fold,
    run_loso,
    save_model,
)
from .msda import predict_target, train_msda

log = logging.getLogger("msdatf")


class _Parser(argparse.ArgumentParser):
    """Reports usage errors in the same one-line format as runtime errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"error kind=usage message={json.dumps(message)}\n")


def _global_flags(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="YAML/JSON run configuration")
    parser.add_argument("--seed", type=int, default=default, help="overrides train/synth seeds")
    parser.add_argument("--out-dir", default=argparse.SUPPRESS if suppress else ".",
                        help="output directory (default: current directory)")
    parser.add_argument("-v", "--verbose", action="store_true",
                        default=argparse.SUPPRESS if suppress else False)


def build_parser():
    p = _Parser(prog="msdatf", description=__doc__.split("\n")[0])
    _global_flags(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _Parser(add_help=False)
    _global_flags(common, suppress=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic cohort")
    s.add_argument("--format", choices=("de", "raw"), default="de")

    s = sub.add_parser("extract", parents=[common], help="raw EEG CSV -> DE CSV")
    s.add_argument("inputs", nargs="+", help="raw EEG CSV files")

    s = sub.add_parser("group", parents=[common], help="group source subjects")
    s.add_argument("--features", required=True, help="DE CSV file or directory")
    s.add_argument("--target", help="subject to leave out before grouping")
    s.add_argument("--k", type=int, help="number of groups (default: train.K)")

    s = sub.add_parser("train", parents=[common], help="train on one LOSO fold")
    s.add_argument("--features", required=True)
    s.add_argument("--target", required=True)

    s = sub.add_parser("eval", parents=[common], help="score a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--target", required=True)

    s = sub.add_parser("baseline", parents=[common], help="LOSO run of one mode")
    s.add_argument("--features", required=True)
    s.add_argument("--mode", choices=MODES, required=True)
    s.add_argument("--targets", nargs="*", help="restrict to these target subjects")

    s = sub.add_parser("export-embeddings", parents=[common], help="dump embeddings")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--target", help="target subject (default: the one stored in the checkpoint)")
    return p


# ---------------------------------------------------------------- commands


def cmd_synth(args, cfg, out):
    if args.format == "raw":
        for sid, recs in synth_cohort(cfg.synth).items():
            io.write_raw_csv(out / "raw" / f"{sid}.csv", recs)
        return {"subjects": cfg.synth.n_subjects, "dir": str(out / "raw")}
    feats = synth_features(cfg.synth)
    io.write_feature_dir(out / "features", feats.values())
    return {"subjects": len(feats), "dir": str(out / "features")}


def cmd_extract(args, cfg, out):
    by_subject = {}
    for path in args.inputs:
        for rec in io.read_raw_csv(path):
            by_subject.setdefault(rec.subject_id, []).append(rec)
    for sid in sorted(by_subject):
        io.write_de_csv(out / "features" / f"{sid}.csv", extract_subject(by_subject[sid]))
    return {"subjects": sorted(by_subject)}


def _write_partition(out, part):
    io.write_json(out / "partition.json", {
        "groups": part.groups,
        "assignment": dict(sorted(part.group_of().items())),
    })
    io.write_matrix_csv(out / "correlation.csv", part.corr, part.subject_ids)


def cmd_group(args, cfg, out):
    feats = io.read_feature_dir(args.features)
    ids = [s for s in feats if s != args.target]
    K = args.k or cfg.train.K
    sizes = cfg.experiment.group_sizes
    sizes = sizes if sizes and sum(sizes) == len(ids) else None
    part = group_subjects([feats[s] for s in ids], K=min(K, len(ids)), sizes=sizes)
    _write_partition(out, part)
    return {"groups": part.groups}


def cmd_train(args, cfg, out):
    feats = io.read_feature_dir(args.features)
    fold = make_fold(feats, args.target, cfg.train.K, cfg.experiment.group_sizes)
    groups, (tx, ty, _) = fold_data(feats, fold, cfg)
    labeled = len(ty) and ty.min() >= 0
    single = len(groups) < 2
    model, hist = train_msda(groups, tx, cfg.generator, cfg.train,
                             target_y=ty if labeled else None, allow_single_source=single)
    save_model(out / "model.ckpt", model, cfg, fold, rng_state=model.rng_state)
    io.write_history_csv(out / "history.csv", hist)
    _write_partition(out, fold.partition)
    return {"epochs": len(hist), "checkpoint": str(out / "model.ckpt")}


def cmd_eval(args, cfg, out):
    model, ckcfg, _ = load_model(args.checkpoint)
    feats = io.read_feature_dir(args.features)
    fold = make_fold(feats, args.target, ckcfg.train.K, ckcfg.experiment.group_sizes)
    _, (tx, ty, tids) = fold_data(feats, fold, ckcfg)
    probs, pred = predict_target(model, tx)
    rows = [[args.target, t, int(y), int(p)] + [repr(float(v)) for v in pr]
            for t, y, p, pr in zip(tids, ty, pred, probs)]
    out.mkdir(parents=True, exist_ok=True)
    with (out / "predictions.csv").open("w") as fh:
        fh.write("subject_id,trial_id,label,pred," + ",".join(f"p_{c}" for c in range(model.n_classes))
                 + "\n")
        for r in rows:
            fh.write(",".join(str(v) for v in r) + "\n")
    result = {"samples": int(len(tx))}
    if len(ty) and ty.min() >= 0:
        report = compute_metrics(ty, pred, model.n_classes)
        io.write_json(out / "metrics.json", report.to_dict())
        result.update(accuracy=report.accuracy, macro_f1=report.macro_f1)
    return result


def cmd_baseline(args, cfg, out):
    feats = io.read_feature_dir(args.features)
    results, summary = run_loso(feats, args.mode, cfg, targets=args.targets)
    base = out / args.mode
    lines = ["target,accuracy,macro_f1"]
    for r in results:
        fold_dir = base / f"fold_{r.fold.target}"
        io.write_history_csv(fold_dir / "history.csv", r.history)
        io.write_json(fold_dir / "metrics.json", r.report.to_dict())
        lines.append(f"{r.fold.target},{io.fmt(r.report.accuracy)},{io.fmt(r.report.macro_f1)}")
    base.mkdir(parents=True, exist_ok=True)
    (base / "folds.csv").write_text("\n".join(lines) + "\n")
    io.write_json(base / "summary.json", summary)
    return summary


def cmd_export(args, cfg, out):
    model, ckcfg, ckpt = load_model(args.checkpoint)
    feats = io.read_feature_dir(args.features)
    target = args.target or ckpt.config.get("fold", {}).get("target")
    if target is None:
        raise ArgumentError("no --target given and none stored in the checkpoint")
    fold = make_fold(feats, target, ckcfg.train.K, ckcfg.experiment.group_sizes)
    n = export_embeddings(model, feats, fold, ckcfg, out / "embeddings.csv")
    return {"rows": n}


COMMANDS = {
    "synth": cmd_synth,
    "extract": cmd_extract,
    "group": cmd_group,
    "train": cmd_train,
    "eval": cmd_eval,
    "baseline": cmd_baseline,
    "export-embeddings": cmd_export,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.seed)
        out = Path(args.out_dir)
        result = COMMANDS[args.command](args, cfg, out)
    except MSDAError as exc:
        print(f"error kind={exc.kind} message={json.dumps(str(exc))}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error kind=io message={json.dumps(str(exc))}", file=sys.stderr)
        return 3
    except (IndexError, ValueError) as exc:
        print(f"error kind=value message={json.dumps(str(exc))}", file=sys.stderr)
        return 2
    print(json.dumps(result, sort_keys=True, default=_jsonable))
    return 0


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    return str(obj)


if __name__ == "__main__":
    sys.exit(main())
