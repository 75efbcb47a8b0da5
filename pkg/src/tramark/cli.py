"""Command-line driver: ``tramark run | verify | attack | sweep``."""
import argparse
import csv
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import attacks, formats, nn, verify
from .config import ConfigError, format_config, load_config
from .data import FormatError
from .sim import MODES, run_experiment

log = logging.getLogger("tramark")

EXIT_OK, EXIT_UNVERIFIED, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3
METRIC_COLUMNS = ("round", "ma", "vr", "confidence", "leakage", "interval", "min_kl")
SWEEP_PARAMS = ("alpha", "k", "wm_size")


class CliError(Exception):
    def __init__(self, message, code=EXIT_USAGE):
        super().__init__(message)
        self.code = code


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_metrics(path, metrics):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for m in metrics:
            row = m.row()
            w.writerow([_fmt(row[c]) for c in METRIC_COLUMNS])


def run_id(config_text, mode):
    return hashlib.sha1(f"{mode}\n{config_text}".encode()).hexdigest()[:12]


def export_run(result, out_dir):
    """Write every artifact of a finished run; returns the manifest dict."""
    cfg, d = result.config, result.data
    os.makedirs(out_dir, exist_ok=True)
    for sub in ("checkpoints", "watermarks", "data"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    rel = {}

    def path(*parts):
        return os.path.join(out_dir, *parts)

    snapshot = format_config(cfg)
    with open(path("config.txt"), "w") as f:
        f.write(snapshot)
    rel["config"] = "config.txt"

    write_metrics(path("metrics.csv"), result.metrics)
    rel["metrics"] = "metrics.csv"

    rel["checkpoints"] = []
    for i, model in enumerate(result.models):
        name = os.path.join("checkpoints", f"client_{i:02d}.trmk")
        formats.write_checkpoint(path(name), d.spec, model)
        rel["checkpoints"].append(name)

    if result.masks is not None:
        formats.write_mask(path("masks.tmmk"), result.masks)
        rel["masks"] = "masks.tmmk"

    C = d.spec.num_classes
    rel["watermarks"] = []
    for wm in d.wm_sets:
        for kind, x, y in (("train", wm.triggers, wm.train_labels()),
                           ("holdout", wm.holdout_triggers, wm.holdout_labels())):
            name = os.path.join("watermarks", f"wm_{wm.owner:02d}_{kind}.tmds")
            formats.write_dataset(path(name), x, y, C)
            rel["watermarks"].append(name)
    x = np.concatenate([w.holdout_triggers for w in d.wm_sets])
    y = np.concatenate([w.holdout_labels() for w in d.wm_sets])
    formats.write_dataset(path("watermarks", "wm_test.tmds"), x, y, C)
    rel["wm_test"] = os.path.join("watermarks", "wm_test.tmds")

    formats.write_dataset(path("data", "test.tmds"), d.test.inputs, d.test.labels, C)
    rel["test_data"] = os.path.join("data", "test.tmds")
    rel["shards"] = []
    for i, shard in enumerate(d.shards):
        name = os.path.join("data", f"shard_{i:02d}.tmds")
        formats.write_dataset(path(name), shard.inputs, shard.labels, C)
        rel["shards"].append(name)

    reports = []
    for i, (model, wm) in enumerate(zip(result.models, d.wm_sets)):
        reports.append(leaker_report(d.spec, model, wm.target_label, x, y, client_id=i))
    verify.write_reports(path("reports.json"), reports)
    rel["reports"] = "reports.json"
    if len(result.models) > 1:
        col = verify.collision_report(d.spec, result.models, d.wm_sets, cfg.sigma)
        col.write_csv(path("collision.csv"))
        rel["collision"] = "collision.csv"

    manifest = {
        "run_id": run_id(snapshot, result.mode),
        "mode": result.mode,
        "seed": cfg.seed,
        "config": {k: v for k, v in (line.split(" = ", 1) for line in snapshot.splitlines())},
        "final": {c: getattr(result.final, c) for c in METRIC_COLUMNS},
        "artifacts": rel,
    }
    with open(path("manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest


def leaker_report(spec, model, assigned, x, y, client_id=-1):
    rep = verify.verify_leaker(spec, model, assigned, x, y)
    present = np.unique(y)
    own = rep.per_label_accuracy[assigned] if assigned in present else 0.0
    others = [rep.per_label_accuracy[c] for c in present if c != assigned]
    rep.confidence = float(own)
    rep.leakage = float(np.mean(others)) if others else float("nan")
    rep.client_id = client_id
    return rep


def _load_config(path, seed=None):
    if not os.path.isfile(path):
        raise CliError(f"config file not found: {path}")
    try:
        cfg = load_config(path)
        if seed is not None:
            cfg = cfg.with_(seed=seed)
    except ConfigError as e:
        raise CliError(f"invalid config key {e.key!r}: {e}")
    return cfg


def _load_checkpoint(path):
    try:
        return formats.read_checkpoint(path)
    except FileNotFoundError:
        raise CliError(f"checkpoint not found: {path}")
    except FormatError as e:
        raise CliError(f"bad checkpoint: {e}")


def _load_dataset(path, spec):
    try:
        ds = formats.read_dataset(path)
    except FileNotFoundError:
        raise CliError(f"dataset not found: {path}")
    except FormatError as e:
        raise CliError(f"bad dataset: {e}")
    if ds.input_dim != spec.input_dim:
        raise CliError(f"{path}: inputs have dim {ds.input_dim}, checkpoint expects {spec.input_dim}")
    if ds.class_count != spec.num_classes:
        raise CliError(f"{path}: {ds.class_count} classes, checkpoint has {spec.num_classes}")
    return ds


def cmd_run(args):
    cfg = _load_config(args.config, args.seed)
    try:
        result = run_experiment(cfg, args.mode)
    except OSError as e:
        raise CliError(f"cannot read input data: {e}", EXIT_IO)
    except FormatError as e:
        raise CliError(str(e))
    try:
        manifest = export_run(result, args.out_dir)
    except OSError as e:
        raise CliError(f"cannot write artifacts: {e}", EXIT_IO)
    f = result.final
    print(f"run {manifest['run_id']} mode={args.mode} ma={f.ma:.4f} vr={f.vr:.2f} "
          f"interval={f.interval:.3f} -> {args.out_dir}")
    return EXIT_OK


def cmd_verify(args):
    spec, params = _load_checkpoint(args.checkpoint)
    wm = _load_dataset(os.path.join(args.wm_dir, "wm_test.tmds"), spec)
    rep = leaker_report(spec, params, args.assigned_label, wm.inputs, wm.labels,
                        client_id=args.client if args.client is not None else -1)
    json.dump(rep.to_json(), sys.stdout, indent=2)
    sys.stdout.write("\n")
    return EXIT_OK if rep.verified else EXIT_UNVERIFIED


def cmd_attack(args):
    spec, params = _load_checkpoint(args.checkpoint)
    wm = _load_dataset(os.path.join(args.wm_dir, "wm_test.tmds"), spec)
    data_dir = args.data_dir or os.path.join(os.path.dirname(os.path.abspath(args.wm_dir)), "data")
    test = _load_dataset(os.path.join(data_dir, "test.tmds"), spec)
    client = args.client if args.client is not None else args.assigned_label
    shard = None
    if args.kind == "finetune":
        shard = _load_dataset(os.path.join(data_dir, f"shard_{client:02d}.tmds"), spec)
    try:
        acfg = attacks.AttackConfig(args.kind, prune_ratio=args.ratio, finetune_epochs=args.epochs,
                                    finetune_lr=args.lr, quant_bits=args.bits,
                                    batch_size=args.batch_size)
        attacked = attacks.apply_attack(spec, params, acfg, shard,
                                        np.random.default_rng([args.seed, client]))
    except ValueError as e:
        raise CliError(str(e))

    out = args.out or os.path.splitext(args.checkpoint)[0] + f".{args.kind}.trmk"
    before = verify.verify_leaker(spec, params, args.assigned_label, wm.inputs, wm.labels)
    after = verify.verify_leaker(spec, attacked, args.assigned_label, wm.inputs, wm.labels)
    diff = {
        "kind": args.kind,
        "ma_before": nn.accuracy(spec, params, test.inputs, test.labels),
        "ma_after": nn.accuracy(spec, attacked, test.inputs, test.labels),
        "verified_before": before.verified,
        "verified_after": after.verified,
        "checkpoint": out,
    }
    try:
        formats.write_checkpoint(out, spec, attacked)
        with open(os.path.splitext(out)[0] + ".json", "w") as f:
            json.dump(diff, f, indent=2)
    except OSError as e:
        raise CliError(f"cannot write attacked checkpoint: {e}", EXIT_IO)
    json.dump(diff, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return EXIT_OK


def cmd_sweep(args):
    cfg = _load_config(args.config)
    if not args.values:
        raise CliError("--values needs at least one value")
    cast = int if args.param == "wm_size" else float
    seeds = args.seeds if args.seeds else [cfg.seed]
    rows = []
    for raw in args.values:
        try:
            value = cast(raw)
            cells = [cfg.with_(**{args.param: value, "seed": s}) for s in seeds]
        except (ValueError, ConfigError) as e:
            raise CliError(f"bad value {raw!r} for {args.param}: {e}")
        for c in cells:
            f = run_experiment(c, args.mode).final
            rows.append((args.param, value, c.seed, f.ma, f.vr))
            log.info("%s=%s seed=%d ma=%.4f vr=%.2f", args.param, value, c.seed, f.ma, f.vr)
    path = os.path.join(args.out_dir, "sweep.csv")
    try:
        os.makedirs(args.out_dir, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("param", "value", "seed", "ma", "vr"))
            for r in rows:
                w.writerow([r[0], r[1], r[2], _fmt(r[3]), _fmt(r[4])])
            for raw in args.values:
                v = cast(raw)
                sel = [r for r in rows if r[1] == v]
                w.writerow([args.param, v, "mean", _fmt(np.mean([r[3] for r in sel])),
                            _fmt(np.mean([r[4] for r in sel]))])
    except OSError as e:
        raise CliError(f"cannot write {path}: {e}", EXIT_IO)
    print(path)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="tramark", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one federated experiment and export artifacts")
    r.add_argument("config")
    r.add_argument("--mode", choices=MODES, default="tramark")
    r.add_argument("--seed", type=int)
    r.add_argument("--out-dir", default="run")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="attribute a suspect checkpoint to a client label")
    v.add_argument("checkpoint")
    v.add_argument("wm_dir")
    v.add_argument("--assigned-label", type=int, required=True)
    v.add_argument("--client", type=int)
    v.set_defaults(func=cmd_verify)

    a = sub.add_parser("attack", help="prune, fine-tune or quantize a checkpoint")
    a.add_argument("checkpoint")
    a.add_argument("wm_dir")
    a.add_argument("--kind", choices=("prune", "finetune", "quantize"), required=True)
    a.add_argument("--assigned-label", type=int, required=True)
    a.add_argument("--client", type=int, help="shard used for fine-tuning (default: label)")
    a.add_argument("--ratio", type=float, default=0.0)
    a.add_argument("--epochs", type=int, default=30)
    a.add_argument("--lr", type=float, default=0.01)
    a.add_argument("--batch-size", type=int, default=32)
    a.add_argument("--bits", type=int, default=8)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--data-dir")
    a.add_argument("--out")
    a.set_defaults(func=cmd_attack)

    s = sub.add_parser("sweep", help="vary one hyperparameter across seeds")
    s.add_argument("config")
    s.add_argument("--param", choices=SWEEP_PARAMS, required=True)
    s.add_argument("--values", nargs="*", default=[])
    s.add_argument("--seeds", nargs="*", type=int)
    s.add_argument("--mode", choices=MODES, default="tramark")
    s.add_argument("--out-dir", default="sweep")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as e:
        print(f"tramark: error: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
