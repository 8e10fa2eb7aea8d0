"""Command-line experiment harness: gen-data / train / eval / report.

Exit codes: 0 success, 2 usage or validation error, 3 runtime failure.
The seed precedence is --seed flag, then the CYIN_SEED environment
variable, then the config file.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import hashlib
import json
import os
import statistics
import sys

from cyin.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from cyin.config import ABLATION_TAGS, DatasetSpec, ExperimentConfig, ValidationError
from cyin.data import (
    DatasetFormatError,
    generate_dataset,
    read_dataset,
    write_dataset,
)
from cyin.protocols import ProtocolError
from cyin.report import RunManifest, load_manifests, plot_metric_vs_mr, write_tables
from cyin.trainer import TrainingDiverged, evaluate, parse_protocol, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors already; keep that but route to stderr."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


class UsageError(Exception):
    pass


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _resolve_seed(flag_seed: int | None, config_seed: int) -> int:
    if flag_seed is not None:
        return flag_seed
    env = os.environ.get("CYIN_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ValidationError(f"CYIN_SEED must be an integer, got {env!r}") from exc
    return config_seed


def _expand_protocols(protocols: list[str], sweep: str | None) -> list[str]:
    out = list(protocols)
    if sweep:
        if not sweep.startswith("random:"):
            raise ProtocolError(f"sweep must look like random:<lo>..<hi>:<step>, got {sweep!r}")
        body = sweep[len("random:"):]
        try:
            span, step_s = body.rsplit(":", 1)
            lo_s, hi_s = span.split("..")
            lo, hi, step = float(lo_s), float(hi_s), float(step_s)
        except ValueError as exc:
            raise ProtocolError(f"malformed sweep {sweep!r}") from exc
        if step <= 0 or hi < lo:
            raise ProtocolError(f"sweep bounds out of order in {sweep!r}")
        n = int(round((hi - lo) / step)) + 1
        out.extend(f"random:{lo + i * step:g}" for i in range(n))
    if not out:
        out = ["complete"]
    return out


# -- subcommands ------------------------------------------------------------


def cmd_gen_data(args) -> int:
    feat_dims = [int(x) for x in args.feat_dims.split(",")] if args.feat_dims else None
    spec = DatasetSpec(
        num_modalities=args.modalities,
        seq_len=args.seq_len,
        feat_dims=feat_dims if feat_dims is not None else [8] * args.modalities,
        latent_dim=args.latent_dim,
        task=args.task,
        num_classes=args.classes,
        noise_scale=args.noise_scale,
        distractor_dim=args.distractor_dim,
        num_samples=args.samples,
        seed=args.seed,
    )
    spec.validate()
    samples = generate_dataset(spec)
    write_dataset(samples, spec, args.out)
    print(f"wrote {args.out}")
    print(f"sha256 {_sha256(args.out)}")
    return EXIT_OK


def _load_data_for(config: ExperimentConfig, data_path: str | None):
    if data_path is None:
        return generate_dataset(config.data)
    spec, samples = read_dataset(data_path)
    config.data = spec
    return samples


def cmd_train(args) -> int:
    config = ExperimentConfig.from_file(args.config)
    config.seed = _resolve_seed(args.seed, config.seed)
    samples = _load_data_for(config, args.data)
    os.makedirs(args.out_dir, exist_ok=True)

    manifest = RunManifest(
        config_path=os.path.abspath(args.config),
        output_dir=os.path.abspath(args.out_dir),
        ablation=args.ablation,
        seed=config.seed,
        created_at=_now(),
    )
    log_path = os.path.join(args.out_dir, "train_log.jsonl")
    try:
        model, _ = train(config, samples, ablation=args.ablation, log_path=log_path)
    except TrainingDiverged as exc:
        report = {"error": "training diverged", "step": exc.step, "component": exc.component}
        with open(os.path.join(args.out_dir, "abort.json"), "w") as fh:
            json.dump(report, fh, indent=2)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    ckpt_path = os.path.join(args.out_dir, "model.ckpt")
    save_checkpoint(model, config, ckpt_path)
    config.to_file(os.path.join(args.out_dir, "config.ini"))

    for protocol in config.protocols:
        report = evaluate(model, samples, protocol, mask_seed=config.seed)
        manifest.results.append(
            {"protocol": protocol, "seed": config.seed, "metrics": report.metrics}
        )
    manifest.finished_at = _now()
    manifest_path = os.path.join(args.out_dir, "manifest.json")
    with open(manifest_path, "w") as fh:
        fh.write(manifest.to_json())
    with open(os.path.join(args.out_dir, "metrics.json"), "w") as fh:
        json.dump(manifest.results, fh, indent=2, sort_keys=True)
    print(f"wrote {ckpt_path}")
    print(f"wrote {manifest_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = ExperimentConfig.from_file(args.config)
    samples = _load_data_for(config, args.data)
    model = load_checkpoint(args.checkpoint, config)
    protocols = _expand_protocols(args.protocol or [], args.sweep)
    for p in protocols:
        parse_protocol(p, config.data.num_modalities)

    rows = []
    for protocol in protocols:
        per_seed = [
            evaluate(model, samples, protocol, mask_seed=args.mask_seed + k)
            for k in range(args.seeds)
        ]
        if args.seeds == 1:
            rows.append({"protocol": protocol, "seed": args.mask_seed, "metrics": per_seed[0].metrics})
        else:
            names = per_seed[0].metrics.keys()
            agg = {}
            for name in names:
                vals = [r.metrics[name] for r in per_seed]
                agg[f"{name}_mean"] = statistics.fmean(vals)
                agg[f"{name}_stddev"] = statistics.stdev(vals)
            rows.append({"protocol": protocol, "seed": args.mask_seed, "metrics": agg})

    columns = sorted({k for row in rows for k in row["metrics"]})
    os.makedirs(args.out_dir, exist_ok=True)
    json_path = os.path.join(args.out_dir, "eval.json")
    with open(json_path, "w") as fh:
        json.dump(rows, fh, indent=2, sort_keys=True)
    csv_path = os.path.join(args.out_dir, "eval.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["protocol", "seed"] + columns)
        for row in rows:
            writer.writerow(
                [row["protocol"], row["seed"]]
                + [f"{row['metrics'][c]:.6f}" for c in columns]
            )
    print(f"wrote {json_path}")
    print(f"wrote {csv_path}")
    return EXIT_OK


def cmd_report(args) -> int:
    if not os.path.isdir(args.input_dir):
        raise ValidationError(f"input directory not found: {args.input_dir}")
    manifests = []
    for root, _dirs, files in os.walk(args.input_dir):
        if "manifest.json" in files:
            with open(os.path.join(root, "manifest.json")) as fh:
                manifests.append(RunManifest.from_json(fh.read()))
    if not manifests:
        raise ValidationError(f"no manifests found under {args.input_dir}")
    os.makedirs(args.out_dir, exist_ok=True)
    csv_path, md_path = write_tables(manifests, args.out_dir)
    print(f"wrote {csv_path}")
    print(f"wrote {md_path}")
    if args.plot_metric:
        svg = plot_metric_vs_mr(
            manifests, args.plot_metric, os.path.join(args.out_dir, f"{args.plot_metric}_vs_mr.svg")
        )
        if svg:
            print(f"wrote {svg}")
        else:
            print("no random-protocol rows to plot", file=sys.stderr)
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cyin", description="CyIN experiment harness")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset file")
    g.add_argument("--modalities", type=int, required=True)
    g.add_argument("--samples", type=int, required=True)
    g.add_argument("--task", choices=("regression", "classification"), required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--classes", type=int, default=0)
    g.add_argument("--seq-len", type=int, default=4)
    g.add_argument("--feat-dims", type=str, default=None, help="comma-separated channel counts")
    g.add_argument("--latent-dim", type=int, default=4)
    g.add_argument("--noise-scale", type=float, default=0.1)
    g.add_argument("--distractor-dim", type=int, default=2)
    g.add_argument("--out", type=str, required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="run the two-stage training schedule")
    t.add_argument("--config", type=str, required=True)
    t.add_argument("--data", type=str, default=None, help="dataset file (default: generate from config)")
    t.add_argument("--ablation", choices=ABLATION_TAGS, default="full")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--out-dir", type=str, required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint under missing protocols")
    e.add_argument("--checkpoint", type=str, required=True)
    e.add_argument("--config", type=str, required=True)
    e.add_argument("--data", type=str, default=None)
    e.add_argument("--protocol", action="append", default=None,
                   help="complete | fixed:<set> | random:<mr>; repeatable")
    e.add_argument("--sweep", type=str, default=None, help="random:<lo>..<hi>:<step>")
    e.add_argument("--seeds", type=int, default=1, help="aggregate over k protocol-mask seeds")
    e.add_argument("--mask-seed", type=int, default=0)
    e.add_argument("--out-dir", type=str, required=True)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="assemble tables and plots from run manifests")
    r.add_argument("--input-dir", type=str, required=True)
    r.add_argument("--out-dir", type=str, required=True)
    r.add_argument("--plot-metric", type=str, default=None)
    r.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, ProtocolError, DatasetFormatError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
