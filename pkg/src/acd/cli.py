"""Command-line interface.

Verbs: gen-data, train, infer, sweep, calibrate, bench, uncertainty.
Exit codes: 0 success, 2 configuration error, 3 numerical abort during
training. ACD_THREADS caps the inference/generation worker count.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import yaml

from .experiment import (
    ConfigError,
    DatasetSpec,
    ExperimentConfig,
    NumericalAbort,
    bench,
    calibrate,
    generate_dataset,
    infer,
    threshold_sweep,
    train,
    uncertainty_report,
)
from .graphs import load_graphs
from .model import load_model
from .svg import write_heatmap_svg

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _load_yaml(path):
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(p) as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"invalid YAML in {path}: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return data


def _dataset_spec_from_file(path, family=None) -> DatasetSpec:
    raw = _load_yaml(path)
    if family is not None:
        raw["family"] = family
    known = set(DatasetSpec.__dataclass_fields__)
    extra = {k: raw.pop(k) for k in ("count", "split") if k in raw}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown dataset config keys: {sorted(unknown)}")
    spec = DatasetSpec(**raw)
    spec.validate()
    return spec, extra


def _load_data_arg(path):
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"data file not found: {path}")
    return load_graphs(p)


def _load_ckpt_arg(path):
    if not Path(path).exists():
        raise ConfigError(f"checkpoint not found: {path}")
    return load_model(path)


def cmd_gen_data(args):
    if args.family == "snap":
        from .snap import extract_snap_subgraphs
        from .graphs import save_graphs

        raw = _load_yaml(args.config)
        edge_file = raw.get("edge_file")
        community_file = raw.get("community_file")
        if not edge_file or not Path(edge_file).exists():
            raise ConfigError(f"snap edge_file missing or not found: {edge_file}")
        if not community_file or not Path(community_file).exists():
            raise ConfigError(f"snap community_file missing: {community_file}")
        splits = extract_snap_subgraphs(
            edge_file, community_file,
            split_spec=raw.get("split", (0.6, 0.1, 0.3)),
            rng=np.random.default_rng(args.seed),
            k=raw.get("k", "vary"),
            max_per_split=raw.get("max_per_split"),
        )
        out = Path(args.out)
        for split, graphs in splits.items():
            path = out.parent / f"{out.stem}_{split}{out.suffix or '.jsonl'}"
            save_graphs(path, graphs)
            print(f"{split}: {len(graphs)} graphs -> {path}")
        return EXIT_OK
    spec, extra = _dataset_spec_from_file(args.config, family=args.family)
    count = args.count if args.count is not None else extra.get("count")
    if count is None:
        raise ConfigError("gen-data needs --count or a count in the config")
    split = extra.get("split", "train")
    graphs = generate_dataset(spec, args.seed, split, int(count), args.out)
    ks = [g.n_communities for g in graphs]
    print(f"wrote {len(graphs)} graphs to {args.out} "
          f"(K range {min(ks)}..{max(ks)})")
    return EXIT_OK


def cmd_train(args):
    raw = _load_yaml(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    config = ExperimentConfig.from_dict(raw)
    config.validate()

    def progress(it, loss):
        print(f"iter {it}: loss {loss:.4f}", flush=True)

    model, manifest = train(config, args.out, progress=progress)
    print(f"done: checkpoint {manifest.checkpoint_path}")
    if manifest.val_history:
        last = manifest.val_history[-1]
        print(f"final validation AMI x100: {100 * last['ami']:.1f}")
    return EXIT_OK


def cmd_infer(args):
    model = _load_ckpt_arg(args.checkpoint)
    graphs = _load_data_arg(args.data)
    results = infer(model, graphs, args.samples, args.seed, out_csv=args.out,
                    checkpoint_path=args.checkpoint, keep_samples=False)
    scored = [r for r in results if r["ami"] is not None]
    if scored:
        mean_ami = float(np.mean([r["ami"] for r in scored]))
        mean_ari = float(np.mean([r["ari"] for r in scored]))
        print(f"AMI x100: {100 * mean_ami:.1f}  ARI x100: {100 * mean_ari:.1f} "
              f"({len(scored)} labeled graphs)")
    print(f"metrics -> {args.out}")
    return EXIT_OK


def cmd_sweep(args):
    model = _load_ckpt_arg(args.checkpoint)
    raw = _load_yaml(args.config)
    for key in ("a_values", "b_values", "k", "n"):
        if key not in raw:
            raise ConfigError(f"sweep config needs {key!r}")
    rows = threshold_sweep(
        model, raw["a_values"], raw["b_values"], int(raw["k"]), int(raw["n"]),
        reps=int(raw.get("reps", 5)), n_samples=int(raw.get("samples", 15)),
        seed=args.seed, out_dir=args.out,
    )
    write_heatmap_svg(Path(args.out) / "sweep.svg", raw["a_values"],
                      raw["b_values"], rows, k=int(raw["k"]))
    done = [r for r in rows if not r["skipped"]]
    print(f"swept {len(done)} cells ({len(rows) - len(done)} skipped) -> {args.out}")
    return EXIT_OK


def cmd_calibrate(args):
    model = _load_ckpt_arg(args.checkpoint)
    graphs = _load_data_arg(args.data)
    report = calibrate(model, graphs, args.samples, args.bins, args.seed,
                       out_csv=args.out)
    print(f"ECE: {report.ece:.4f} over {report.n} graphs -> {args.out}")
    return EXIT_OK


def cmd_bench(args):
    model = _load_ckpt_arg(args.checkpoint)
    graphs = _load_data_arg(args.data)
    sizes = [int(s) for s in args.samples_list.split(",")]
    rows = bench(model, graphs, sizes, args.seed, out_csv=args.out)
    print(f"benchmarked {len(graphs)} graphs x {sizes} samples -> {args.out}")
    return EXIT_OK


def cmd_uncertainty(args):
    model = _load_ckpt_arg(args.checkpoint)
    graphs = _load_data_arg(args.data)
    uncertainty_report(model, graphs, args.samples, args.seed, out_csv=args.out)
    print(f"uncertainty stats -> {args.out}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="acd",
                                description="amortized community detection")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate or extract a dataset")
    g.add_argument("--family", required=True,
                   choices=["general-sbm", "sym-sbm", "snap"])
    g.add_argument("--config", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train a model per experiment config")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(fn=cmd_train)

    i = sub.add_parser("infer", help="posterior samples + MAP + metrics CSV")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--data", required=True)
    i.add_argument("--samples", type=int, default=15)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--out", required=True)
    i.set_defaults(fn=cmd_infer)

    s = sub.add_parser("sweep", help="(a, b) recovery-threshold sweep")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_sweep)

    c = sub.add_parser("calibrate", help="expected calibration error report")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--data", required=True)
    c.add_argument("--samples", type=int, default=15)
    c.add_argument("--bins", type=int, default=10)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", required=True)
    c.set_defaults(fn=cmd_calibrate)

    b = sub.add_parser("bench", help="timing and call-count benchmarks")
    b.add_argument("--checkpoint", required=True)
    b.add_argument("--data", required=True)
    b.add_argument("--samples-list", default="1,5,15")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True)
    b.set_defaults(fn=cmd_bench)

    u = sub.add_parser("uncertainty", help="mean/std of inferred K per graph")
    u.add_argument("--checkpoint", required=True)
    u.add_argument("--data", required=True)
    u.add_argument("--samples", type=int, default=15)
    u.add_argument("--seed", type=int, default=0)
    u.add_argument("--out", required=True)
    u.set_defaults(fn=cmd_uncertainty)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
