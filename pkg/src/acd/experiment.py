"""Experiment orchestration: dataset specs, training, inference, sweeps.

Everything is deterministic given the config seed: dataset graphs come from
counter-based streams keyed by (seed, split offset + index), training
randomness from named child streams, and inference from per-graph streams.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .graphs import (
    GeneralSbmConfig,
    LabeledGraph,
    SymmetricSbmConfig,
    gen_general_sbm,
    gen_symmetric_log_sbm,
    graph_rng,
    load_graphs,
    save_graphs,
)
from .metrics import ami, ari, ece, map_select, uncertainty_stats, write_metrics_csv
from .model import CommunityModel, ModelConfig, build_model, load_model
from .optim import Adam

__all__ = [
    "DatasetSpec",
    "ExperimentConfig",
    "RunManifest",
    "NumericalAbort",
    "ConfigError",
    "train",
    "infer",
    "threshold_sweep",
    "calibrate",
    "bench",
    "uncertainty_report",
    "worker_count",
]

SPLIT_OFFSETS = {"train": 0, "val": 1_000_000_000, "test": 2_000_000_000}


class ConfigError(ValueError):
    """Invalid configuration; CLI maps this to exit code 2."""


class NumericalAbort(RuntimeError):
    """Training hit a non-finite loss; CLI maps this to exit code 3."""

    def __init__(self, iteration: int, message: str):
        super().__init__(message)
        self.iteration = iteration


def worker_count(n_tasks: int) -> int:
    cap = os.environ.get("ACD_THREADS")
    workers = os.cpu_count() or 1
    if cap is not None:
        try:
            workers = max(1, int(cap))
        except ValueError:
            raise ConfigError(f"ACD_THREADS must be an integer, got {cap!r}")
    return max(1, min(workers, n_tasks))


# ---------------------------------------------------------------------------
# dataset specification


@dataclass
class DatasetSpec:
    """Declarative dataset description used by training and gen-data.

    family "sym-sbm" accepts scalars or ranges for n, scalars or choice lists
    for k, and either (a, b) log-degree coefficients or direct probabilities
    (p, q). family "general-sbm" mirrors GeneralSbmConfig. family "file"
    loads pre-generated JSONL datasets.
    """

    family: str = "general-sbm"
    train_count: int = 0
    val_count: int = 0
    test_count: int = 0
    # sym-sbm
    n: object = None
    k: object = None
    a: object = None
    b: object = None
    p: object = None
    q: object = None
    region: str | None = None          # optional "deep-recoverable" rejection
    region_margin: float = 0.5
    # general-sbm
    n_min: int = 50
    n_max: int = 350
    alpha: float = 3.0
    beta_within: tuple = (6.0, 4.0)
    beta_between: tuple = (1.0, 7.0)
    min_community_size: int = 5
    # file
    train_path: str | None = None
    val_path: str | None = None
    test_path: str | None = None

    def validate(self):
        if self.family not in ("general-sbm", "sym-sbm", "file"):
            raise ConfigError(f"unknown dataset family {self.family!r}")
        if self.family == "sym-sbm":
            if self.n is None or self.k is None:
                raise ConfigError("sym-sbm needs n and k")
            if (self.p is None) != (self.q is None):
                raise ConfigError("sym-sbm needs both p and q or neither")
            if self.p is None and (self.a is None or self.b is None):
                raise ConfigError("sym-sbm needs (a, b) or (p, q)")
        if self.family == "file" and not self.train_path:
            raise ConfigError("file dataset needs train_path")
        return self

    # -- per-graph sampling helpers

    def _draw_scalar(self, value, rng, integer=False):
        if isinstance(value, (list, tuple)):
            if len(value) != 2:
                raise ConfigError(f"range must be [lo, hi], got {value}")
            lo, hi = value
            if integer:
                return int(rng.integers(int(lo), int(hi) + 1))
            return float(rng.uniform(lo, hi))
        return int(value) if integer else float(value)

    def _draw_choice(self, value, rng):
        if isinstance(value, (list, tuple)):
            return int(value[rng.integers(len(value))])
        return int(value)

    def _sym_config(self, rng) -> SymmetricSbmConfig:
        k = self._draw_choice(self.k, rng)
        n_raw = self._draw_scalar(self.n, rng, integer=True)
        n = max(k, (n_raw // k) * k)
        for _ in range(10_000):
            if self.p is not None:
                cfg = SymmetricSbmConfig.from_pq(
                    n, k, self._draw_scalar(self.p, rng), self._draw_scalar(self.q, rng)
                )
            else:
                cfg = SymmetricSbmConfig(
                    n=n, k=k,
                    a=self._draw_scalar(self.a, rng),
                    b=self._draw_scalar(self.b, rng),
                )
            if self.region == "deep-recoverable":
                gap = np.sqrt(cfg.a) - np.sqrt(cfg.b)
                if gap < np.sqrt(k) + self.region_margin:
                    continue
            return cfg
        raise ConfigError("could not draw (a, b) satisfying the region constraint")

    def generate_one(self, seed: int, split: str, index: int) -> LabeledGraph:
        rng = graph_rng(seed, SPLIT_OFFSETS[split] + index)
        if self.family == "sym-sbm":
            g = gen_symmetric_log_sbm(self._sym_config(rng), rng)
        else:
            g = gen_general_sbm(
                GeneralSbmConfig(
                    self.n_min, self.n_max, self.alpha,
                    tuple(self.beta_within), tuple(self.beta_between),
                    self.min_community_size,
                ),
                rng,
            )
        g.meta["feature_seed"] = int(
            np.random.Generator(np.random.Philox(key=np.array(
                [seed, SPLIT_OFFSETS[split] + index], dtype=np.uint64
            ))).integers(0, 2**63 - 1)
        )
        g.meta["split"] = split
        g.meta["index"] = index
        return g

    def generate(self, seed: int, split: str, count: int):
        return [self.generate_one(seed, split, i) for i in range(count)]

    def load_split(self, seed: int, split: str):
        if self.family == "file":
            path = {"train": self.train_path, "val": self.val_path,
                    "test": self.test_path}[split]
            if path is None:
                return []
            return load_graphs(path)
        count = {"train": self.train_count, "val": self.val_count,
                 "test": self.test_count}[split]
        return self.generate(seed, split, count)


# ---------------------------------------------------------------------------
# experiment configuration


@dataclass
class ExperimentConfig:
    model: str = "ccp"
    encoder: str = "gatedgcn"
    features: str = "posenc"
    hidden_dim: int = 128
    feature_dim: int = 20
    gcn_layers: int = 4
    attn_heads: int = 4
    inducing_points: int = 32
    latent_dim: int | None = None
    n_importance: int = 16
    batch_size: int = 16
    iterations: int = 10_000
    learning_rate: float | None = None
    samples: int = 15
    seed: int = 0
    val_every: int = 500
    val_samples: int = 5
    checkpoint_every: int = 1000
    dataset: DatasetSpec = field(default_factory=DatasetSpec)

    def validate(self):
        for name in ("hidden_dim", "feature_dim", "batch_size", "samples",
                     "val_every", "val_samples", "checkpoint_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.learning_rate is not None and self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        try:
            self.model_config().validate()
        except ValueError as e:
            raise ConfigError(str(e)) from None
        self.dataset.validate()
        return self

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            model=self.model, encoder=self.encoder, features=self.features,
            hidden_dim=self.hidden_dim, feature_dim=self.feature_dim,
            gcn_layers=self.gcn_layers, attn_heads=self.attn_heads,
            inducing_points=self.inducing_points, latent_dim=self.latent_dim,
            n_importance=self.n_importance, feature_seed=self.seed,
        )

    def effective_lr(self) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return 5e-5 if self.model.startswith("ncp") else 1e-4

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        ds = raw.pop("dataset", {})
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        ds_known = {f for f in DatasetSpec.__dataclass_fields__}
        ds_unknown = set(ds) - ds_known
        if ds_unknown:
            raise ConfigError(f"unknown dataset keys: {sorted(ds_unknown)}")
        return cls(dataset=DatasetSpec(**ds), **raw)

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    def hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()
        ).hexdigest()


@dataclass
class RunManifest:
    config: dict
    config_hash: str
    checkpoint_path: str
    best_checkpoint_path: str | None
    loss_log_path: str
    wall_seconds: float
    val_history: list
    aborted_at: int | None = None

    def save(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# training


def _validation_ami(model: CommunityModel, graphs, n_samples: int, seed: int) -> float:
    if not graphs:
        return float("nan")
    model.set_training(False)
    scores = []
    for gi, g in enumerate(graphs):
        rng = np.random.default_rng((seed, 7, gi))
        best = map_select(model.sample(g, rng, n_samples, graph_index=gi))
        scores.append(ami(g.labels, best.labels))
    model.set_training(True)
    return float(np.mean(scores))


def train(config: ExperimentConfig, out_dir, log_every: int = 50,
          progress=None):
    """Train per config; writes checkpoints, loss log, and a run manifest.

    Returns (model, manifest). Deterministic given the config seed; raises
    NumericalAbort on a non-finite loss with the last good checkpoint kept.
    """
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()

    train_set = config.dataset.load_split(config.seed, "train")
    val_set = config.dataset.load_split(config.seed, "val")
    if not train_set:
        raise ConfigError("training set is empty")
    for g in train_set:
        if g.labels is None:
            raise ConfigError("training requires labeled graphs")

    model = build_model(config.model_config(), seed=config.seed)
    model.set_training(True)
    opt = Adam(model.named_params(), lr=config.effective_lr())

    iter_rng = np.random.default_rng((config.seed, 1))
    loss_rng = np.random.default_rng((config.seed, 2))

    ckpt_path = out_dir / "checkpoint.acdt"
    best_path = out_dir / "checkpoint_best.acdt"
    loss_log_path = out_dir / "loss_log.csv"
    loss_lines = ["iteration,loss\n"]
    val_history = []
    best_val = -np.inf
    aborted_at = None

    def save_ckpt(path, iteration):
        model.save(path, {"iteration": iteration, "seed": config.seed,
                          "experiment": config.to_dict()})

    save_ckpt(ckpt_path, 0)
    try:
        for it in range(1, config.iterations + 1):
            idxs = iter_rng.integers(0, len(train_set), size=config.batch_size)
            opt.zero_grad()
            batch_loss = 0.0
            for gi in idxs:
                graph = train_set[int(gi)]
                loss = model.loss(graph, loss_rng, graph_index=int(gi))
                (loss * (1.0 / config.batch_size)).backward()
                batch_loss += loss.item() / config.batch_size
            if not np.isfinite(batch_loss):
                aborted_at = it
                save_ckpt(out_dir / "checkpoint_last_good.acdt", it - 1)
                raise NumericalAbort(
                    it, f"non-finite loss {batch_loss} at iteration {it}; "
                        f"last good checkpoint retained in {out_dir}"
                )
            opt.step()
            loss_lines.append(f"{it},{batch_loss!r}\n")
            if progress and it % log_every == 0:
                progress(it, batch_loss)
            if config.val_every and it % config.val_every == 0:
                vami = _validation_ami(model, val_set, config.val_samples,
                                       config.seed + it)
                val_history.append({"iteration": it, "ami": vami})
                if val_set and vami >= best_val:
                    best_val = vami
                    save_ckpt(best_path, it)
            if it % config.checkpoint_every == 0 or it == config.iterations:
                save_ckpt(ckpt_path, it)
    finally:
        with open(loss_log_path, "w") as f:
            f.writelines(loss_lines)
        manifest = RunManifest(
            config=config.to_dict(),
            config_hash=config.hash(),
            checkpoint_path=str(ckpt_path),
            best_checkpoint_path=str(best_path) if best_path.exists() else None,
            loss_log_path=str(loss_log_path),
            wall_seconds=time.perf_counter() - t0,
            val_history=val_history,
            aborted_at=aborted_at,
        )
        manifest.save(out_dir / "manifest.json")
    model.set_training(False)
    return model, manifest


# ---------------------------------------------------------------------------
# inference


def _infer_one(model: CommunityModel, graph: LabeledGraph, gi: int,
               n_samples: int, seed: int):
    rng = np.random.default_rng((seed, 11, gi))
    samples = model.sample(graph, rng, n_samples, graph_index=gi)
    best = map_select(samples)
    row_ami = row_ari = None
    k_true = None
    if graph.labels is not None:
        row_ami = ami(graph.labels, best.labels)
        row_ari = ari(graph.labels, best.labels)
        k_true = graph.n_communities
    return {
        "graph_id": gi,
        "ami": row_ami,
        "ari": row_ari,
        "k_true": k_true,
        "k_map": best.n_clusters,
        "score": best.score,
        "samples": samples,
        "map_labels": best.labels,
    }


_POOL_MODEL = None


def _pool_init(checkpoint_path):
    global _POOL_MODEL
    _POOL_MODEL = load_model(checkpoint_path)


def _pool_task(args):
    record, gi, n_samples, seed = args
    graph = LabeledGraph(record["adjacency"], labels=record.get("labels"),
                         meta=record.get("meta", {}))
    res = _infer_one(_POOL_MODEL, graph, gi, n_samples, seed)
    res.pop("samples")  # keep worker payloads small
    return res


def infer(model: CommunityModel, graphs, n_samples: int, seed: int,
          out_csv=None, checkpoint_path=None, keep_samples: bool = True):
    """Posterior samples + MAP + metrics per graph; optional CSV output.

    With ACD_THREADS > 1 and a checkpoint path, graphs fan out across a
    process pool; results are ordered by graph index either way.
    """
    workers = worker_count(len(graphs))
    if workers > 1 and checkpoint_path is not None:
        import multiprocessing as mp

        tasks = [
            ({"adjacency": g.adjacency, "labels": g.labels, "meta": g.meta},
             gi, n_samples, seed)
            for gi, g in enumerate(graphs)
        ]
        ctx = mp.get_context("fork")
        with ctx.Pool(workers, initializer=_pool_init,
                      initargs=(checkpoint_path,)) as pool:
            results = pool.map(_pool_task, tasks)
    else:
        results = []
        for gi, g in enumerate(graphs):
            res = _infer_one(model, g, gi, n_samples, seed)
            if not keep_samples:
                res.pop("samples")
            results.append(res)
    if out_csv is not None:
        write_metrics_csv(out_csv, [
            (r["graph_id"], r["ami"], r["ari"], r["k_true"], r["k_map"], r["score"])
            for r in results
        ])
    return results


# ---------------------------------------------------------------------------
# threshold sweep over (a, b)


def threshold_sweep(model: CommunityModel, a_values, b_values, k: int, n: int,
                    reps: int, n_samples: int, seed: int, out_dir):
    """Mean AMI per (a, b) grid cell plus the |sqrt a - sqrt b| = sqrt K curve.

    Cells whose p or q exceeds 1 are skipped and flagged. Writes
    sweep.csv and threshold_curve.csv; returns the grid rows.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for cell, (a, b) in enumerate((a, b) for a in a_values for b in b_values):
        cfg = SymmetricSbmConfig(n=n, k=k, a=float(a), b=float(b))
        if cfg.p > 1.0 or cfg.q > 1.0:
            rows.append({"a": float(a), "b": float(b), "mean_ami": None,
                         "std_ami": None, "skipped": True})
            continue
        scores = []
        for rep in range(reps):
            rng = graph_rng(seed, 3_000_000_000 + cell * 10_000 + rep)
            g = gen_symmetric_log_sbm(cfg, rng)
            res = _infer_one(model, g, rep, n_samples, seed + cell)
            scores.append(res["ami"])
        rows.append({
            "a": float(a), "b": float(b),
            "mean_ami": float(np.mean(scores)),
            "std_ami": float(np.std(scores)),
            "skipped": False,
        })
    with open(out_dir / "sweep.csv", "w") as f:
        f.write("a,b,mean_ami,std_ami,skipped\n")
        for r in rows:
            mean = "" if r["mean_ami"] is None else repr(r["mean_ami"])
            std = "" if r["std_ami"] is None else repr(r["std_ami"])
            f.write(f"{r['a']},{r['b']},{mean},{std},{int(r['skipped'])}\n")
    with open(out_dir / "threshold_curve.csv", "w") as f:
        f.write("a,b_lower,b_upper\n")
        for a in np.linspace(min(a_values), max(a_values), 200):
            a = float(a)
            root = np.sqrt(a) - np.sqrt(k)
            lower = repr(float(root * root)) if root >= 0 else ""
            upper = repr(float((np.sqrt(a) + np.sqrt(k)) ** 2))
            f.write(f"{a!r},{lower},{upper}\n")
    return rows


# ---------------------------------------------------------------------------
# calibration, bench, uncertainty


def calibrate(model: CommunityModel, graphs, n_samples: int, n_bins: int,
              seed: int, out_csv=None):
    per_graph_ks = []
    true_ks = []
    for gi, g in enumerate(graphs):
        if g.labels is None:
            raise ConfigError("calibration requires labeled graphs")
        rng = np.random.default_rng((seed, 13, gi))
        samples = model.sample(g, rng, n_samples, graph_index=gi)
        per_graph_ks.append([s.n_clusters for s in samples])
        true_ks.append(g.n_communities)
    report = ece(per_graph_ks, true_ks, n_bins)
    if out_csv is not None:
        path = Path(out_csv)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            f.write("bin,lo,hi,count,accuracy,confidence,ece\n")
            for i in range(report.n_bins):
                f.write(
                    f"{i + 1},{i / report.n_bins!r},{(i + 1) / report.n_bins!r},"
                    f"{report.counts[i]},{report.accuracy[i]!r},"
                    f"{report.confidence[i]!r},{report.ece!r}\n"
                )
    return report


def bench(model: CommunityModel, graphs, sample_sizes, seed: int, out_csv=None):
    """Wall time and network-call counters per graph and sample budget."""
    rows = []
    for s in sample_sizes:
        for gi, g in enumerate(graphs):
            rng = np.random.default_rng((seed, 17, gi, s))
            t0 = time.perf_counter()
            samples = model.sample(g, rng, s, graph_index=gi)
            dt = time.perf_counter() - t0
            counters = [
                sample.diagnostics.get("network_calls",
                                       sample.diagnostics.get("rounds"))
                for sample in samples
            ]
            rows.append({
                "graph_id": gi, "n": g.n_nodes,
                "k_true": g.n_communities if g.labels is not None else None,
                "samples": s, "seconds": dt, "seconds_per_sample": dt / s,
                "mean_calls_per_sample": float(np.mean(counters)),
                "calls": counters,
            })
    if out_csv is not None:
        path = Path(out_csv)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            f.write("graph_id,n,k_true,samples,seconds,seconds_per_sample,"
                    "mean_calls_per_sample\n")
            for r in rows:
                kt = "" if r["k_true"] is None else r["k_true"]
                f.write(
                    f"{r['graph_id']},{r['n']},{kt},{r['samples']},"
                    f"{r['seconds']!r},{r['seconds_per_sample']!r},"
                    f"{r['mean_calls_per_sample']!r}\n"
                )
    return rows


def uncertainty_report(model: CommunityModel, graphs, n_samples: int,
                       seed: int, out_csv=None):
    rows = []
    for gi, g in enumerate(graphs):
        rng = np.random.default_rng((seed, 19, gi))
        samples = model.sample(g, rng, n_samples, graph_index=gi)
        mean_k, std_k = uncertainty_stats(samples)
        rows.append({
            "graph_id": gi,
            "k_true": g.n_communities if g.labels is not None else None,
            "mean_k": mean_k, "std_k": std_k,
        })
    if out_csv is not None:
        path = Path(out_csv)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            f.write("graph_id,k_true,mean_k,std_k\n")
            for r in rows:
                kt = "" if r["k_true"] is None else r["k_true"]
                f.write(f"{r['graph_id']},{kt},{r['mean_k']!r},{r['std_k']!r}\n")
    return rows


# ---------------------------------------------------------------------------
# dataset generation entry (used by the CLI)


def generate_dataset(spec: DatasetSpec, seed: int, split: str, count: int,
                     out_path):
    spec.validate()
    if spec.family == "file":
        raise ConfigError("gen-data needs a generative family, not 'file'")
    graphs = spec.generate(seed, split, count)
    save_graphs(out_path, graphs)
    return graphs
