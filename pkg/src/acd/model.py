"""End-to-end community model: feature provider + GCN encoder + clustering head."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .encoders import GcnConfig, InputEmbed, build_encoder
from .graphs import LabeledGraph
from .heads import CCPHead, DACHead, NCPHead
from .nn import Module
from .posenc import PosEncConfig, laplacian_pos_enc, random_features
from .tensor import Tensor

__all__ = ["ModelConfig", "CommunityModel", "build_model", "load_model"]

MODELS = ("ncp", "ncp-attn", "ccp", "ccp-attn", "dac")
ENCODERS = ("graphsage", "gatedgcn")
FEATURES = ("posenc", "random")


@dataclass
class ModelConfig:
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
    feature_seed: int = 0

    def validate(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; choose from {MODELS}")
        if self.encoder not in ENCODERS:
            raise ValueError(f"unknown encoder {self.encoder!r}; choose from {ENCODERS}")
        if self.features not in FEATURES:
            raise ValueError(f"unknown features {self.features!r}; choose from {FEATURES}")
        if min(self.hidden_dim, self.feature_dim, self.gcn_layers,
               self.attn_heads, self.inducing_points, self.n_importance) < 1:
            raise ValueError("all dimensions/counts must be positive")
        if self.hidden_dim % self.attn_heads:
            raise ValueError("hidden_dim must be divisible by attn_heads")
        return self


class CommunityModel(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        config.validate()
        self.config = config
        d = config.hidden_dim
        self.embed = InputEmbed(rng, config.feature_dim, d)
        self.gcn = build_encoder(
            rng,
            GcnConfig(config.encoder, config.gcn_layers, d, config.feature_dim),
        )
        if config.model.startswith("ncp"):
            self.head = NCPHead(rng, d, attn=config.model.endswith("attn"),
                                heads=config.attn_heads,
                                m_inducing=config.inducing_points)
        elif config.model.startswith("ccp"):
            self.head = CCPHead(rng, d, attn=config.model.endswith("attn"),
                                d_z=config.latent_dim,
                                heads=config.attn_heads,
                                m_inducing=config.inducing_points,
                                n_importance=config.n_importance)
        else:
            self.head = DACHead(rng, d, heads=config.attn_heads,
                                m_inducing=config.inducing_points)

    # ------------------------------------------------------------------

    def node_features(self, graph: LabeledGraph, rng=None, graph_index: int = 0):
        cfg = self.config
        if cfg.features == "posenc":
            mode = "train" if self.training else "eval"
            return laplacian_pos_enc(
                graph, PosEncConfig(cfg.feature_dim), rng=rng, mode=mode
            )
        return random_features(graph, cfg.feature_dim, cfg.feature_seed, graph_index)

    def embeddings(self, graph: LabeledGraph, rng=None, graph_index: int = 0) -> Tensor:
        feats = self.node_features(graph, rng=rng, graph_index=graph_index)
        return self.gcn(graph, self.embed(Tensor(feats)))

    def loss(self, graph: LabeledGraph, rng, graph_index: int = 0) -> Tensor:
        if graph.labels is None:
            raise ValueError("training requires labeled graphs")
        x = self.embeddings(graph, rng=rng, graph_index=graph_index)
        return self.head.loss(x, graph.labels, rng)

    def sample(self, graph: LabeledGraph, rng, n_samples: int, graph_index: int = 0):
        x = self.embeddings(graph, rng=rng, graph_index=graph_index)
        return self.head.sample(x, rng, n_samples)

    # ------------------------------------------------------------------

    def save(self, path, extra_meta: dict | None = None):
        meta = {"config": asdict(self.config)}
        if extra_meta:
            meta.update(extra_meta)
        save_checkpoint(path, [(n, t.data) for n, t in self.named_state()], meta)

    @property
    def n_parameters(self) -> int:
        return sum(t.data.size for _, t in self.named_params())


def build_model(config: ModelConfig, seed: int) -> CommunityModel:
    rng = np.random.default_rng(seed)
    return CommunityModel(config, rng)


def load_model(path, expect_model: str | None = None) -> CommunityModel:
    arrays, meta = load_checkpoint(path)
    if "config" not in meta:
        raise ValueError(f"checkpoint {path} carries no model config")
    config = ModelConfig(**meta["config"])
    if expect_model is not None and expect_model != config.model:
        raise ValueError(
            f"checkpoint holds a {config.model!r} model but {expect_model!r} was requested"
        )
    model = CommunityModel(config, np.random.default_rng(0))
    model.load_state(arrays)
    model.set_training(False)
    return model
