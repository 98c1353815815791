"""Run configuration and the wiring of encoders, attention and fusion heads.

Fusion modes:

``dual``
    omic encoder -> early fusion -> gated attention -> aggregator(W, o)
``early_only``
    omic encoder -> early fusion -> gated attention -> linear head on W
``late_only``
    gated attention on raw patches -> aggregator(W, o)
``omic_only`` / ``wsi_only``
    unimodal baselines: linear head on o, or on W from raw patches
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import attention, encoders, fusion
from . import tensor as T
from .layers import Params, init_linear, linear
from .tensor import ParameterError, Tensor

FUSION_STAGES = ("dual", "early_only", "late_only", "omic_only", "wsi_only")
TASKS = ("subtype", "survival")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass
class RunConfig:
    seed: int = 0
    task: str = "subtype"
    fusion: str = "dual"
    aggregator: str = "moab"
    n_features: int = 8000
    d_e: int = 1024
    d_o: int = 256
    snn_hidden: int = 1024
    fuse_hidden: int = 512
    attn_hidden: int = 256
    n_bins: int = 4
    epsilon: float = 1e-8
    lr: float = 2e-4
    weight_decay: float = 1e-5
    betas: tuple[float, float] = (0.9, 0.999)
    epochs: int = 30
    batch_size: int = 1
    folds: int = 2
    class_weights: bool = False
    grad_clip: float | None = None
    select_features: int | None = None
    snn_dropout: float = encoders.SNN_DROPOUT
    fuse_dropout: float = encoders.FUSE_DROPOUT
    rho_dropout: float = attention.RHO_DROPOUT

    def __post_init__(self):
        self.betas = tuple(self.betas)
        self.validate()

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.fusion not in FUSION_STAGES:
            raise ConfigError(f"fusion must be one of {FUSION_STAGES}, got {self.fusion!r}")
        if self.aggregator not in fusion.FUSION_MODES:
            raise ConfigError(f"aggregator must be one of {fusion.FUSION_MODES}, got {self.aggregator!r}")
        for name in ("n_features", "d_e", "d_o", "snn_hidden", "fuse_hidden", "attn_hidden",
                     "epochs", "batch_size", "n_bins"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.folds < 2:
            raise ConfigError(f"folds must be >= 2, got {self.folds}")
        if self.task == "survival" and self.n_bins < 2:
            raise ConfigError("survival needs at least 2 bins")
        if self.select_features is not None and not 1 <= self.select_features <= self.n_features:
            raise ConfigError(f"select_features must lie in [1, n_features], got {self.select_features}")

    @property
    def omic_width(self) -> int:
        """Input width of the omic encoder after optional feature selection."""
        return self.select_features or self.n_features

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class ForwardResult:
    logits: Tensor
    attention: Tensor | None = None
    slide_embedding: Tensor | None = None
    omic_embedding: Tensor | None = None


@dataclass
class MoadNet:
    """Parameters plus forward pass for one fusion configuration."""

    config: RunConfig
    n_out: int
    params: Params = field(default_factory=dict)

    @classmethod
    def build(cls, config: RunConfig, n_out: int, rng) -> "MoadNet":
        cfg = config
        rng = T.make_rng(rng)
        params: Params = {}
        uses_omic = cfg.fusion in ("dual", "early_only", "late_only", "omic_only")
        uses_early = cfg.fusion in ("dual", "early_only")
        uses_attn = cfg.fusion != "omic_only"
        uses_agg = cfg.fusion in ("dual", "late_only")
        if uses_omic:
            params.update(encoders.init_snn_params(cfg.omic_width, cfg.snn_hidden, cfg.d_o, rng))
        if uses_early:
            params.update(encoders.init_fuse_params(cfg.d_e, cfg.d_o, cfg.fuse_hidden, cfg.d_o, rng))
        if uses_attn:
            d_in = cfg.d_o if uses_early else cfg.d_e
            params.update(attention.init_attention_params(d_in, cfg.attn_hidden, cfg.d_o, rng))
        if uses_agg:
            params.update(fusion.init_fusion_params(cls._fusion_cfg(cfg, n_out), cfg.d_o, cfg.d_o, rng))
        else:
            params.update(init_linear("head", cfg.d_o, n_out, rng))
        for name, p in params.items():
            p.name = name
        return cls(config=cfg, n_out=n_out, params=params)

    @staticmethod
    def _fusion_cfg(cfg: RunConfig, n_out: int) -> fusion.FusionConfig:
        return fusion.FusionConfig(mode=cfg.aggregator, n_out=n_out, epsilon=cfg.epsilon)

    @property
    def fusion_config(self) -> fusion.FusionConfig:
        return self._fusion_cfg(self.config, self.n_out)

    def parameter_names(self) -> list[str]:
        return sorted(self.params)

    def head_input_width(self) -> int:
        key = f"{self.config.aggregator}.head.weight" if self.config.fusion in ("dual", "late_only") else "head.weight"
        return self.params[key].shape[0]

    def forward(self, omic, bag, training: bool = False, rng=None) -> ForwardResult:
        cfg = self.config
        if training and rng is None:
            raise ParameterError("training forward needs a random generator")
        p = self.params
        o = None
        if cfg.fusion != "wsi_only":
            o = encoders.snn_encode(omic, p, training, rng, cfg.snn_dropout)
        if cfg.fusion == "omic_only":
            return ForwardResult(logits=linear(o, p, "head"), omic_embedding=o)

        e = bag.embeddings if isinstance(bag, encoders.PatchBag) else bag
        if cfg.fusion in ("dual", "early_only"):
            inst = encoders.early_fuse(e, o, p, training, rng, cfg.fuse_dropout)
        else:
            inst = e if isinstance(e, Tensor) else Tensor(e)
        scores = attention.compute_attention(inst, p)
        w = attention.pool_slide(scores, p, training, rng, cfg.rho_dropout)
        if cfg.fusion in ("dual", "late_only"):
            logits = fusion.fuse(w, o, self.fusion_config, p)
        else:
            logits = linear(w, p, "head")
        return ForwardResult(logits=logits, attention=scores.weights, slide_embedding=w, omic_embedding=o)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) ^ set(state)
        if missing:
            raise ConfigError(f"checkpoint parameters do not match model: {sorted(missing)}")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise ConfigError(f"{k}: checkpoint shape {v.shape} != model shape {self.params[k].shape}")
            self.params[k] = Tensor(v, requires_grad=True, name=k)
