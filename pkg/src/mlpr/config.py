"""Run configuration: data, features, model toggles, training, and presets."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .data import FunnelParams, params_dict
from .errors import ContractError

TOGGLES = (
    "uncertainty_loss",
    "specific_experts",
    "attention_units",
    "probability_transfer",
    "feature_refresh",
    "single_task",
)


def _from_dict(cls, d, where):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ContractError(f"unknown {where} keys: {sorted(unknown)}")
    return cls(**d)


@dataclass
class ModelConfig:
    uncertainty_loss: bool = True
    specific_experts: bool = True
    attention_units: bool = True
    probability_transfer: bool = True
    feature_refresh: bool = False
    single_task: bool = False
    n_experts_stage1: int = 4
    n_shared_stage2: int = 2
    n_specific_stage2: int = 2
    expert_hidden: list = field(default_factory=lambda: [512, 256, 128])
    stage2_hidden: list = field(default_factory=lambda: [128])
    tower_hidden: list = field(default_factory=lambda: [64])
    tower_dim: int = 32
    attention_readout: str = "position"
    dropout: float = 0.2
    fixed_weights: list = field(default_factory=lambda: [1 / 3, 1 / 3, 1 / 3])
    seed: int = 0

    def validate(self):
        if self.single_task and any(
            getattr(self, t) for t in TOGGLES if t not in ("single_task", "feature_refresh")
        ):
            raise ContractError("single_task excludes the multi-task toggles")
        if min(self.n_experts_stage1, self.n_shared_stage2, self.n_specific_stage2) < 1:
            raise ContractError("expert counts must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError("dropout must be in [0, 1)")
        if self.attention_readout not in ("position", "mean"):
            raise ContractError(f"unknown attention readout {self.attention_readout!r}")
        if len(self.fixed_weights) != 3 or min(self.fixed_weights) < 0:
            raise ContractError("fixed_weights must be 3 nonnegative numbers")

    def toggles(self):
        return {t: getattr(self, t) for t in TOGGLES}


@dataclass
class FeatureConfig:
    mode: str = "hash-encoder"
    dim: int = 256
    encoder_seed: int = 0
    query_embeddings: str | None = None
    item_embeddings: str | None = None
    refresh_candidates: int = 8


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 256
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 3
    max_steps: int | None = None
    impression_weighting: bool = False
    seed: int = 0


@dataclass
class DataConfig:
    funnel: FunnelParams = field(default_factory=FunnelParams)
    min_impressions: int = 5
    fractions: tuple = (0.8, 0.1, 0.1)
    by_query: bool = False
    split_seed: int = 0


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self):
        d = asdict(self)
        d["data"]["funnel"] = params_dict(self.data.funnel)
        d["data"]["fractions"] = list(self.data.fractions)
        return d

    @classmethod
    def from_dict(cls, d):
        d = copy.deepcopy(d)
        data = d.get("data", {})
        funnel = FunnelParams.from_dict(data.pop("funnel", {}))
        if "fractions" in data:
            data["fractions"] = tuple(data["fractions"])
        cfg = cls(
            data=_from_dict(DataConfig, {**data, "funnel": funnel}, "data"),
            features=_from_dict(FeatureConfig, d.get("features", {}), "features"),
            model=_from_dict(ModelConfig, d.get("model", {}), "model"),
            train=_from_dict(TrainConfig, d.get("train", {}), "train"),
        )
        extra = set(d) - {"data", "features", "model", "train", "preset"}
        if extra:
            raise ContractError(f"unknown config sections: {sorted(extra)}")
        cfg.model.validate()
        return cfg

    def with_seed(self, seed):
        cfg = copy.deepcopy(self)
        cfg.data.funnel.seed = seed
        cfg.data.split_seed = seed
        cfg.model.seed = seed
        cfg.train.seed = seed
        return cfg

    def with_model(self, **changes):
        cfg = copy.deepcopy(self)
        cfg.model = replace(cfg.model, **changes)
        cfg.model.validate()
        return cfg


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


PRESETS = {
    "default": {},
    # reduced widths so a 50k-pair comparison fits a single CPU core
    "desk": {
        "data": {"funnel": {"n_queries": 1290, "n_items": 6000, "items_per_query": 40,
                            "n_features": 16}},
        "features": {"dim": 32},
        "model": {"expert_hidden": [128, 64], "stage2_hidden": [64], "tower_hidden": [32],
                  "tower_dim": 16},
        "train": {"epochs": 8, "batch_size": 256, "lr": 2e-3},
    },
    "small": {
        "data": {"funnel": {"n_queries": 150, "n_items": 1500, "items_per_query": 30,
                            "n_features": 8}},
        "features": {"dim": 16},
        "model": {"expert_hidden": [32, 16], "stage2_hidden": [16], "tower_hidden": [16],
                  "tower_dim": 8, "n_experts_stage1": 3},
        "train": {"epochs": 3, "batch_size": 128, "lr": 3e-3},
    },
    "tiny": {
        "data": {"funnel": {"n_queries": 4, "n_items": 40, "items_per_query": 4,
                            "n_features": 3}},
        "features": {"dim": 4},
        "model": {"expert_hidden": [8], "stage2_hidden": [8], "tower_hidden": [8],
                  "tower_dim": 4, "n_experts_stage1": 2, "n_shared_stage2": 1,
                  "n_specific_stage2": 1, "dropout": 0.2},
        "train": {"batch_size": 4},
    },
    "overfit": {
        "data": {"funnel": {"n_queries": 8, "n_items": 200, "items_per_query": 12,
                            "n_features": 8, "impression_mean": 20.0}},
        "features": {"dim": 8},
        "model": {"expert_hidden": [64, 32], "stage2_hidden": [32], "tower_hidden": [32],
                  "tower_dim": 16, "dropout": 0.0, "uncertainty_loss": False},
        "train": {"batch_size": 64, "lr": 3e-3, "max_steps": 2000, "epochs": 100000,
                  "patience": 100000},
    },
    "bench": {
        "data": {"funnel": {"n_queries": 250, "n_items": 5000, "items_per_query": 120,
                            "impression_mean": 30.0}},
        "train": {"epochs": 1},
    },
}


def preset(name) -> RunConfig:
    try:
        over = PRESETS[name]
    except KeyError:
        raise ContractError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return RunConfig.from_dict(_merge(RunConfig().to_dict(), over))


def load_config(path=None, preset_name=None) -> RunConfig:
    base = RunConfig().to_dict()
    over = {}
    if path is not None:
        over = json.loads(Path(path).read_text(encoding="utf-8"))
        preset_name = preset_name or over.get("preset")
    if preset_name:
        base = _merge(base, PRESETS[preset_name] if preset_name in PRESETS else preset(preset_name).to_dict())
    return RunConfig.from_dict(_merge(base, {k: v for k, v in over.items() if k != "preset"}))


SWEEPS = {
    "dropout": (0.2, 0.4, 0.6, 0.8),
    "layers": (2, 3, 4),
}


def sweep_configs(cfg: RunConfig, name):
    """``(label, config)`` pairs for a one-parameter sweep around ``cfg``.

    ``layers`` sets the expert depth, halving the width per layer from the
    first configured width (512 gives [512, 256], [512, 256, 128], ...).
    """
    if name not in SWEEPS:
        raise ContractError(f"unknown sweep {name!r}; choose from {sorted(SWEEPS)}")
    out = []
    for v in SWEEPS[name]:
        if name == "dropout":
            out.append((f"dropout{v}", cfg.with_model(dropout=v)))
        else:
            w = cfg.model.expert_hidden[0]
            hidden = [max(1, w >> i) for i in range(v)]
            out.append((f"layers{v}", cfg.with_model(expert_hidden=hidden,
                                                     stage2_hidden=[hidden[-1]])))
    return out


def dump_config(cfg: RunConfig, path):
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
