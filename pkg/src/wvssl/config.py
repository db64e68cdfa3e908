"""Layered run configuration: built-in defaults, overridden by an INI config
file, overridden by CLI flags. The fully resolved configuration is echoed
into every artifact (checkpoints, embedding stores, reports) for provenance.

File layout: sections [run], [encoder], [train], [knn], [linear], [mlp],
[finetune], [retrieval], [eval], plus one [pool.<policy>] section per
augmentation policy in pool order.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, asdict
from pathlib import Path

from .augment import (baseline_pool, default_policy, policy_param,
                      validate_policy, _DEFAULTS as POLICY_DEFAULTS)
from .contrastive import TrainConfig
from .encoder import EncoderConfig
from .errors import ConfigError

POOL_SECTION_PREFIX = "pool."


@dataclass
class RunConfig:
    seed: int = 0
    threads: int = 1
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    pool: list = field(default_factory=baseline_pool)
    knn_k: int = 15
    knn_tau: float = 0.07
    linear_epochs: int = 200
    linear_lr: float = 0.01
    linear_l2: float = 1e-6
    mlp_hidden: tuple = (256, 256)
    mlp_epochs: int = 200
    mlp_lr: float = 1e-3
    mlp_batch_size: int = 256
    finetune_epochs: int = 10
    finetune_batch_size: int = 256
    finetune_lr: float = 0.05
    finetune_backbone_lr: float = 0.007
    finetune_head_lr: float = 0.025
    finetune_weight_decay: float = 1e-6
    finetune_dropout: float = 0.5
    retrieval_trials: int = 100
    retrieval_k: int = 20
    retrieval_relevance: str = "anchor_class"
    f1_threshold: float = 0.5

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "threads": self.threads,
            "encoder": self.encoder.to_dict(),
            "train": asdict(self.train),
            "pool": [{"kind": p.kind, "probability": p.probability,
                      "params": dict(p.params)} for p in self.pool],
            "knn": {"k": self.knn_k, "tau": self.knn_tau},
            "linear": {"epochs": self.linear_epochs, "lr": self.linear_lr,
                       "l2": self.linear_l2},
            "mlp": {"hidden": list(self.mlp_hidden), "epochs": self.mlp_epochs,
                    "lr": self.mlp_lr, "batch_size": self.mlp_batch_size},
            "finetune": {"epochs": self.finetune_epochs,
                         "batch_size": self.finetune_batch_size,
                         "lr": self.finetune_lr,
                         "backbone_lr": self.finetune_backbone_lr,
                         "head_lr": self.finetune_head_lr,
                         "weight_decay": self.finetune_weight_decay,
                         "dropout": self.finetune_dropout},
            "retrieval": {"trials": self.retrieval_trials,
                          "k": self.retrieval_k,
                          "relevance": self.retrieval_relevance},
            "eval": {"f1_threshold": self.f1_threshold},
        }


_INT_FIELDS = {
    ("run", "seed"), ("run", "threads"),
    ("encoder", "input_side"), ("encoder", "blocks_per_stage"),
    ("encoder", "stem_stride"),
    ("train", "epochs"), ("train", "batch_size"), ("train", "warmup_epochs"),
    ("train", "redraw_period"), ("train", "checkpoint_period"), ("train", "seed"),
    ("knn", "k"),
    ("linear", "epochs"),
    ("mlp", "epochs"), ("mlp", "batch_size"),
    ("finetune", "epochs"), ("finetune", "batch_size"),
    ("retrieval", "trials"), ("retrieval", "k"),
}
_TUPLE_FIELDS = {("encoder", "stage_widths"), ("encoder", "projector_widths"),
                 ("mlp", "hidden")}
_STR_FIELDS = {("retrieval", "relevance")}
_OPTIONAL_FLOAT_FIELDS = {("train", "base_lr")}


def _convert(section: str, key: str, raw: str):
    raw = raw.strip()
    if (section, key) in _TUPLE_FIELDS:
        try:
            return tuple(int(tok) for tok in raw.split(",") if tok.strip())
        except ValueError:
            raise ConfigError(f"[{section}] {key}: expected comma-joined integers")
    if (section, key) in _INT_FIELDS:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"[{section}] {key}: expected integer, got {raw!r}")
    if (section, key) in _STR_FIELDS:
        return raw
    if (section, key) in _OPTIONAL_FLOAT_FIELDS and raw.lower() in ("", "none"):
        return None
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected number, got {raw!r}")


_SECTION_FIELD_MAP = {
    ("run", "seed"): "seed",
    ("run", "threads"): "threads",
    ("knn", "k"): "knn_k",
    ("knn", "tau"): "knn_tau",
    ("linear", "epochs"): "linear_epochs",
    ("linear", "lr"): "linear_lr",
    ("linear", "l2"): "linear_l2",
    ("mlp", "hidden"): "mlp_hidden",
    ("mlp", "epochs"): "mlp_epochs",
    ("mlp", "lr"): "mlp_lr",
    ("mlp", "batch_size"): "mlp_batch_size",
    ("finetune", "epochs"): "finetune_epochs",
    ("finetune", "batch_size"): "finetune_batch_size",
    ("finetune", "lr"): "finetune_lr",
    ("finetune", "backbone_lr"): "finetune_backbone_lr",
    ("finetune", "head_lr"): "finetune_head_lr",
    ("finetune", "weight_decay"): "finetune_weight_decay",
    ("finetune", "dropout"): "finetune_dropout",
    ("retrieval", "trials"): "retrieval_trials",
    ("retrieval", "k"): "retrieval_k",
    ("retrieval", "relevance"): "retrieval_relevance",
    ("eval", "f1_threshold"): "f1_threshold",
}


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Resolve defaults < config file < flag overrides into a validated
    RunConfig. `overrides` maps dotted keys ('train.epochs', 'run.seed') to
    already-typed values."""
    config = RunConfig()
    encoder_kw = config.encoder.to_dict()
    train_kw = asdict(config.train)
    pool = None

    if path is not None:
        cp = configparser.ConfigParser()
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"bad config file {path}: {exc}") from exc
        pool_sections = []
        for section in cp.sections():
            if section.startswith(POOL_SECTION_PREFIX):
                pool_sections.append(section)
                continue
            if section not in ("run", "encoder", "train", "knn", "linear",
                               "mlp", "finetune", "retrieval", "eval"):
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in cp.items(section):
                value = _convert(section, key, raw)
                if section == "encoder":
                    if key not in encoder_kw:
                        raise ConfigError(f"[encoder] unknown key {key!r}")
                    encoder_kw[key] = value
                elif section == "train":
                    if key == "seed":
                        raise ConfigError("set [run] seed; it drives every stage")
                    if key not in train_kw:
                        raise ConfigError(f"[train] unknown key {key!r}")
                    train_kw[key] = value
                else:
                    field_name = _SECTION_FIELD_MAP.get((section, key))
                    if field_name is None:
                        raise ConfigError(f"[{section}] unknown key {key!r}")
                    setattr(config, field_name, value)
        if pool_sections:
            pool = []
            for section in pool_sections:
                kind = section[len(POOL_SECTION_PREFIX):]
                policy = default_policy(kind)
                for key, raw in cp.items(section):
                    if key == "probability":
                        policy.probability = _convert(section, key, raw)
                    elif key == "per_channel":
                        policy.params[key] = raw.strip().lower() in (
                            "1", "true", "yes", "on")
                    elif key in ("max_repeats", "pool_size", "max_zeroed"):
                        policy.params[key] = int(_convert(section, key, raw))
                    else:
                        policy.params[key] = _convert(section, key, raw)
                pool.append(policy)

    if overrides:
        for dotted, value in overrides.items():
            if value is None:
                continue
            section, _, key = dotted.partition(".")
            if section == "encoder":
                encoder_kw[key] = value
            elif section == "train":
                train_kw[key] = value
            elif (section, key) in _SECTION_FIELD_MAP:
                setattr(config, _SECTION_FIELD_MAP[(section, key)], value)
            else:
                raise ConfigError(f"unknown override {dotted!r}")

    train_kw["seed"] = config.seed  # one seed drives every stage
    config.encoder = EncoderConfig.from_dict(encoder_kw)
    config.train = TrainConfig(**train_kw)
    if pool is not None:
        config.pool = pool
    return validate_config(config)


def validate_config(config: RunConfig) -> RunConfig:
    """Enforce every documented parameter bound; violations name the
    documented default so the fix is obvious."""
    if config.threads < 1:
        raise ConfigError("threads must be >= 1")
    if config.train.temperature <= 0.0:
        raise ConfigError("temperature must be positive (documented default 0.5)")
    if not config.pool:
        raise ConfigError("augmentation pool must not be empty")
    for policy in config.pool:
        validate_policy(policy)
    if config.knn_k < 1:
        raise ConfigError("knn k must be >= 1 (documented default 15)")
    if config.knn_tau <= 0.0:
        raise ConfigError("knn tau must be positive (documented default 0.07)")
    if config.linear_epochs < 1 or config.mlp_epochs < 1 or config.finetune_epochs < 1:
        raise ConfigError("probe epochs must be >= 1")
    if len(config.mlp_hidden) != 2 or any(w < 1 for w in config.mlp_hidden):
        raise ConfigError("mlp hidden must be two positive widths "
                          "(documented default 256,256; reference protocol 2048,2048)")
    if config.retrieval_trials < 1:
        raise ConfigError("retrieval trials must be >= 1 (documented default 100)")
    if config.retrieval_k < 1:
        raise ConfigError("retrieval k must be >= 1 (documented default 20)")
    if config.retrieval_relevance not in ("anchor_class", "any_overlap"):
        raise ConfigError("retrieval relevance must be anchor_class or any_overlap")
    if not 0.0 < config.f1_threshold < 1.0:
        raise ConfigError("f1 threshold must be in (0, 1) (documented default 0.5)")
    if not 0.0 <= config.finetune_dropout < 1.0:
        raise ConfigError("finetune dropout must be in [0, 1) "
                          "(documented default 0.5)")
    # mirror the per-policy bound checks with default-suggesting messages
    for policy in config.pool:
        if policy.kind == "mixup":
            lo = policy_param(policy, "m_min")
            hi = policy_param(policy, "m_max")
            defaults = POLICY_DEFAULTS["mixup"]
            if not 0.0 <= lo <= hi <= 1.0:
                raise ConfigError(
                    f"mixup strength range [{lo}, {hi}] invalid; documented "
                    f"default [{defaults['m_min']}, {defaults['m_max']}]")
    return config
