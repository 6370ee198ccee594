"""Experiment configuration: a flat, human-writable key = value format.

Keys use dotted section names (``reg.alpha = 0.2``); ``#`` starts a comment.
Parsing is strict: unknown keys, malformed values, and out-of-range fields
raise :class:`ConfigError` naming the offending key.  ``to_text`` emits a
canonical form, so parse -> serialize -> parse is the identity.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace

from .errors import ConfigError
from .regularizers import (
    ADJACENCY_MODES,
    GENERATOR_KINDS,
    SCHEDULER_KINDS,
    RegularizerConfig,
)

__all__ = ["ExperimentConfig", "parse_config", "parse_config_file", "config_to_text"]

REG_KINDS = ("none", "dropout", "spatial_dropout", "dropblock", "dropgraph", "pgr")
TASKS = ("image", "node_graph")


@dataclass
class ExperimentConfig:
    task: str = "image"
    seeds: tuple = (1, 2, 3)
    out_dir: str = "runs/out"
    threads: int = 1

    # data (image task)
    data_classes: int = 4
    data_image_size: int = 32
    data_train_count: int = 512
    data_val_count: int = 2048
    data_noise_std: float = 1.0
    data_seed: int = 0

    # data (node_graph task)
    data_nodes: int = 300
    data_communities: int = 3
    data_p_in: float = 0.08
    data_p_out: float = 0.01
    data_labeled_per_class: int = 20
    data_feature_noise: float = 2.5
    data_feature_dim: int = 16

    # model
    model_stem_channels: int = 16
    model_groups: tuple = ((2, 16), (2, 32))
    model_regularize_groups: str = "last"
    model_regularize_skip: bool = True
    model_hidden: int = 16

    # regularizer
    reg_kind: str = "none"
    reg_alpha: float = 0.2
    reg_rho: float = 0.1
    reg_block_size: int = 3
    reg_adjacency: str = "eq6"
    reg_generator: str = "graph"
    reg_scheduler: str = "f1"
    reg_rescale_dropout: bool = False
    reg_normalize_similarity: bool = False
    reg_pgr_strategy: str = "random"
    reg_pgr_active_in_eval: bool = False

    # training
    train_epochs: int = 60
    train_batch_size: int = 32
    train_lr: float = 0.1
    train_momentum: float = 0.9
    train_weight_decay: float = 0.0005
    train_lr_decay_points: tuple = (0.6, 0.85)
    train_lr_decay_factor: float = 0.1
    train_augment_flip: bool = True

    def regularizer_config(self) -> RegularizerConfig:
        return RegularizerConfig(
            alpha=self.reg_alpha,
            rho_target=self.reg_rho,
            block_size=self.reg_block_size,
            adjacency_mode=self.reg_adjacency,
            generator_kind=self.reg_generator,
            scheduler_kind=self.reg_scheduler,
            rescale_dropout=self.reg_rescale_dropout,
            normalize_similarity=self.reg_normalize_similarity,
        )

    def regularized_group_indices(self) -> tuple:
        n = len(self.model_groups)
        if self.model_regularize_groups == "last":
            return (n - 1,)
        if self.model_regularize_groups == "all":
            return tuple(range(n))
        return tuple(int(v) for v in self.model_regularize_groups.split(","))

    def config_hash(self) -> str:
        """Hash of the experiment semantics (execution details excluded)."""
        skip = {"out_dir", "threads", "seeds"}
        text = "\n".join(
            f"{k} = {v}" for k, v in _key_value_pairs(self) if _KEY_BY_FIELD[k] not in skip
        )
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


# field name -> config key
_KEY_TABLE = [
    ("task", "task"),
    ("seeds", "seeds"),
    ("out_dir", "out_dir"),
    ("threads", "threads"),
    ("data_classes", "data.classes"),
    ("data_image_size", "data.image_size"),
    ("data_train_count", "data.train_count"),
    ("data_val_count", "data.val_count"),
    ("data_noise_std", "data.noise_std"),
    ("data_seed", "data.seed"),
    ("data_nodes", "data.nodes"),
    ("data_communities", "data.communities"),
    ("data_p_in", "data.p_in"),
    ("data_p_out", "data.p_out"),
    ("data_labeled_per_class", "data.labeled_per_class"),
    ("data_feature_noise", "data.feature_noise"),
    ("data_feature_dim", "data.feature_dim"),
    ("model_stem_channels", "model.stem_channels"),
    ("model_groups", "model.groups"),
    ("model_regularize_groups", "model.regularize_groups"),
    ("model_regularize_skip", "model.regularize_skip"),
    ("model_hidden", "model.hidden"),
    ("reg_kind", "reg.kind"),
    ("reg_alpha", "reg.alpha"),
    ("reg_rho", "reg.rho"),
    ("reg_block_size", "reg.block_size"),
    ("reg_adjacency", "reg.adjacency"),
    ("reg_generator", "reg.generator"),
    ("reg_scheduler", "reg.scheduler"),
    ("reg_rescale_dropout", "reg.rescale_dropout"),
    ("reg_normalize_similarity", "reg.normalize_similarity"),
    ("reg_pgr_strategy", "reg.pgr_strategy"),
    ("reg_pgr_active_in_eval", "reg.pgr_active_in_eval"),
    ("train_epochs", "train.epochs"),
    ("train_batch_size", "train.batch_size"),
    ("train_lr", "train.lr"),
    ("train_momentum", "train.momentum"),
    ("train_weight_decay", "train.weight_decay"),
    ("train_lr_decay_points", "train.lr_decay_points"),
    ("train_lr_decay_factor", "train.lr_decay_factor"),
    ("train_augment_flip", "train.augment_flip"),
]
_FIELD_BY_KEY = {k: f for f, k in _KEY_TABLE}
_KEY_BY_FIELD = {f: k for f, k in _KEY_TABLE}


def _format_value(name, value):
    if name == "seeds":
        return ",".join(str(s) for s in value)
    if name == "model_groups":
        return ",".join(f"{b}x{c}" for b, c in value)
    if name == "train_lr_decay_points":
        return ",".join(repr(p) for p in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(key, name, raw, kind):
    try:
        if name == "seeds":
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if name == "model_groups":
            groups = []
            for part in raw.split(","):
                b, c = part.strip().lower().split("x")
                groups.append((int(b), int(c)))
            return tuple(groups)
        if name == "train_lr_decay_points":
            return tuple(float(v) for v in raw.split(",") if v.strip())
        if kind is bool:
            low = raw.strip().lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw.strip()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc


def _key_value_pairs(cfg: ExperimentConfig):
    for name, key in _KEY_TABLE:
        yield name, _format_value(name, getattr(cfg, name))


def config_to_text(cfg: ExperimentConfig) -> str:
    return "\n".join(f"{key} = {_format_value(name, getattr(cfg, name))}"
                     for name, key in _KEY_TABLE) + "\n"


def _validate(cfg: ExperimentConfig) -> ExperimentConfig:
    def fail(key, msg):
        raise ConfigError(f"{key}: {msg}")

    if cfg.task not in TASKS:
        fail("task", f"must be one of {TASKS}, got {cfg.task!r}")
    if not cfg.seeds:
        fail("seeds", "at least one seed is required")
    if cfg.threads < 1:
        fail("threads", f"must be >= 1, got {cfg.threads}")
    if cfg.reg_kind not in REG_KINDS:
        fail("reg.kind", f"must be one of {REG_KINDS}, got {cfg.reg_kind!r}")
    if not (0.0 <= cfg.reg_alpha <= 1.0):
        fail("reg.alpha", f"must lie in [0, 1], got {cfg.reg_alpha}")
    if not (0.0 <= cfg.reg_rho < 1.0):
        fail("reg.rho", f"must lie in [0, 1), got {cfg.reg_rho}")
    if cfg.reg_block_size < 1 or cfg.reg_block_size % 2 == 0:
        fail("reg.block_size", f"must be an odd positive integer, got {cfg.reg_block_size}")
    if cfg.reg_adjacency not in ADJACENCY_MODES:
        fail("reg.adjacency", f"must be one of {ADJACENCY_MODES}, got {cfg.reg_adjacency!r}")
    if cfg.reg_generator not in GENERATOR_KINDS:
        fail("reg.generator", f"must be one of {GENERATOR_KINDS}, got {cfg.reg_generator!r}")
    if cfg.reg_scheduler not in SCHEDULER_KINDS:
        fail("reg.scheduler", f"must be one of {SCHEDULER_KINDS}, got {cfg.reg_scheduler!r}")
    if cfg.reg_pgr_strategy not in ("random", "top"):
        fail("reg.pgr_strategy", f"must be 'random' or 'top', got {cfg.reg_pgr_strategy!r}")
    if cfg.reg_kind == "pgr" and cfg.task != "image":
        fail("reg.kind", "pgr is only available for the image task")
    if cfg.train_epochs < 1:
        fail("train.epochs", f"must be >= 1, got {cfg.train_epochs}")
    if cfg.train_batch_size < 1:
        fail("train.batch_size", f"must be >= 1, got {cfg.train_batch_size}")
    if cfg.train_lr < 0:
        fail("train.lr", f"must be >= 0, got {cfg.train_lr}")
    if not (0.0 <= cfg.train_momentum < 1.0):
        fail("train.momentum", f"must lie in [0, 1), got {cfg.train_momentum}")
    if any(not (0.0 < p <= 1.0) for p in cfg.train_lr_decay_points):
        fail("train.lr_decay_points", f"points must lie in (0, 1], got {cfg.train_lr_decay_points}")

    if cfg.task == "image":
        if not (2 <= cfg.data_classes <= 4):
            fail("data.classes", f"must lie in [2, 4], got {cfg.data_classes}")
        if cfg.data_image_size < 8:
            fail("data.image_size", f"must be >= 8, got {cfg.data_image_size}")
        for key, value in (("data.train_count", cfg.data_train_count),
                           ("data.val_count", cfg.data_val_count)):
            if value < cfg.data_classes:
                fail(key, f"must cover every class, got {value}")
        if cfg.data_noise_std < 0:
            fail("data.noise_std", f"must be >= 0, got {cfg.data_noise_std}")
        for ch in [cfg.model_stem_channels] + [c for _, c in cfg.model_groups]:
            if ch % 4 != 0 or ch < 4:
                fail("model.groups", f"channel counts must be positive multiples of 4, got {ch}")
        try:
            groups = cfg.regularized_group_indices()
        except ValueError:
            fail("model.regularize_groups", f"expected 'last', 'all' or comma ints, got {cfg.model_regularize_groups!r}")
        for g in groups:
            if not (0 <= g < len(cfg.model_groups)):
                fail("model.regularize_groups", f"group {g} outside [0, {len(cfg.model_groups)})")
            if cfg.reg_kind in ("dropgraph", "dropblock"):
                size = cfg.data_image_size // (2**g)
                if size < cfg.reg_block_size:
                    fail("reg.block_size",
                         f"block {cfg.reg_block_size} exceeds group {g} map size {size}")
    else:
        if cfg.data_p_in <= cfg.data_p_out:
            fail("data.p_in", f"must exceed data.p_out, got {cfg.data_p_in} <= {cfg.data_p_out}")
        if cfg.model_hidden % 4 != 0:
            fail("model.hidden", f"must be divisible by 4, got {cfg.model_hidden}")
        if cfg.data_nodes < cfg.data_communities * (cfg.data_labeled_per_class + 2):
            fail("data.nodes", "not enough nodes for the labeled/val/test split")
        if cfg.reg_kind in ("dropgraph", "dropblock") and cfg.reg_block_size != 1:
            fail("reg.block_size", "node-graph regularizers use block_size = 1")
    return cfg


# Task-dependent defaults applied before explicit keys.
_TASK_DEFAULTS = {
    "node_graph": {
        "reg.block_size": "1",
        "train.epochs": "200",
        "train.lr": "0.5",
        "train.augment_flip": "false",
        "train.lr_decay_points": "0.6,0.85",
    },
}


def parse_config(text: str) -> ExperimentConfig:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = body.split("=", 1)
        pairs.append((key.strip(), raw.strip(), lineno))

    explicit = {key for key, _, _ in pairs}
    task = next((raw for key, raw, _ in pairs if key == "task"), "image")
    defaults = _TASK_DEFAULTS.get(task, {})
    merged = [(k, v, 0) for k, v in defaults.items() if k not in explicit] + pairs

    cfg = ExperimentConfig()
    kinds = {f.name: type(getattr(cfg, f.name)) for f in fields(ExperimentConfig)}
    values = {}
    for key, raw, lineno in merged:
        name = _FIELD_BY_KEY.get(key)
        if name is None:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[name] = _parse_value(key, name, raw, kinds[name])
    return _validate(replace(cfg, **values))


def parse_config_file(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
