"""Experiment configuration and its line-oriented text format.

Grammar (one construct per line, surrounding whitespace ignored)::

    # comment                  full-line comment
    [section]                  one of: experiment, data, ood, model, epig
    key = value                value: int | float | true/false | text | comma list
    (blank)

Values may be wrapped in double quotes to keep commas or ``#``.  Keys must
belong to their section and appear at most once; every key has a default,
so an empty file is a valid config.  ``serialize`` writes every key in a
fixed order, and the config digest is the SHA-256 of that text.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, fields
from typing import get_type_hints

from .models import TrainConfig

METHODS = (
    "uniform",
    "bald_topk",
    "batchbald",
    "softmax_bald",
    "epig_bald_topk",
    "epig_bald_greedy",
    "epig_entropy",
)


class ConfigError(ValueError):
    def __init__(self, message: str, line: int = 0, column: int = 0, field_name: str = ""):
        self.line, self.column, self.field_name = line, column, field_name
        where = f"line {line}, column {column}: " if line else ""
        super().__init__(where + message)


@dataclass(frozen=True)
class ExperimentSection:
    methods: tuple = ("bald_topk", "epig_bald_topk")
    acquisition_size: int = 5
    rounds: int = 40
    initial_train: int = 10
    eval_size: int = 200
    test_size: int = 2000
    pool_size: int = 2000
    trials: int = 5
    seed: int = 0
    ood_mode: str = "exposure"
    rejection_consumes_budget: bool = True


@dataclass(frozen=True)
class DataSection:
    kind: str = "synthetic"
    n_classes: int = 4
    clusters: int = 8
    radius: float = 3.0
    cluster_std: float = 0.7
    junk_low: tuple = (6.0, -6.0)
    junk_high: tuple = (14.0, 6.0)
    idx_images: str = ""
    idx_labels: str = ""


@dataclass(frozen=True)
class OodSection:
    contamination: float = 0.5
    source: str = "junk"
    idx_images: str = ""
    idx_labels: str = ""


@dataclass(frozen=True)
class ModelSection:
    hidden: tuple = (64, 64)
    members: int = 8
    lr: float = 0.05
    momentum: float = 0.9
    epochs: int = 200
    batch_size: int = 64
    weight_decay: float = 1e-4


@dataclass(frozen=True)
class EpigSection:
    conditioning: str = "distilled"
    pseudo_sets: int = 4
    eval_weight: float = 1.0
    warm_start: bool = True
    distill_epochs: int = 100
    matched_reference: bool = True
    softmax_temperature: float = 8.0
    mc_configs: int = 10000


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    data: DataSection = field(default_factory=DataSection)
    ood: OodSection = field(default_factory=OodSection)
    model: ModelSection = field(default_factory=ModelSection)
    epig: EpigSection = field(default_factory=EpigSection)

    def condition_config(self):
        from .epig import ConditionConfig

        g = self.epig
        return ConditionConfig(
            kind=g.conditioning, pseudo_sets=g.pseudo_sets, eval_weight=g.eval_weight,
            warm_start=g.warm_start, epochs=g.distill_epochs, matched_reference=g.matched_reference,
        )

    def train_config(self) -> TrainConfig:
        m = self.model
        return TrainConfig(
            hidden=tuple(m.hidden), members=m.members, lr=m.lr, momentum=m.momentum,
            epochs=m.epochs, batch_size=m.batch_size, weight_decay=m.weight_decay,
            n_classes=self.data.n_classes,
        )

    @property
    def digest(self) -> str:
        return config_digest(self)

    def with_updates(self, **sections) -> "ExperimentConfig":
        """``cfg.with_updates(experiment={"trials": 2})`` style override, validated."""
        kwargs = {}
        for name, updates in sections.items():
            kwargs[name] = dataclasses.replace(getattr(self, name), **updates)
        cfg = dataclasses.replace(self, **kwargs)
        validate(cfg)
        return cfg


_SECTION_TYPES = {
    "experiment": ExperimentSection,
    "data": DataSection,
    "ood": OodSection,
    "model": ModelSection,
    "epig": EpigSection,
}


def _split_items(text: str, line: int, col: int) -> list:
    items, cur, quoted = [], [], False
    for ch in text:
        if ch == '"':
            quoted = not quoted
        elif ch == "," and not quoted:
            items.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    if quoted:
        raise ConfigError("unterminated quote", line, col)
    items.append("".join(cur).strip())
    return items


def _coerce(kind, default, raw: str, name: str, line: int, col: int):
    def scalar(t, text):
        try:
            if t is bool:
                if text.lower() in ("true", "yes", "1"):
                    return True
                if text.lower() in ("false", "no", "0"):
                    return False
                raise ValueError(text)
            if t is int:
                return int(text)
            if t is float:
                return float(text)
            return text
        except ValueError:
            raise ConfigError(f"{name}: cannot read {text!r} as {t.__name__}", line, col, name) from None

    if kind is tuple:
        items = [s for s in _split_items(raw, line, col) if s != ""]
        elem = type(default[0]) if default else str
        return tuple(scalar(elem, s) for s in items)
    text = raw.strip()
    if len(text) >= 2 and text[0] == text[-1] == '"':
        text = text[1:-1]
    return scalar(kind, text)


def parse_config_text(text: str) -> ExperimentConfig:
    values: dict = {name: {} for name in _SECTION_TYPES}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        col = len(line) - len(line.lstrip()) + 1
        if not stripped or stripped.startswith("#"):
            continue
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigError("section header missing ']'", lineno, col + len(stripped))
            section = stripped[1:-1].strip()
            if section not in _SECTION_TYPES:
                raise ConfigError(f"unknown section [{section}]", lineno, col + 1, section)
            continue
        if "=" not in stripped:
            raise ConfigError("expected 'key = value'", lineno, col)
        if section is None:
            raise ConfigError("key outside of any [section]", lineno, col)
        key, raw = stripped.split("=", 1)
        key = key.strip()
        after = line[line.index("=") + 1 :]
        value_col = line.index("=") + 2 + len(after) - len(after.lstrip())
        cls = _SECTION_TYPES[section]
        defaults = {f.name: f.default for f in fields(cls)}
        if key not in defaults:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno, col, f"{section}.{key}")
        if key in values[section]:
            raise ConfigError(f"duplicate key {key!r} in [{section}]", lineno, col, f"{section}.{key}")
        kind = get_type_hints(cls)[key]
        values[section][key] = _coerce(kind, defaults[key], raw, f"{section}.{key}", lineno, value_col)
    cfg = ExperimentConfig(**{name: cls(**values[name]) for name, cls in _SECTION_TYPES.items()})
    validate(cfg)
    return cfg


def parse_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as f:
        return parse_config_text(f.read())


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str) and (value == "" or any(c in value for c in ',#"') or value != value.strip()):
        return f'"{value}"'
    return str(value)


def serialize(cfg: ExperimentConfig) -> str:
    lines = []
    for name in _SECTION_TYPES:
        section = getattr(cfg, name)
        lines.append(f"[{name}]")
        for f in fields(section):
            lines.append(f"{f.name} = {_fmt(getattr(section, f.name))}")
        lines.append("")
    return "\n".join(lines)


def config_digest(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(serialize(cfg).encode()).hexdigest()


def validate(cfg: ExperimentConfig) -> None:
    e, d, o, m, g = cfg.experiment, cfg.data, cfg.ood, cfg.model, cfg.epig

    def need(ok, name, msg):
        if not ok:
            raise ConfigError(f"{name}: {msg}", field_name=name)

    need(len(e.methods) >= 1, "experiment.methods", "at least one method required")
    for meth in e.methods:
        need(meth in METHODS, "experiment.methods", f"unknown method {meth!r} (choose from {', '.join(METHODS)})")
    need(len(set(e.methods)) == len(e.methods), "experiment.methods", "duplicate method")
    need(e.acquisition_size >= 1, "experiment.acquisition_size", "must be >= 1")
    need(e.rounds >= 1, "experiment.rounds", "must be >= 1")
    need(e.trials >= 1, "experiment.trials", "must be >= 1")
    need(e.initial_train >= 1, "experiment.initial_train", "must be >= 1")
    need(e.eval_size >= 0, "experiment.eval_size", "must be >= 0")
    need(e.test_size >= 1, "experiment.test_size", "must be >= 1")
    need(e.pool_size >= 1, "experiment.pool_size", "must be >= 1")
    need(e.ood_mode in ("rejection", "exposure"), "experiment.ood_mode", "must be 'rejection' or 'exposure'")
    need(d.kind in ("synthetic", "idx"), "data.kind", "must be 'synthetic' or 'idx'")
    need(d.n_classes >= 2, "data.n_classes", "must be >= 2")
    need(d.clusters >= 1, "data.clusters", "must be >= 1")
    need(d.cluster_std >= 0, "data.cluster_std", "must be >= 0")
    need(len(d.junk_low) == len(d.junk_high) == 2, "data.junk_low", "junk bounds must be 2D")
    need(all(a < b for a, b in zip(d.junk_low, d.junk_high)), "data.junk_high", "must exceed junk_low")
    if d.kind == "idx":
        need(bool(d.idx_images and d.idx_labels), "data.idx_images", "idx data needs image and label paths")
    need(0.0 <= o.contamination <= 1.0, "ood.contamination", "must be in [0, 1]")
    need(o.source in ("junk", "idx"), "ood.source", "must be 'junk' or 'idx'")
    if o.source == "idx" and o.contamination > 0:
        need(bool(o.idx_images and o.idx_labels), "ood.idx_images", "idx OoD source needs image and label paths")
    need(len(m.hidden) >= 1 and all(h >= 1 for h in m.hidden), "model.hidden", "layer sizes must be >= 1")
    need(m.members >= 2, "model.members", "need at least 2 ensemble members")
    need(m.lr > 0, "model.lr", "must be > 0")
    need(0 <= m.momentum < 1, "model.momentum", "must be in [0, 1)")
    need(m.epochs >= 1, "model.epochs", "must be >= 1")
    need(m.batch_size >= 1, "model.batch_size", "must be >= 1")
    need(m.weight_decay >= 0, "model.weight_decay", "must be >= 0")
    need(g.conditioning in ("distilled", "pseudo_ensemble"), "epig.conditioning", "must be 'distilled' or 'pseudo_ensemble'")
    need(g.pseudo_sets >= 1, "epig.pseudo_sets", "must be >= 1")
    need(g.eval_weight >= 0, "epig.eval_weight", "must be >= 0")
    need(g.distill_epochs >= 1, "epig.distill_epochs", "must be >= 1")
    need(g.softmax_temperature > 0, "epig.softmax_temperature", "must be > 0")
    need(g.mc_configs >= 1, "epig.mc_configs", "must be >= 1")
