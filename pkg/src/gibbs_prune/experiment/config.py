"""Flat ``key=value`` experiment configuration.

Lines are ``key = value``; ``#`` starts a comment. Unknown keys are rejected.
Per-layer overrides use ``layer.<name>.<key>`` with keys ``p``, ``structure``,
``hamiltonian``, ``c``, ``rebuild_every`` and ``prune`` (true/false).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from ..hamiltonians import STRUCTURED_QUADRATIC, LINEAR_SQUARE, VARIANTS
from ..nn.models import MODELS
from ..nn.train import STRUCTURES, PruneConfig

BASELINES = ("none", "random-mask", "reinit-retrain", "oneshot-magnitude", "l1-reg")
LAYER_KEYS = {"p": float, "structure": str, "hamiltonian": str, "c": float,
              "rebuild_every": int, "prune": bool}
STRETCHED_BETA_END = 1e6


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    experiment_id: str = "gibbs"
    model: str = "toy-cnn"
    dataset: str = "synthetic"
    per_class: int = 250
    noise: float = 0.3
    seed: int = 0
    epochs: int = 200
    stretch: int = 1
    batch_size: int = 32
    augment: str = "auto"
    p: float = 0.9
    structure: str = "unstructured"
    hamiltonian: str = "auto"
    c: float = 0.01
    rebuild_every: int = 1
    max_block: int = 16
    mcmc_iters: int = 50
    beta_start: float = 0.7
    beta_end: float | None = None
    anneal_epochs: int = 128
    beta_mode: str = "log"
    lr: float = 1e-3
    lr_drop_epoch: int = 80
    lr_drop_interval: int = 40
    lr_drop_factor: float = 10.0
    baseline: str = "none"
    mask_file: str = ""
    finetune_epochs: int = 0
    finetune_lr: float = 1e-5
    l1_penalty: float = 1e-3
    skip_1x1: bool = False
    threads: int = 1
    record_wall_time: bool = True
    demo_draws: int = 20
    output_dir: str = "runs"
    layers: dict = field(default_factory=dict)

    def __post_init__(self):
        _check(0.0 <= self.p <= 1.0, f"p must lie in [0, 1], got {self.p}")
        _check(self.stretch >= 1, "stretch must be at least 1")
        _check(self.epochs >= 0, "epochs must be non-negative")
        _check(self.model in MODELS, f"model must be one of {MODELS}")
        _check(self.structure in STRUCTURES, f"structure must be one of {STRUCTURES}")
        _check(self.hamiltonian == "auto" or self.hamiltonian in VARIANTS,
               f"hamiltonian must be 'auto' or one of {VARIANTS}")
        _check(self.baseline in BASELINES, f"baseline must be one of {BASELINES}")
        _check(self.augment in ("auto", "true", "false"), "augment must be auto, true or false")
        _check(self.beta_mode in ("log", "linear"), "beta_mode must be log or linear")
        _check(self.c > 0, "c must be positive")
        _check(self.batch_size >= 1 and self.threads >= 1 and self.per_class >= 1,
               "batch_size, threads and per_class must be positive")
        _check(self.finetune_epochs >= 0, "finetune_epochs must be non-negative")
        _check(self.dataset == "synthetic" or self.dataset == "cifar10"
               or (self.dataset.startswith("cifar10:") and self.dataset[8:].isdigit()),
               "dataset must be synthetic, cifar10 or cifar10:<subset-size>")
        for name, over in self.layers.items():
            _check(0.0 <= over.get("p", 0.0) <= 1.0, f"layer {name}: p must lie in [0, 1]")

    @property
    def total_epochs(self) -> int:
        return self.epochs * self.stretch

    @property
    def effective_beta_end(self) -> float:
        if self.beta_end is not None:
            return self.beta_end
        return STRETCHED_BETA_END if self.stretch > 1 else 1e4

    @property
    def run_name(self) -> str:
        return f"{self.experiment_id}-seed{self.seed}"

    def uses_augmentation(self) -> bool:
        if self.augment == "auto":
            return self.dataset.startswith("cifar10")
        return self.augment == "true"

    def prune_configs(self, default_layers) -> dict[str, PruneConfig]:
        """Resolve per-layer pruning settings over the model's default policy."""
        names = [n for n in default_layers if self.layers.get(n, {}).get("prune", True)]
        names += [n for n, o in self.layers.items() if o.get("prune") and n not in names]
        out = {}
        for name in names:
            over = self.layers.get(name, {})
            structure = over.get("structure", self.structure)
            ham = over.get("hamiltonian", self.hamiltonian)
            if ham == "auto":
                ham = LINEAR_SQUARE if structure == "unstructured" else STRUCTURED_QUADRATIC
            try:
                out[name] = PruneConfig(
                    p=over.get("p", self.p), structure=structure, hamiltonian=ham,
                    c=over.get("c", self.c), rebuild_every=over.get("rebuild_every", self.rebuild_every),
                    max_block=self.max_block, mcmc_iters=self.mcmc_iters)
            except ValueError as exc:
                raise ConfigError(f"layer {name}: {exc}") from None
        return out

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)


def _check(ok, msg):
    if not ok:
        raise ConfigError(msg)


def _convert(key, raw: str, typ):
    try:
        if typ is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {typ.__name__}") from None


_FIELD_TYPES = {
    "beta_end": float,
}


def _field_type(f):
    if f.name in _FIELD_TYPES:
        return _FIELD_TYPES[f.name]
    return {"int": int, "float": float, "bool": bool, "str": str}[f.type]


def parse_config(text: str, **overrides) -> ExperimentConfig:
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig) if f.name != "layers"}
    values: dict = {}
    layers: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if not key or not raw:
            raise ConfigError(f"line {lineno}: empty key or value")
        if key.startswith("layer."):
            parts = key.split(".")
            if len(parts) != 3 or parts[2] not in LAYER_KEYS:
                raise ConfigError(f"line {lineno}: unknown layer key {key!r}")
            layers.setdefault(parts[1], {})[parts[2]] = _convert(key, raw, LAYER_KEYS[parts[2]])
            continue
        if key not in fields:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw, _field_type(fields[key]))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(layers=layers, **values)


def load_config(path, **overrides) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), **overrides)


def format_config(cfg: ExperimentConfig) -> str:
    """Render a config back to ``key=value`` text (round-trips through parse_config)."""
    lines = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name == "layers":
            for name, over in value.items():
                lines += [f"layer.{name}.{k}={_fmt(v)}" for k, v in over.items()]
        elif value is not None and value != "":
            lines.append(f"{f.name}={_fmt(value)}")
    return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)
