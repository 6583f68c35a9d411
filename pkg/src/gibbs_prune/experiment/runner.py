"""Experiment execution: Gibbs pruning runs and the comparison baselines.

Each run writes three artifacts into ``<output_dir>/<experiment_id>-seed<seed>/``:
``report.csv`` (one row per epoch plus a final row), ``masks.txt`` and
``checkpoint.bin``.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..masks import conv_partition, converged_mask_structured, converged_mask_unstructured
from ..nn.checkpoint import save_checkpoint
from ..nn.data import cifar10_from_root, synthetic_dataset
from ..nn.models import build_model
from ..nn.optim import Adam
from ..nn.train import converged_mask_for, finalize, run_epochs, train_and_prune
from ..rng import RandomSource
from ..schedules import BetaSchedule, LrSchedule, stretched
from .config import ExperimentConfig
from .maskio import export_mask, import_mask

log = logging.getLogger(__name__)

BASE_COLUMNS = ["experiment_id", "seed", "epoch", "phase", "train_loss", "val_accuracy", "beta", "lr"]


@dataclass
class RunResult:
    rows: list
    masks: dict
    net: object
    out_dir: Path | None = None


class _Clock:
    def __init__(self, enabled=True):
        self.enabled = enabled
        self.start = time.perf_counter()

    def __call__(self):
        return time.perf_counter() - self.start if self.enabled else 0.0


def load_data(cfg: ExperimentConfig):
    if cfg.dataset == "synthetic":
        return synthetic_dataset(cfg.seed, cfg.per_class, noise=cfg.noise)
    subset = int(cfg.dataset.split(":", 1)[1]) if ":" in cfg.dataset else None
    return cifar10_from_root(subset=subset)


class _Setup:
    def __init__(self, cfg: ExperimentConfig, init_stream="init"):
        self.cfg = cfg
        self.train, self.test = load_data(cfg)
        self.root = RandomSource(cfg.seed)
        self.net = build_model(cfg.model, self.train.images.shape[1:], self.train.classes,
                               self.root.child(init_stream).generator(), skip_1x1=cfg.skip_1x1)
        self.configs = cfg.prune_configs(self.net.pruned)
        self.beta = stretched(BetaSchedule(cfg.beta_start, cfg.effective_beta_end, cfg.anneal_epochs,
                                           cfg.beta_mode), cfg.stretch)
        self.lr = stretched(LrSchedule(cfg.lr, cfg.lr_drop_epoch, cfg.lr_drop_interval,
                                       cfg.lr_drop_factor), cfg.stretch)
        self.clock = _Clock(cfg.record_wall_time)
        self.train_rng = self.root.child("train")

    def epochs(self, **kw):
        return run_epochs(self.net, self.train, self.test, kw.pop("epochs", self.cfg.total_epochs),
                          kw.pop("lr_schedule", self.lr), self.train_rng, configs=self.configs,
                          batch_size=self.cfg.batch_size, augment=self.cfg.uses_augmentation(),
                          clock=self.clock, **kw)

    def finish(self, rows, masks, epoch):
        rows.append(finalize(self.net, self.train, self.test, self.configs, epoch, masks, self.clock))
        return RunResult(rows, masks, self.net)


def run_gibbs(cfg: ExperimentConfig) -> RunResult:
    s = _Setup(cfg)
    net, masks, rows = train_and_prune(
        s.net, (s.train, s.test), s.configs, s.beta, s.lr, cfg.total_epochs, s.train_rng,
        batch_size=cfg.batch_size, augment=cfg.uses_augmentation(), threads=cfg.threads,
        clock=s.clock)
    return RunResult(rows, masks, net)


def random_masks(net, configs, rng: RandomSource) -> dict:
    """Uniformly random masks at each layer's configured sparsity; structured
    layers drop whole random neighbourhoods."""
    layers = net.maskable()
    out = {}
    for name, cfg in configs.items():
        w = layers[name].params["w"]
        gen = rng.child(name).generator()
        if cfg.structured:
            part = conv_partition(w.shape, cfg.structure)
            # random per-neighbourhood magnitudes; the lowest ones are pruned
            fake = part.broadcast(gen.random(part.m))
            out[name] = converged_mask_structured(cfg.p, fake, part)
        else:
            out[name] = converged_mask_unstructured(cfg.p, gen.random(w.size))
    return out


def baseline_random_mask(cfg: ExperimentConfig) -> RunResult:
    s = _Setup(cfg)
    masks = random_masks(s.net, s.configs, s.root.child("random-mask"))
    s.net.set_masks(masks)
    rows = s.epochs()
    return s.finish(rows, masks, cfg.total_epochs)


def baseline_reinit_retrain(cfg: ExperimentConfig, mask_file=None) -> RunResult:
    mask_file = mask_file or cfg.mask_file
    if not mask_file:
        raise ValueError("reinit-retrain needs a mask file")
    masks = import_mask(mask_file)
    s = _Setup(cfg, init_stream="reinit")
    layers = s.net.maskable()
    for name, x in masks.items():
        if name not in layers:
            raise ValueError(f"mask file names layer {name!r}, which the model does not have")
        if x.size != layers[name].params["w"].size:
            raise ValueError(f"mask for {name} has {x.size} entries; layer has "
                             f"{layers[name].params['w'].size} weights")
    s.net.set_masks(masks)
    rows = s.epochs()
    return s.finish(rows, masks, cfg.total_epochs)


def _magnitude_then_finetune(s: _Setup, l1_penalty: float) -> RunResult:
    cfg = s.cfg
    opt = Adam()
    rows = s.epochs(optimizer=opt, l1_penalty=l1_penalty)
    masks = {name: converged_mask_for(s.net.maskable()[name], c) for name, c in s.configs.items()}
    s.net.set_masks(masks)
    if cfg.finetune_epochs:
        flat = LrSchedule(cfg.finetune_lr, drop_epoch=10 ** 9)
        rows += s.epochs(optimizer=opt, epochs=cfg.finetune_epochs, lr_schedule=flat,
                         first_epoch=cfg.total_epochs, phase="finetune")
    return s.finish(rows, masks, cfg.total_epochs + cfg.finetune_epochs)


def baseline_oneshot_magnitude(cfg: ExperimentConfig) -> RunResult:
    return _magnitude_then_finetune(_Setup(cfg), 0.0)


def baseline_l1_reg(cfg: ExperimentConfig) -> RunResult:
    return _magnitude_then_finetune(_Setup(cfg), cfg.l1_penalty)


def execute(cfg: ExperimentConfig) -> RunResult:
    if cfg.baseline == "none":
        return run_gibbs(cfg)
    if cfg.baseline == "random-mask":
        return baseline_random_mask(cfg)
    if cfg.baseline == "reinit-retrain":
        return baseline_reinit_retrain(cfg)
    if cfg.baseline == "oneshot-magnitude":
        return baseline_oneshot_magnitude(cfg)
    if cfg.baseline == "l1-reg":
        return baseline_l1_reg(cfg)
    raise ValueError(f"unknown baseline {cfg.baseline!r}")


def report_columns(layer_names) -> list[str]:
    return (BASE_COLUMNS + [f"pruned_fraction.{n}" for n in layer_names]
            + [f"cvg_agreement.{n}" for n in layer_names] + ["wall_time_s"])


def _cell(v):
    if isinstance(v, float):
        if not np.isfinite(v):
            raise ValueError("report values must be finite")
        return repr(v)
    return str(v)


def write_report(rows, cfg: ExperimentConfig, layer_names, path):
    columns = report_columns(layer_names)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            full = dict(row, experiment_id=cfg.experiment_id, seed=cfg.seed)
            writer.writerow([_cell(full[c]) for c in columns])


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> RunResult:
    """Run the configured experiment and write its report, masks and checkpoint."""
    result = execute(cfg)
    out = Path(out_dir or cfg.output_dir) / cfg.run_name
    out.mkdir(parents=True, exist_ok=True)
    layer_names = list(cfg.prune_configs(result.net.pruned))
    write_report(result.rows, cfg, layer_names, out / "report.csv")
    export_mask(result.masks, out / "masks.txt")
    save_checkpoint(result.net, out / "checkpoint.bin", result.masks)
    result.out_dir = out
    final = result.rows[-1]
    log.info("%s: final accuracy %.4f", cfg.run_name, final["val_accuracy"])
    return result
