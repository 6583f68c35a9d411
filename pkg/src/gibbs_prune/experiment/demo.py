"""Annealing sweep on frozen weights: how sampled masks approach the converged mask."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..hamiltonians import build_hamiltonian
from ..masks import conv_partition, mask_agreement, pruned_fraction
from ..nn.checkpoint import restore_checkpoint
from ..nn.models import build_model
from ..nn.train import converged_mask_for
from ..rng import RandomSource
from ..samplers import sample_mask
from ..schedules import BetaSchedule, beta_at
from .config import ExperimentConfig
from .runner import load_data

DEMO_COLUMNS = ["epoch", "layer", "beta", "mask_agreement", "pruned_fraction"]


def sample_demo(cfg: ExperimentConfig, checkpoint=None, out_path=None) -> list[dict]:
    """For each epoch of the (unstretched) beta schedule, draw ``demo_draws``
    masks per pruned layer and report mean agreement with the converged mask.

    Draw ``d`` of a layer uses the same random substream at every beta, so the
    sweep compares temperatures on common random numbers.
    """
    train, _ = load_data(cfg)
    root = RandomSource(cfg.seed)
    net = build_model(cfg.model, train.images.shape[1:], train.classes,
                      root.child("init").generator(), skip_1x1=cfg.skip_1x1)
    if checkpoint:
        restore_checkpoint(net, checkpoint)
    configs = cfg.prune_configs(net.pruned)
    schedule = BetaSchedule(cfg.beta_start, cfg.effective_beta_end, cfg.anneal_epochs, cfg.beta_mode)
    layers = net.maskable()
    rows = []
    demo_rng = root.child("demo")
    for name, pc in configs.items():
        w = layers[name].params["w"]
        part = conv_partition(w.shape, pc.structure) if pc.structured else None
        spec = build_hamiltonian(pc.hamiltonian, pc.p, w.ravel(), part, pc.c)
        x_cvg = converged_mask_for(layers[name], pc, part)
        for epoch in range(cfg.anneal_epochs + 1):
            beta = beta_at(schedule, epoch)
            agree, frac = [], []
            for d in range(cfg.demo_draws):
                x = sample_mask(spec, beta, demo_rng.child(name, d), max_block=pc.max_block,
                                iters=pc.mcmc_iters)
                agree.append(mask_agreement(x, x_cvg))
                frac.append(pruned_fraction(x))
            rows.append({"epoch": epoch, "layer": name, "beta": beta,
                         "mask_agreement": float(np.mean(agree)),
                         "pruned_fraction": float(np.mean(frac))})
    if out_path is not None:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        with open(out_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(DEMO_COLUMNS)
            for r in rows:
                writer.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in DEMO_COLUMNS])
    return rows
