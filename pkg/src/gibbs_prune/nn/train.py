"""Training with masks resampled from annealed Gibbs distributions."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..hamiltonians import (
    STRUCTURED_VARIANTS,
    VARIANTS,
    build_hamiltonian,
)
from ..masks import (
    check_fraction,
    conv_partition,
    converged_mask_structured,
    converged_mask_unstructured,
    mask_agreement,
    pruned_fraction,
)
from ..samplers import DEFAULT_MAX_BLOCK, DEFAULT_MCMC_ITERS, sample_mask
from ..schedules import BetaSchedule, LrSchedule, beta_at, lr_at
from .data import DatasetSplit, augment_batch
from .layers import softmax_cross_entropy
from .network import Network
from .optim import Adam

STRUCTURES = ("unstructured", "kernel", "filter")


@dataclass(frozen=True)
class PruneConfig:
    p: float = 0.9
    structure: str = "unstructured"
    hamiltonian: str = "linear-square"
    c: float = 0.01
    rebuild_every: int = 1
    max_block: int = DEFAULT_MAX_BLOCK
    mcmc_iters: int = DEFAULT_MCMC_ITERS

    def __post_init__(self):
        check_fraction(self.p)
        if self.structure not in STRUCTURES:
            raise ValueError(f"unknown structure {self.structure!r}")
        if self.hamiltonian not in VARIANTS:
            raise ValueError(f"unknown Hamiltonian {self.hamiltonian!r}")
        structured_h = self.hamiltonian in STRUCTURED_VARIANTS
        if structured_h != (self.structure != "unstructured"):
            raise ValueError(f"Hamiltonian {self.hamiltonian} does not fit "
                             f"{self.structure} pruning")
        if self.rebuild_every < 1:
            raise ValueError("rebuild_every must be at least 1")

    @property
    def structured(self) -> bool:
        return self.structure != "unstructured"


def converged_mask_for(layer, cfg: PruneConfig, partition=None) -> np.ndarray:
    w = layer.params["w"].ravel()
    if cfg.structured:
        part = partition or conv_partition(layer.params["w"].shape, cfg.structure)
        return converged_mask_structured(cfg.p, w, part)
    return converged_mask_unstructured(cfg.p, w)


class GibbsPruner:
    """Samples one mask per pruned layer per training step.

    Hamiltonian coefficients come from the layer's current weights and are
    rebuilt every ``rebuild_every`` steps.
    """

    def __init__(self, net: Network, configs: dict[str, PruneConfig], beta_schedule: BetaSchedule,
                 threads: int = 1):
        self.net = net
        self.configs = dict(configs)
        self.beta_schedule = beta_schedule
        self.threads = threads
        layers = net.maskable()
        self.layers = {name: layers[name] for name in self.configs}
        self.partitions = {
            name: conv_partition(layer.params["w"].shape, self.configs[name].structure)
            if self.configs[name].structured else None
            for name, layer in self.layers.items()
        }
        self._specs = {}

    def _sample_layer(self, name, beta, step, rng):
        cfg = self.configs[name]
        layer = self.layers[name]
        if cfg.p == 0:
            # nothing to prune: keep every weight rather than sampling noise masks
            return np.ones(layer.params["w"].size, dtype=np.int8)
        spec = self._specs.get(name)
        if spec is None or step % cfg.rebuild_every == 0:
            spec = build_hamiltonian(cfg.hamiltonian, cfg.p, layer.params["w"].ravel(),
                                     self.partitions[name], cfg.c)
            self._specs[name] = spec
        return sample_mask(spec, beta, rng.child("mask", name, step),
                           max_block=cfg.max_block, iters=cfg.mcmc_iters)

    def sample(self, epoch: int, step: int, rng) -> float:
        beta = beta_at(self.beta_schedule, epoch)
        names = list(self.layers)
        if self.threads > 1 and len(names) > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                masks = list(pool.map(lambda n: self._sample_layer(n, beta, step, rng), names))
        else:
            masks = [self._sample_layer(n, beta, step, rng) for n in names]
        self.net.set_masks(dict(zip(names, masks)))
        return beta

    def converged_masks(self) -> dict[str, np.ndarray]:
        return {name: converged_mask_for(layer, self.configs[name], self.partitions[name])
                for name, layer in self.layers.items()}


def evaluate(net: Network, split: DatasetSplit, mask_applied: bool = True, batch_size: int = 256) -> float:
    saved = net.masks
    if not mask_applied:
        net.clear_masks()
    try:
        correct = 0
        for start in range(0, len(split), batch_size):
            logits, _ = net.forward(split.images[start:start + batch_size], training=False)
            correct += int(np.sum(logits.argmax(axis=1) == split.labels[start:start + batch_size]))
    finally:
        net.set_masks(saved)
    return correct / max(len(split), 1)


def mean_loss(net: Network, split: DatasetSplit, batch_size: int = 256) -> float:
    total = 0.0
    for start in range(0, len(split), batch_size):
        logits, _ = net.forward(split.images[start:start + batch_size], training=False)
        loss, _ = softmax_cross_entropy(logits, split.labels[start:start + batch_size])
        total += loss * logits.shape[0]
    return total / max(len(split), 1)


def mask_columns(net: Network, configs: dict[str, PruneConfig]) -> dict[str, float]:
    """Per-layer pruned fraction of the active mask and its agreement with the
    converged mask of the current weights."""
    out = {}
    layers = net.maskable()
    for name, cfg in configs.items():
        layer = layers[name]
        x = layer.mask if layer.mask is not None else np.ones(layer.params["w"].shape, np.int8)
        out[f"pruned_fraction.{name}"] = pruned_fraction(x)
        out[f"cvg_agreement.{name}"] = mask_agreement(x, converged_mask_for(layer, cfg))
    return out


def run_epochs(net: Network, train: DatasetSplit, test: DatasetSplit, epochs, lr_schedule: LrSchedule,
               rng, *, optimizer=None, pruner: GibbsPruner | None = None, configs=None,
               batch_size=32, augment=False, l1_penalty=0.0, first_epoch=0, phase="train",
               clock=None):
    """Train for ``epochs`` epochs; returns one history row per epoch.

    With a pruner, a fresh mask set is drawn before every step; otherwise the
    network's current masks (possibly none) stay fixed.
    """
    optimizer = optimizer or Adam()
    configs = configs if configs is not None else (pruner.configs if pruner else {})
    clock = clock or _Clock()
    params = net.parameters()
    n = len(train)
    steps = max(1, -(-n // batch_size))
    rows = []
    for epoch in range(first_epoch, first_epoch + epochs):
        lr = lr_at(lr_schedule, epoch)
        order = rng.child("shuffle", epoch).generator().permutation(n)
        aug_gen = rng.child("augment", epoch).generator() if augment else None
        total, beta = 0.0, None
        for s in range(steps):
            idx = order[s * batch_size:(s + 1) * batch_size]
            x = train.images[idx]
            if aug_gen is not None:
                x = augment_batch(x, aug_gen)
            if pruner is not None:
                beta = pruner.sample(epoch, epoch * steps + s, rng)
            loss, grads, _ = net.loss_and_grads(x, train.labels[idx], training=True,
                                                l1_penalty=l1_penalty, l1_layers=list(configs))
            total += loss * idx.size
            optimizer.step(params, grads, lr)
        row = {
            "epoch": epoch,
            "phase": phase,
            "train_loss": total / n,
            "val_accuracy": evaluate(net, test),
            "beta": beta if beta is not None else 0.0,
            "lr": lr,
        }
        row.update(mask_columns(net, configs))
        row["wall_time_s"] = clock()
        rows.append(row)
    return rows


class _Clock:
    def __init__(self):
        self.start = time.perf_counter()

    def __call__(self):
        return time.perf_counter() - self.start


def finalize(net: Network, train: DatasetSplit, test: DatasetSplit, configs, epoch, masks,
             clock=None) -> dict:
    """Fix the final masks permanently and report the closing evaluation row."""
    net.set_masks(masks)
    row = {
        "epoch": epoch,
        "phase": "final",
        "train_loss": mean_loss(net, train),
        "val_accuracy": evaluate(net, test),
        "beta": 0.0,
        "lr": 0.0,
    }
    row.update(mask_columns(net, configs))
    row["wall_time_s"] = (clock or _Clock())()
    return row


def train_and_prune(net: Network, data, prune_cfgs: dict[str, PruneConfig], beta_sched: BetaSchedule,
                    lr_sched: LrSchedule, epochs: int, rng, *, batch_size=32, augment=False,
                    threads=1, clock=None):
    """Gibbs-prune while training, then fix each layer's mask to the converged
    mask of its final weights.

    Returns ``(net, final_masks, history)``.
    """
    train, test = data
    clock = clock or _Clock()
    pruner = GibbsPruner(net, prune_cfgs, beta_sched, threads=threads)
    history = run_epochs(net, train, test, epochs, lr_sched, rng, pruner=pruner,
                         batch_size=batch_size, augment=augment, clock=clock)
    final = pruner.converged_masks()
    history.append(finalize(net, train, test, prune_cfgs, epochs, final, clock))
    return net, final, history

