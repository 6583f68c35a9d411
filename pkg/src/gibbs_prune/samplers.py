"""Samplers for Gibbs distributions p(x) ~ exp(-beta * H(x)) over {-1, +1}^N.

All samplers accept ``size`` to draw a batch of independent masks at once,
returned with shape (size, N); without it a single mask of shape (N,) comes
back. Randomness comes from a :class:`RandomSource`, and each internal stage
draws from its own named substream.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import expit

from .hamiltonians import (
    BINARY_VARIANTS,
    STRUCTURED_LINEAR,
    STRUCTURED_QUADRATIC,
    UNSTRUCTURED_LINEAR,
    CouplingGraph,
    HamiltonianSpec,
)
from .masks import NeighbourhoodPartition, as_mask, neighbourhood_rms, squared_quantile
from .rng import RandomSource, as_generator

DEFAULT_MAX_BLOCK = 16
DEFAULT_MCMC_ITERS = 50


class BlockTooLargeError(ValueError):
    pass


def _shape(size, n):
    return (n,) if size is None else (int(size), n)


def _check_beta(beta):
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")


def prune_probability(a, beta) -> np.ndarray:
    """P[x_i = -1] for independent entries with energy a_i * x_i."""
    return expit(2.0 * beta * np.asarray(a, dtype=np.float64))


def sample_linear(a, beta: float, rng, size=None) -> np.ndarray:
    _check_beta(beta)
    a = np.asarray(a, dtype=np.float64).ravel()
    u = as_generator(rng).random(_shape(size, a.size))
    return np.where(u < prune_probability(a, beta), -1, 1).astype(np.int8)


def converged_probability(n: int, beta: float) -> float:
    """Probability of returning the converged mask outright, so that the mixture
    with uniform coins reproduces the binary Hamiltonian's distribution."""
    _check_beta(beta)
    log_num = math.log(-math.expm1(-beta))
    log_states = n * math.log(2.0) + math.log1p(-(2.0 ** -n))
    log_den = np.logaddexp(log_states - beta, 0.0)
    return float(math.exp(log_num - log_den))


def sample_binary(x_cvg, beta: float, rng, size=None) -> np.ndarray:
    x_cvg = as_mask(x_cvg)
    p_cvg = converged_probability(x_cvg.size, beta)
    gen = as_generator(rng)
    take = gen.random(() if size is None else (int(size), 1)) < p_cvg
    coins = np.where(gen.random(_shape(size, x_cvg.size)) < 0.5, -1, 1).astype(np.int8)
    return np.where(take, x_cvg, coins).astype(np.int8)


def _block_states(n: int) -> np.ndarray:
    bits = (np.arange(2 ** n)[:, None] >> np.arange(n)[None, :]) & 1
    return (1 - 2 * bits).astype(np.int8)


def sample_block_exact(spec: HamiltonianSpec, beta: float, rng, max_block: int = DEFAULT_MAX_BLOCK,
                       size=None) -> np.ndarray:
    """Exact sampling of each neighbourhood from its own Boltzmann distribution.

    The distribution factorizes over neighbourhoods, so every block is drawn
    independently by enumerating its 2^|block| states.
    """
    _check_beta(beta)
    part = spec.partition
    if part is None:
        raise ValueError("block sampling needs a partitioned Hamiltonian")
    if part.sizes.max() > max_block:
        raise BlockTooLargeError(
            f"neighbourhood of size {part.sizes.max()} exceeds max_block={max_block}; "
            "use sample_chromatic for large neighbourhoods")
    b = np.asarray(spec.linear_coeffs, dtype=np.float64)
    c = spec.coupling_c or 0.0
    base = rng
    out = np.empty(_shape(size, part.n), dtype=np.int8)
    for n in np.unique(part.sizes):
        n = int(n)
        group_ids = np.flatnonzero(part.sizes == n)
        idx = part.order[part.starts[group_ids][:, None] + np.arange(n)[None, :]]
        states = _block_states(n)
        s = states.sum(axis=1).astype(np.float64)
        pairs = (s * s - n) / 2.0
        e = b[idx] @ states.T.astype(np.float64) - c * pairs[None, :]
        logits = -beta * e
        logits -= logits.max(axis=1, keepdims=True)
        cdf = np.cumsum(np.exp(logits), axis=1)
        cdf /= cdf[:, -1:]
        n_groups = group_ids.size
        gen = base.child("block", n).generator() if isinstance(base, RandomSource) else as_generator(base)
        u = gen.random(_shape(size, n_groups))
        offsets = np.arange(n_groups, dtype=np.float64)
        flat = (cdf + offsets[:, None]).ravel()
        pick = np.searchsorted(flat, u + offsets, side="right") - (offsets * 2 ** n).astype(np.int64)
        pick = np.minimum(pick, 2 ** n - 1)
        out[..., idx] = states[pick]
    return out


def make_bipartite_colouring(part: NeighbourhoodPartition) -> np.ndarray:
    """Split every neighbourhood into two colour classes.

    Groups are split by input-channel parity when the partition records
    channels and that split leaves both classes non-empty; otherwise by the
    parity of each element's rank inside its group.
    """
    rank = np.empty(part.n, dtype=np.int64)
    rank[part.order] = np.arange(part.n) - np.repeat(part.starts, part.sizes)
    colour = (rank % 2).astype(np.int8)
    if part.channels is not None:
        by_channel = (part.channels % 2).astype(np.int8)
        ones = part.group_sums(by_channel.astype(np.int64))
        usable = (ones > 0) & (ones < part.sizes)
        use = part.broadcast(usable)
        colour = np.where(use, by_channel, colour).astype(np.int8)
    return colour


def truncate_couplings(graph: CouplingGraph, colouring) -> CouplingGraph:
    colouring = np.asarray(colouring, dtype=np.int8)
    if graph.colouring is not None and not np.array_equal(graph.colouring, colouring):
        raise ValueError("graph is already truncated with a different colouring")
    return CouplingGraph(graph.partition, graph.c, colouring)


def _sample_groups(coef, part, beta, gen, size):
    u = gen.random(_shape(size, part.m))
    xbar = np.where(u < prune_probability(coef, beta), -1, 1).astype(np.int8)
    return part.broadcast(xbar)


def init_chain(p: float, w, part: NeighbourhoodPartition, beta: float, rng, size=None) -> np.ndarray:
    """Neighbourhood-uniform starting mask drawn from the structure-respecting
    linear approximation of the quadratic Hamiltonian."""
    _check_beta(beta)
    rms = neighbourhood_rms(w, part)
    coef = part.sizes * (squared_quantile(p, rms) - rms * rms)
    return _sample_groups(coef, part, beta, as_generator(rng), size)


def sample_chromatic(spec: HamiltonianSpec, beta: float, rng, iters: int = DEFAULT_MCMC_ITERS,
                     size=None, colouring=None, init=None) -> np.ndarray:
    """Two-colour Gibbs sampling of the bipartite-truncated quadratic Hamiltonian.

    The chain starts from a structure-respecting draw (per-neighbourhood sum
    of the linear coefficients equals |N_k| (Q - rms_k^2)), then each sweep
    resamples colour 0 and then colour 1 given the other class.
    """
    _check_beta(beta)
    if spec.variant != STRUCTURED_QUADRATIC:
        raise ValueError("chromatic sampling targets the quadratic Hamiltonian")
    if iters < 1:
        raise ValueError("iters must be at least 1")
    part = spec.partition
    b = np.asarray(spec.linear_coeffs, dtype=np.float64)
    c = float(spec.coupling_c)
    colour = make_bipartite_colouring(part) if colouring is None else np.asarray(colouring, np.int8)
    if isinstance(rng, RandomSource):
        init_gen, gen = rng.child("init").generator(), rng.child("sweeps").generator()
    else:
        init_gen = gen = as_generator(rng)
    if init is None:
        x = _sample_groups(part.group_sums(b), part, beta, init_gen, size)
    else:
        x = np.array(np.broadcast_to(as_mask(init), _shape(size, part.n)), dtype=np.int8)
    classes = [np.flatnonzero(colour == k) for k in (0, 1)]
    is_zero = colour == 0
    for _ in range(iters):
        u = gen.random(x.shape)
        for k, members in enumerate(classes):
            if members.size == 0:
                continue
            # field from the opposite colour inside each neighbourhood
            other = np.where(is_zero, 0, x) if k == 0 else np.where(is_zero, x, 0)
            field = part.group_sums(other.astype(np.float64))[..., part.group_of[members]]
            g = b[members] - c * field
            x[..., members] = np.where(u[..., members] < expit(2.0 * beta * g), -1, 1)
    return x


def sample_mask(spec: HamiltonianSpec, beta: float, rng, max_block: int = DEFAULT_MAX_BLOCK,
                iters: int = DEFAULT_MCMC_ITERS, size=None) -> np.ndarray:
    if spec.variant in BINARY_VARIANTS:
        return sample_binary(spec.converged_mask, beta, rng, size=size)
    if spec.variant in UNSTRUCTURED_LINEAR or spec.variant == STRUCTURED_LINEAR:
        return sample_linear(spec.linear_coeffs, beta, rng, size=size)
    if spec.variant == STRUCTURED_QUADRATIC:
        if spec.partition.sizes.max() <= max_block:
            return sample_block_exact(spec, beta, rng, max_block=max_block, size=size)
        return sample_chromatic(spec, beta, rng, iters=iters, size=size)
    raise ValueError(f"no sampler for variant {spec.variant!r}")
