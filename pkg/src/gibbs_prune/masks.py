"""Weight-magnitude statistics, neighbourhood partitions and converged masks.

Masks are int8 arrays over {-1, +1}; -1 marks a pruned weight. Weights are
plain float64 vectors, flattened in row-major order of the layer's tensor.
"""

from __future__ import annotations

import logging
import math

import numpy as np

log = logging.getLogger(__name__)

_ACHIEVABLE_TOL = 1e-9
_warned: set = set()


def _warn_once(key, msg, *args):
    if key not in _warned:
        _warned.add(key)
        log.warning(msg, *args)


def as_weights(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64).ravel()
    if w.size < 1:
        raise ValueError("weight vector must be non-empty")
    if not np.all(np.isfinite(w)):
        raise ValueError("weight vector contains non-finite values")
    return w


def as_mask(x) -> np.ndarray:
    x = np.asarray(x).ravel()
    if not np.all((x == 1) | (x == -1)):
        raise ValueError("mask entries must be -1 or +1")
    return x.astype(np.int8)


def check_fraction(p: float) -> float:
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"pruning fraction must lie in [0, 1], got {p}")
    return p


class NeighbourhoodPartition:
    """Disjoint groups of weight indices that must share a mask value.

    ``channels`` optionally records the input channel of every element; the
    chromatic sampler uses it to split groups into two colour classes.
    """

    def __init__(self, groups, labels=None, channels=None, n=None):
        groups = [np.asarray(g, dtype=np.int64).ravel() for g in groups]
        if not groups or any(g.size == 0 for g in groups):
            raise ValueError("partition groups must be non-empty")
        total = sum(g.size for g in groups)
        n = total if n is None else int(n)
        group_of = np.full(n, -1, dtype=np.int64)
        for k, g in enumerate(groups):
            if g.min() < 0 or g.max() >= n:
                raise ValueError("partition index out of range")
            if np.any(group_of[g] != -1) or np.unique(g).size != g.size:
                raise ValueError("partition groups overlap")
            group_of[g] = k
        if np.any(group_of < 0):
            raise ValueError("partition does not cover every index")
        self._init(group_of, labels, channels)

    @classmethod
    def from_group_ids(cls, group_of, labels=None, channels=None):
        group_of = np.asarray(group_of, dtype=np.int64).ravel()
        ids = np.unique(group_of)
        if ids[0] != 0 or ids[-1] != ids.size - 1:
            raise ValueError("group ids must be 0..M-1 with every id used")
        self = cls.__new__(cls)
        self._init(group_of, labels, channels)
        return self

    def _init(self, group_of, labels, channels):
        self.group_of = group_of
        self.group_of.flags.writeable = False
        self.n = group_of.size
        self.sizes = np.bincount(group_of)
        self.m = self.sizes.size
        self.order = np.argsort(group_of, kind="stable")
        self.starts = np.concatenate(([0], np.cumsum(self.sizes)[:-1]))
        self.labels = None if labels is None else list(labels)
        if channels is not None:
            channels = np.asarray(channels, dtype=np.int64).ravel()
            if channels.size != self.n:
                raise ValueError("channels must have one entry per index")
        self.channels = channels

    @property
    def groups(self) -> list[np.ndarray]:
        return np.split(self.order, self.starts[1:])

    def group_sums(self, v) -> np.ndarray:
        """Sum ``v`` over each group along the last axis: (..., N) -> (..., M)."""
        v = np.asarray(v)
        return np.add.reduceat(v[..., self.order], self.starts, axis=-1)

    def broadcast(self, per_group) -> np.ndarray:
        """Expand per-group values (..., M) to per-element values (..., N)."""
        return np.asarray(per_group)[..., self.group_of]

    def __len__(self):
        return self.m

    def __repr__(self):
        return f"NeighbourhoodPartition(n={self.n}, m={self.m})"


def conv_partition(shape, structure: str) -> NeighbourhoodPartition:
    """Neighbourhoods for a conv weight of shape (K, K, C_in, C_out) or a dense
    weight of shape (in, out).

    ``kernel`` groups the K*K taps of each (input, output) channel pair;
    ``filter`` groups everything feeding one output channel.
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) == 4:
        kh, kw, cin, cout = shape
        ci, co = np.meshgrid(np.arange(cin), np.arange(cout), indexing="ij")
        ci = np.broadcast_to(ci, (kh, kw, cin, cout)).ravel()
        co = np.broadcast_to(co, (kh, kw, cin, cout)).ravel()
        if structure == "kernel":
            return NeighbourhoodPartition.from_group_ids(ci * cout + co, channels=ci)
        if structure == "filter":
            return NeighbourhoodPartition.from_group_ids(co, channels=ci)
    elif len(shape) == 2:
        fan_in, fan_out = shape
        ci, co = np.meshgrid(np.arange(fan_in), np.arange(fan_out), indexing="ij")
        if structure == "filter":
            return NeighbourhoodPartition.from_group_ids(co.ravel(), channels=ci.ravel())
        if structure == "kernel":
            raise ValueError("kernel-wise structure needs a convolutional weight")
    raise ValueError(f"unsupported structure {structure!r} for weight shape {shape}")


def _nearest_count(p: float, n: int) -> int:
    exact = p * n
    k = int(math.floor(exact + 0.5))
    if abs(exact - k) > _ACHIEVABLE_TOL:
        _warn_once((p, n), "pruning fraction %.6g is not achievable with %d weights; "
                   "using %d/%d", p, n, k, n)
    return k


def achievable_fraction(p: float, n: int) -> float:
    """Nearest fraction k/n to p, the one the converged mask actually prunes."""
    return _nearest_count(check_fraction(p), n) / n


def squared_quantile(p: float, w) -> float:
    """Empirical p-th quantile of the squared magnitudes, interpolated linearly
    between the two nearest order statistics."""
    p = check_fraction(p)
    v = as_weights(w) ** 2
    n = v.size
    t = p * (n - 1)
    if abs(t - round(t)) < 1e-9:
        t = float(round(t))  # achievable fraction that lost exactness in p*(n-1)
    lo = int(math.floor(t))
    hi = min(lo + 1, n - 1)
    frac = t - lo
    if frac == 0.0 or lo == hi:
        return float(np.partition(v, lo)[lo])
    part = np.partition(v, (lo, hi))
    return float(part[lo] + frac * (part[hi] - part[lo]))


def neighbourhood_rms(w, part: NeighbourhoodPartition) -> np.ndarray:
    w = as_weights(w)
    if w.size != part.n:
        raise ValueError("partition size does not match weight count")
    return np.sqrt(part.group_sums(w * w) / part.sizes)


def converged_mask_unstructured(p: float, w) -> np.ndarray:
    p = check_fraction(p)
    w = as_weights(w)
    k = _nearest_count(p, w.size)
    x = np.ones(w.size, dtype=np.int8)
    x[np.argsort(w * w, kind="stable")[:k]] = -1
    return x


def converged_mask_structured(p: float, w, part: NeighbourhoodPartition) -> np.ndarray:
    p = check_fraction(p)
    rms2 = neighbourhood_rms(w, part) ** 2
    ranked = np.argsort(rms2, kind="stable")
    cum = np.concatenate(([0], np.cumsum(part.sizes[ranked])))
    target = p * part.n
    n_groups = int(np.argmin(np.abs(cum - target)))
    if abs(cum[n_groups] - target) > _ACHIEVABLE_TOL:
        _warn_once((p, tuple(part.sizes[:8]), part.n),
                   "pruning fraction %.6g is not achievable at neighbourhood granularity; "
                   "pruning %d of %d weights", p, cum[n_groups], part.n)
    pruned_groups = np.zeros(part.m, dtype=bool)
    pruned_groups[ranked[:n_groups]] = True
    return np.where(part.broadcast(pruned_groups), -1, 1).astype(np.int8)


def apply_mask(w, x) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x)
    if w.size != x.size:
        raise ValueError(f"mask length {x.size} does not match weight count {w.size}")
    return w * ((x.reshape(w.shape) + 1) // 2)


def pruned_fraction(x) -> float:
    x = np.asarray(x)
    return float(np.count_nonzero(x == -1)) / x.size


def mask_agreement(x1, x2) -> float:
    x1, x2 = np.asarray(x1).ravel(), np.asarray(x2).ravel()
    if x1.size != x2.size:
        raise ValueError("masks differ in length")
    return float(np.count_nonzero(x1 == x2)) / x1.size


def is_neighbourhood_uniform(x, part: NeighbourhoodPartition) -> bool:
    x = np.asarray(x).ravel()
    sums = part.group_sums(x.astype(np.int64))
    return bool(np.all(np.abs(sums) == part.sizes))
