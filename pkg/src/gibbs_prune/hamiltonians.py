"""Energy functions over pruning masks.

Every Hamiltonian here is built from the current weight magnitudes so that its
minimum is the converged mask: the lowest-magnitude weights (or neighbourhoods)
pruned at fraction ``p``.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .masks import (
    NeighbourhoodPartition,
    achievable_fraction,
    as_weights,
    check_fraction,
    converged_mask_structured,
    converged_mask_unstructured,
    neighbourhood_rms,
    squared_quantile,
)

BINARY_UNSTRUCTURED = "binary-unstructured"
BINARY_STRUCTURED = "binary-structured"
LINEAR_SIGN = "linear-sign"
LINEAR_SQUARE = "linear-square"
LINEAR_ABS = "linear-abs"
STRUCTURED_LINEAR = "structured-linear"
STRUCTURED_QUADRATIC = "structured-quadratic"

UNSTRUCTURED_LINEAR = (LINEAR_SIGN, LINEAR_SQUARE, LINEAR_ABS)
BINARY_VARIANTS = (BINARY_UNSTRUCTURED, BINARY_STRUCTURED)
STRUCTURED_VARIANTS = (BINARY_STRUCTURED, STRUCTURED_LINEAR, STRUCTURED_QUADRATIC)
VARIANTS = (BINARY_UNSTRUCTURED, BINARY_STRUCTURED, LINEAR_SIGN, LINEAR_SQUARE,
            LINEAR_ABS, STRUCTURED_LINEAR, STRUCTURED_QUADRATIC)


@dataclass(frozen=True)
class CouplingGraph:
    """Equal ferromagnetic couplings between elements of the same neighbourhood.

    Each unordered within-neighbourhood pair contributes ``-c * x_i * x_j``.
    With a ``colouring`` set, only pairs joining different colours remain
    (complete graph -> complete bipartite graph per neighbourhood).
    """

    partition: NeighbourhoodPartition
    c: float
    colouring: np.ndarray | None = None

    def n_edges(self) -> int:
        if self.colouring is None:
            s = self.partition.sizes
            return int(np.sum(s * (s - 1) // 2))
        ones = self.partition.group_sums(self.colouring.astype(np.int64))
        return int(np.sum(ones * (self.partition.sizes - ones)))

    def edges(self) -> set[frozenset]:
        """Explicit edge set; intended for small graphs and tests."""
        out = set()
        for g in self.partition.groups:
            for i, j in combinations(g.tolist(), 2):
                if self.colouring is None or self.colouring[i] != self.colouring[j]:
                    out.add(frozenset((i, j)))
        return out

    def pair_sums(self, x) -> np.ndarray:
        """Per-neighbourhood sum of x_i*x_j over retained edges, shape (..., M)."""
        x = np.asarray(x, dtype=np.float64)
        part = self.partition
        if self.colouring is None:
            s = part.group_sums(x)
            sq = part.group_sums(x * x)
            return (s * s - sq) / 2.0
        zero = self.colouring == 0
        s0 = part.group_sums(np.where(zero, x, 0.0))
        s1 = part.group_sums(np.where(zero, 0.0, x))
        return s0 * s1

    def energy(self, x) -> np.ndarray:
        return -self.c * self.pair_sums(x).sum(axis=-1)


@dataclass(frozen=True)
class HamiltonianSpec:
    variant: str
    linear_coeffs: np.ndarray | None = None
    coupling_c: float | None = None
    converged_mask: np.ndarray | None = None
    partition: NeighbourhoodPartition | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown Hamiltonian variant {self.variant!r}")
        if self.variant in STRUCTURED_VARIANTS and self.partition is None:
            raise ValueError(f"{self.variant} needs a neighbourhood partition")
        if self.variant in BINARY_VARIANTS and self.converged_mask is None:
            raise ValueError("binary Hamiltonians need the converged mask")
        if self.variant not in BINARY_VARIANTS and self.linear_coeffs is None:
            raise ValueError(f"{self.variant} needs linear coefficients")
        if self.variant == STRUCTURED_QUADRATIC and not (self.coupling_c and self.coupling_c > 0):
            raise ValueError("the quadratic Hamiltonian needs a coupling c > 0")

    @property
    def n(self) -> int:
        ref = self.converged_mask if self.linear_coeffs is None else self.linear_coeffs
        return int(np.asarray(ref).size)

    @property
    def coupling(self) -> CouplingGraph | None:
        if self.variant != STRUCTURED_QUADRATIC:
            return None
        return CouplingGraph(self.partition, self.coupling_c)


def _tie_aware_sign(diff: np.ndarray, x_cvg: np.ndarray) -> np.ndarray:
    # Exact ties keep sign 0 (a fair coin) unless the converged mask treats every
    # tied entry alike, in which case the tie leans towards that value.
    a = np.sign(diff)
    tied = diff == 0
    if np.any(tied):
        side = np.unique(x_cvg[tied])
        if side.size == 1:
            a[tied] = -float(side[0])
    return a


def build_linear_coeffs(variant: str, p: float, w) -> np.ndarray:
    # The threshold uses the achieved fraction so that the minimizer prunes
    # exactly the converged mask's count even when p*N is not an integer.
    w = as_weights(w)
    q = squared_quantile(achievable_fraction(p, w.size), w)
    if variant == LINEAR_SIGN:
        return _tie_aware_sign(q - w * w, converged_mask_unstructured(p, w))
    if variant == LINEAR_SQUARE:
        return q - w * w
    if variant == LINEAR_ABS:
        return np.sqrt(q) - np.abs(w)
    raise ValueError(f"{variant!r} is not an unstructured linear variant")


def _group_converged(p, w, part):
    # one converged-mask entry per neighbourhood
    return converged_mask_structured(p, w, part)[part.order[part.starts]]


def build_structured_linear_coeffs(p: float, w, part: NeighbourhoodPartition) -> np.ndarray:
    rms = neighbourhood_rms(w, part)
    group_cvg = _group_converged(p, w, part)
    q = squared_quantile(np.count_nonzero(group_cvg == -1) / part.m, rms)
    return part.broadcast(_tie_aware_sign(q - rms * rms, group_cvg))


def build_quadratic(p: float, w, part: NeighbourhoodPartition, c: float) -> HamiltonianSpec:
    if not c > 0:
        raise ValueError(f"coupling c must be positive, got {c}")
    w = as_weights(w)
    pruned_groups = np.count_nonzero(_group_converged(p, w, part) == -1)
    q = squared_quantile(pruned_groups / part.m, neighbourhood_rms(w, part))
    return HamiltonianSpec(STRUCTURED_QUADRATIC, linear_coeffs=q - w * w,
                           coupling_c=float(c), partition=part)


def build_hamiltonian(variant: str, p: float, w, part: NeighbourhoodPartition | None = None,
                      c: float | None = None) -> HamiltonianSpec:
    """Build any supported Hamiltonian from the current weights."""
    p = check_fraction(p)
    w = as_weights(w)
    if variant in STRUCTURED_VARIANTS and part is None:
        raise ValueError(f"{variant} needs a neighbourhood partition")
    if variant == BINARY_UNSTRUCTURED:
        return HamiltonianSpec(variant, converged_mask=converged_mask_unstructured(p, w))
    if variant == BINARY_STRUCTURED:
        return HamiltonianSpec(variant, converged_mask=converged_mask_structured(p, w, part),
                               partition=part)
    if variant in UNSTRUCTURED_LINEAR:
        return HamiltonianSpec(variant, linear_coeffs=build_linear_coeffs(variant, p, w))
    if variant == STRUCTURED_LINEAR:
        return HamiltonianSpec(variant, linear_coeffs=build_structured_linear_coeffs(p, w, part),
                               partition=part)
    if variant == STRUCTURED_QUADRATIC:
        return build_quadratic(p, w, part, 0.01 if c is None else c)
    raise ValueError(f"unknown Hamiltonian variant {variant!r}")


def energy(spec: HamiltonianSpec, x):
    """Energy of mask ``x``; a batch of masks (..., N) gives an array of energies."""
    x = np.asarray(x)
    if x.shape[-1] != spec.n:
        raise ValueError("mask length does not match the Hamiltonian")
    if spec.variant in BINARY_VARIANTS:
        e = np.any(x != spec.converged_mask, axis=-1).astype(np.float64)
    else:
        e = x.astype(np.float64) @ spec.linear_coeffs
        if spec.variant == STRUCTURED_QUADRATIC:
            e = e + spec.coupling.energy(x)
    return float(e) if np.ndim(e) == 0 else e


def neighbourhood_energies(spec: HamiltonianSpec, x) -> np.ndarray:
    """Per-neighbourhood terms of a quadratic Hamiltonian; they sum to ``energy``."""
    if spec.variant != STRUCTURED_QUADRATIC:
        raise ValueError("only the quadratic Hamiltonian decomposes by neighbourhood here")
    x = np.asarray(x, dtype=np.float64)
    part = spec.partition
    return part.group_sums(x * spec.linear_coeffs) - spec.coupling_c * spec.coupling.pair_sums(x)


def min_coupling_for_uniformity(b) -> float:
    """max_x b.x - min_x b.x; any larger coupling forces uniform neighbourhoods at the minimum."""
    return float(2.0 * np.sum(np.abs(np.asarray(b, dtype=np.float64))))
