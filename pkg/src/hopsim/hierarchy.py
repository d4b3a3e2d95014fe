"""Truncated hierarchy index space with precomputed neighbor tables.

Auxiliary states are labeled by multi-indices k in N^M (M = n_sites * J
bath modes, site-major). Triangular truncation keeps |k| = sum k_m <= depth,
giving binomial(M + depth, depth) indices. Enumeration is graded
lexicographic: depth shells are contiguous and id 0 is k = 0, the physical
state.

Neighbor tables store, for every (id, mode), the flat id of k + e_m and
k - e_m; sentinels mark up-neighbors cut off by the truncation and
down-neighbors below the k_m = 0 boundary. Both directions contribute zero
amplitude in the equations of motion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

TRUNCATED = -1   # up-neighbor beyond the truncation depth
BOUNDARY = -1    # down-neighbor below k_m = 0

DEFAULT_INDEX_CAP = 2_000_000


def _compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    """All ways to write `total` as an ordered sum of `parts` non-negative ints, lex order."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


@dataclass(frozen=True)
class HierarchyIndexSpace:
    """Immutable enumeration of the truncated multi-index set.

    Attributes
    ----------
    n_sites, modes_per_site, depth : int
        Problem shape; n_modes = n_sites * modes_per_site.
    indices : (n_indices, n_modes) int array
        Multi-indices in graded lexicographic order; row 0 is all-zero.
    up, down : (n_indices, n_modes) int32 arrays
        Flat ids of k + e_m / k - e_m, or the TRUNCATED / BOUNDARY sentinel.
    mode_site : (n_modes,) int32 array
        Site owning each mode.
    """

    n_sites: int
    modes_per_site: int
    depth: int
    indices: np.ndarray
    up: np.ndarray
    down: np.ndarray
    mode_site: np.ndarray
    flat_of: dict

    @property
    def n_modes(self) -> int:
        return self.n_sites * self.modes_per_site

    @property
    def n_indices(self) -> int:
        return self.indices.shape[0]

    def multi_index(self, idx_id: int) -> tuple[int, ...]:
        return tuple(int(v) for v in self.indices[idx_id])

    def id_of(self, multi_index) -> int:
        return self.flat_of[tuple(multi_index)]

    def kdotw_all(self, rates: np.ndarray) -> np.ndarray:
        """k . w for every index at once."""
        return self.indices @ np.asarray(rates, dtype=complex)


def build_index_space(
    n_sites: int,
    modes_per_site: int,
    depth: int,
    max_indices: int = DEFAULT_INDEX_CAP,
) -> HierarchyIndexSpace:
    """Enumerate all |k| <= depth multi-indices and fill the neighbor tables."""
    if n_sites < 1 or modes_per_site < 1:
        raise ValueError("need at least one site and one mode per site")
    if depth < 0:
        raise ValueError("truncation depth must be >= 0")
    n_modes = n_sites * modes_per_site
    count = math.comb(n_modes + depth, depth)
    if count > max_indices:
        raise ValueError(
            f"index space size C({n_modes + depth},{depth}) = {count} "
            f"exceeds the configured cap of {max_indices} indices"
        )

    rows: list[tuple[int, ...]] = []
    for shell in range(depth + 1):
        rows.extend(_compositions(shell, n_modes))
    indices = np.array(rows, dtype=np.int64)
    flat_of = {k: i for i, k in enumerate(rows)}

    up = np.full((count, n_modes), TRUNCATED, dtype=np.int32)
    down = np.full((count, n_modes), BOUNDARY, dtype=np.int32)
    for i, k in enumerate(rows):
        for m in range(n_modes):
            if sum(k) < depth:
                ku = k[:m] + (k[m] + 1,) + k[m + 1:]
                up[i, m] = flat_of[ku]
            if k[m] > 0:
                kd = k[:m] + (k[m] - 1,) + k[m + 1:]
                down[i, m] = flat_of[kd]

    mode_site = np.repeat(np.arange(n_sites, dtype=np.int32), modes_per_site)
    indices.setflags(write=False)
    up.setflags(write=False)
    down.setflags(write=False)
    mode_site.setflags(write=False)
    return HierarchyIndexSpace(
        n_sites=n_sites,
        modes_per_site=modes_per_site,
        depth=depth,
        indices=indices,
        up=up,
        down=down,
        mode_site=mode_site,
        flat_of=flat_of,
    )


def kdotw(space: HierarchyIndexSpace, idx_id: int, rates: np.ndarray) -> complex:
    """Dot product k . w of one multi-index with the per-mode rate vector."""
    return complex(space.indices[idx_id] @ np.asarray(rates, dtype=complex))
