"""Reed-Muller codes and subcodes: generators, complexity metric, encoder search.

An RM(m, r) generator keeps the rows of the Kronecker-power matrix P with
Hamming weight at least 2^(m-r), ordered by decreasing weight and then by
ascending row index in P.  A subcode of dimension k stacks the RM(m, r-1)
generator on top of k - k_l rows chosen from the binom(m, r) candidates of
weight exactly 2^(m-r); candidates are numbered by ascending P-row index so
a selection can be recorded as an index set.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import project
from .gf2 import gf2_rank, kronecker_power, pack_rows

__all__ = [
    "CodeSpec",
    "EncoderSearchResult",
    "rm_dimension",
    "polarization_matrix",
    "rm_generator",
    "candidate_rows",
    "subcode_generator",
    "complexity_metric_L",
    "encoder_search",
    "save_generator",
    "load_generator",
]

_F = np.array([[1, 0], [1, 1]], dtype=np.uint8)


def rm_dimension(m: int, r: int) -> int:
    """Dimension of RM(m, r): sum of binom(m, i) for i <= r."""
    return sum(math.comb(m, i) for i in range(r + 1))


def polarization_matrix(m: int) -> np.ndarray:
    """The n x n Kronecker power [[1,0],[1,1]]^(x m)."""
    return kronecker_power(_F, m)


def _row_order(m: int, min_weight: int) -> list[int]:
    n = 1 << m
    weights = [1 << bin(i).count("1") for i in range(n)]
    keep = [i for i in range(n) if weights[i] >= min_weight]
    return sorted(keep, key=lambda i: (-weights[i], i))


def rm_generator(m: int, r: int) -> np.ndarray:
    """Canonical generator matrix of RM(m, r)."""
    if not 0 <= r <= m:
        raise ValueError("need 0 <= r <= m")
    p = polarization_matrix(m)
    return p[_row_order(m, 1 << (m - r))]


def candidate_rows(m: int, r: int) -> tuple[list[int], np.ndarray]:
    """P-row indices and rows of weight exactly 2^(m-r), ascending index."""
    if not 1 <= r <= m:
        raise ValueError("need 1 <= r <= m")
    n = 1 << m
    idx = [i for i in range(n) if bin(i).count("1") == m - r]
    return idx, polarization_matrix(m)[idx]


@dataclass(frozen=True)
class CodeSpec:
    """An RM subcode: parent order r, dimension k, generator and row selection."""

    m: int
    r: int
    k: int
    generator: np.ndarray
    selection: tuple[int, ...] | None = None

    @property
    def n(self) -> int:
        return 1 << self.m

    @property
    def k_l(self) -> int:
        return rm_dimension(self.m, self.r - 1)

    @property
    def k_u(self) -> int:
        return rm_dimension(self.m, self.r)

    def encode(self, u) -> np.ndarray:
        """Map information bits (k,) or (B, k) to codewords."""
        u = np.asarray(u).astype(np.uint8)
        single = u.ndim == 1
        if single:
            u = u[None, :]
        if u.shape[1] != self.k:
            raise ValueError("information word length must equal k")
        c = ((u.astype(np.int64) @ self.generator.astype(np.int64)) & 1).astype(np.uint8)
        return c[0] if single else c


def subcode_generator(m: int, r: int, k: int, selection) -> CodeSpec:
    """Stack RM(m, r-1) with the selected weight-2^(m-r) candidate rows."""
    k_l = rm_dimension(m, r - 1)
    k_u = rm_dimension(m, r)
    if not k_l < k <= k_u:
        raise ValueError(f"need k_l < k <= k_u, got k={k} with k_l={k_l}, k_u={k_u}")
    selection = tuple(sorted(int(i) for i in selection))
    if len(selection) != k - k_l:
        raise ValueError(f"selection must contain k - k_l = {k - k_l} indices")
    if len(set(selection)) != len(selection):
        raise ValueError("selection indices must be distinct")
    n_cand = math.comb(m, r)
    if selection and not 0 <= selection[0] <= selection[-1] < n_cand:
        raise ValueError(f"selection indices must lie in [0, {n_cand})")
    base = rm_generator(m, r - 1)
    _, cand = candidate_rows(m, r)
    gen = np.vstack([base, cand[list(selection)]])
    return CodeSpec(m=m, r=r, k=k, generator=gen, selection=selection)


def _root_subspace_terms(gen: np.ndarray, m: int, r: int, subspaces) -> np.ndarray:
    """Per-root-subspace sum of 2^rank over the bottom-layer leaves below it."""
    n = 1 << m
    if subspaces == "all":
        subspaces = range(1, n)

    def leaf_sum(g: np.ndarray, n_node: int, depth_left: int) -> int:
        if depth_left == 0:
            return 1 << gf2_rank(g)
        total = 0
        for z in range(1, n_node):
            total += leaf_sum(project._project_generator_1d(g, n_node, z),
                              n_node // 2, depth_left - 1)
        return total

    terms = []
    for z in subspaces:
        g1 = project._project_generator_1d(gen, n, int(z))
        terms.append(leaf_sum(g1, n // 2, max(r - 2, 0)))
    return np.asarray(terms, dtype=np.int64)


def complexity_metric_L(spec: CodeSpec, subspaces="all") -> int:
    """Sum of 2^rank over the bottom-layer projected generators.

    subspaces restricts the first projection layer ("all" keeps all n - 1
    1-D subspaces); deeper layers, if any, are always fully expanded.
    """
    return int(_root_subspace_terms(spec.generator, spec.m, spec.r, subspaces).sum())


@dataclass(frozen=True)
class EncoderSearchResult:
    """Scores of every enumerated row selection.

    candidates pairs each selection with its full-projection score L and,
    when q0 was given, the sum of its q0 smallest per-subspace terms.
    """

    m: int
    r: int
    k: int
    objective: str
    q0: int | None
    selections: tuple[tuple[int, ...], ...]
    l_full: np.ndarray
    l_subset: np.ndarray | None

    @property
    def candidates(self):
        subset = self.l_subset if self.l_subset is not None else [None] * len(self.selections)
        return list(zip(self.selections, self.l_full.tolist(),
                        [s if s is None else int(s) for s in subset]))

    @property
    def argmin_full(self) -> int:
        return int(np.argmin(self.l_full))

    @property
    def argmax_full(self) -> int:
        return int(np.argmax(self.l_full))

    @property
    def argmin_subset(self) -> int:
        if self.l_subset is None:
            raise ValueError("search was run without q0")
        return int(np.argmin(self.l_subset))

    @property
    def best_index(self) -> int:
        if self.objective == "min-L":
            return self.argmin_full
        if self.objective == "max-L":
            return self.argmax_full
        return self.argmin_subset

    def spec_at(self, index: int) -> CodeSpec:
        return subcode_generator(self.m, self.r, self.k, self.selections[index])

    def best_spec(self) -> CodeSpec:
        return self.spec_at(self.best_index)


def _ranks_fast_r2(m: int, k: int, selections) -> np.ndarray:
    """Ranks of every selection's 63-style projections for r = 2 codes.

    Per subspace, the base RM(m, 1) projection is echelonized once and each
    candidate row's projection reduced against it; a selection's rank is
    then base rank plus the rank of its reduced candidate set.
    """
    n = 1 << m
    base = rm_generator(m, 1)
    _, cand = candidate_rows(m, 2)
    base_rank = np.zeros(n - 1, dtype=np.int64)
    reduced: list[list[int]] = []
    for z in range(1, n):
        bp = project._project_generator_1d(base, n, z)
        pivots: dict[int, int] = {}
        for v in pack_rows(bp):
            while v:
                h = v.bit_length()
                if h not in pivots:
                    pivots[h] = v
                    break
                v ^= pivots[h]
        base_rank[z - 1] = len(pivots)
        cp = project._project_generator_1d(cand, n, z)
        red = []
        for v in pack_rows(cp):
            while v:
                h = v.bit_length()
                if h not in pivots:
                    break
                v ^= pivots[h]
            red.append(v)
        reduced.append(red)

    ranks = np.zeros((len(selections), n - 1), dtype=np.uint8)
    for qi in range(n - 1):
        red = reduced[qi]
        br = int(base_rank[qi])
        col = ranks[:, qi]
        for si, sel in enumerate(selections):
            pivots = {}
            extra = 0
            for i in sel:
                v = red[i]
                while v:
                    h = v.bit_length()
                    b = pivots.get(h)
                    if b is None:
                        pivots[h] = v
                        extra += 1
                        break
                    v ^= b
            col[si] = br + extra
    return ranks


def encoder_search(m: int, r: int, k: int, objective: str = "min-L",
                   q0: int | None = None, guard: int = 10 ** 6,
                   samples: int | None = None, seed: int = 0) -> EncoderSearchResult:
    """Score row selections by the complexity metric L and rank them.

    objective is one of "min-L", "max-L" or "min-L-subset" (the latter
    scores each selection by the sum of its q0 smallest per-subspace terms
    and requires q0).  All binom(k_u - k_l, k - k_l) selections are
    enumerated unless samples is given, in which case that many selections
    are drawn uniformly at random from the given seed.  Ties are broken by
    the lexicographically smallest selection.
    """
    if objective not in ("min-L", "max-L", "min-L-subset"):
        raise ValueError(f"unknown objective {objective!r}")
    if objective == "min-L-subset" and q0 is None:
        raise ValueError("objective min-L-subset requires q0")
    k_l = rm_dimension(m, r - 1)
    n_cand = math.comb(m, r)
    n_take = k - k_l
    total = math.comb(n_cand, n_take)
    if samples is None:
        if total > guard:
            raise ValueError(
                f"{total} selections exceed the enumeration guard {guard}; "
                "raise guard or use sampled search (samples=...)")
        selections = tuple(itertools.combinations(range(n_cand), n_take))
    else:
        rng = np.random.default_rng(seed)
        seen = set()
        for _ in range(samples):
            pick = tuple(sorted(rng.choice(n_cand, size=n_take, replace=False).tolist()))
            seen.add(pick)
        selections = tuple(sorted(seen))

    if r == 2:
        ranks = _ranks_fast_r2(m, k, selections)
        terms = (np.int64(1) << ranks.astype(np.int64))
    else:
        rows = []
        for sel in selections:
            spec = subcode_generator(m, r, k, sel)
            rows.append(_root_subspace_terms(spec.generator, m, r, "all"))
        terms = np.vstack(rows)

    l_full = terms.sum(axis=1)
    l_subset = None
    if q0 is not None:
        if not 0 < q0 <= terms.shape[1]:
            raise ValueError("q0 must lie in [1, number of subspaces]")
        l_subset = np.partition(terms, q0 - 1, axis=1)[:, :q0].sum(axis=1)
    return EncoderSearchResult(m=m, r=r, k=k, objective=objective, q0=q0,
                               selections=selections, l_full=l_full,
                               l_subset=l_subset)


def save_generator(spec: CodeSpec, path) -> None:
    """Write a generator file: header 'm r k' then k rows of 0/1 characters."""
    lines = [f"{spec.m} {spec.r} {spec.k}"]
    lines += ["".join(str(int(b)) for b in row) for row in spec.generator]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_generator(path) -> CodeSpec:
    """Read a generator file and validate the subcode structure.

    Checks full row rank, that the leading k_l rows span RM(m, r-1) and
    that the extra rows have weight exactly 2^(m-r).  The selection is
    recovered when the extra rows literally match candidate rows.
    """
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    m, r, k = (int(tok) for tok in lines[0].split())
    n = 1 << m
    if len(lines) != k + 1:
        raise ValueError(f"expected {k} generator rows, found {len(lines) - 1}")
    gen = np.array([[int(ch) for ch in ln] for ln in lines[1:]], dtype=np.uint8)
    if gen.shape != (k, n):
        raise ValueError(f"generator shape {gen.shape} does not match header")
    if gf2_rank(gen) != k:
        raise ValueError("generator does not have full row rank")
    k_l = rm_dimension(m, r - 1)
    if not k_l < k <= rm_dimension(m, r):
        raise ValueError("dimension k is outside (k_l, k_u]")
    base = rm_generator(m, r - 1)
    if gf2_rank(np.vstack([base, gen[:k_l]])) != k_l:
        raise ValueError("leading rows do not span RM(m, r-1)")
    w = 1 << (m - r)
    if not np.all(gen[k_l:].sum(axis=1) == w):
        raise ValueError(f"extra rows must have Hamming weight {w}")
    idx, cand = candidate_rows(m, r)
    lookup = {row.tobytes(): j for j, row in enumerate(cand)}
    sel = [lookup.get(row.tobytes()) for row in gen[k_l:]]
    selection = tuple(sorted(sel)) if all(s is not None for s in sel) else None
    return CodeSpec(m=m, r=r, k=k, generator=gen, selection=selection)
