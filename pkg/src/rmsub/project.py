"""Coset projections and the recursive projection tree.

Points of F_2^m are identified with integers in [0, 2^m) using the
most-significant-bit-first convention of :func:`rmsub.gf2.de2bi`; a 1-D
subspace is identified with the integer value of its nonzero vector, so
there are exactly n - 1 of them.  Cosets are listed in ascending order of
their minimum member, which fixes the coordinate order of every projected
vector and matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .gf2 import de2bi, gf2_matmul, pack_rows

__all__ = [
    "CosetTable",
    "coset_table",
    "coset_table_1d",
    "llr_boxplus",
    "project_binary",
    "project_llr_1d",
    "project_llr_sdim",
    "project_generator",
    "build_u_and_codebook",
    "ProjNode",
    "ProjectionTree",
    "build_projection_tree",
    "memory_report",
    "rank_report_rows",
    "rank_report_csv",
]

_ATANH_LIM = 1.0 - 1e-12


@dataclass(frozen=True)
class CosetTable:
    """Cosets of an s-dimensional subspace of F_2^m.

    cosets holds 2^(m-s) tuples of 2^s point indices; each tuple is sorted
    and the tuples are ordered by their minimum member.
    """

    m: int
    s: int
    cosets: tuple[tuple[int, ...], ...]


def coset_table(m: int, basis) -> CosetTable:
    """Coset table of the subspace spanned by the given nonzero vectors."""
    basis = [int(b) for b in basis]
    n = 1 << m
    if any(not 0 < b < n for b in basis):
        raise ValueError("basis vectors must lie in [1, 2^m)")
    span = {0}
    for b in basis:
        span |= {v ^ b for v in span}
    s = len(basis)
    if len(span) != 1 << s:
        raise ValueError("basis vectors are linearly dependent")
    seen = np.zeros(n, dtype=bool)
    cosets = []
    for v in range(n):
        if not seen[v]:
            coset = sorted(v ^ b for b in span)
            cosets.append(tuple(coset))
            seen[list(coset)] = True
    return CosetTable(m=m, s=s, cosets=tuple(cosets))


def coset_table_1d(m: int, z: int) -> CosetTable:
    """Cosets of the 1-D subspace {0, z}."""
    return coset_table(m, [z])


@lru_cache(maxsize=None)
def _pair_arrays(n: int, z: int):
    """Index arrays for the 1-D subspace z of F_2^(log2 n).

    Returns (lo, hi, coset_of, partner): the two members of each coset in
    canonical order, the coset index of every point, and z XOR'ed partners.
    """
    if not 0 < z < n:
        raise ValueError("subspace integer out of range")
    pts = np.arange(n)
    partner = pts ^ z
    lo_mask = pts < partner
    lo = pts[lo_mask]
    hi = partner[lo_mask]
    coset_of = np.empty(n, dtype=np.int64)
    coset_of[lo] = np.arange(n // 2)
    coset_of[hi] = np.arange(n // 2)
    return lo, hi, coset_of, partner


def llr_boxplus(a, b):
    """LLR of the XOR of two bits given their LLRs.

    Evaluated as 2*atanh(tanh(a/2)*tanh(b/2)) with the product clamped away
    from +-1; algebraically identical to ln(e^(a+b)+1) - ln(e^a+e^b) and
    stable for |a|, |b| beyond 700.
    """
    t = np.tanh(np.asarray(a, dtype=np.float64) / 2.0)
    t = t * np.tanh(np.asarray(b, dtype=np.float64) / 2.0)
    return 2.0 * np.arctanh(np.clip(t, -_ATANH_LIM, _ATANH_LIM))


def project_binary(y, table: CosetTable) -> np.ndarray:
    """XOR a binary vector over each coset."""
    y = np.asarray(y).astype(np.uint8).reshape(-1)
    if y.shape[0] != 1 << table.m:
        raise ValueError("vector length must be 2^m")
    idx = np.array(table.cosets, dtype=np.int64)
    return np.bitwise_xor.reduce(y[idx], axis=1)


def project_llr_1d(l, table: CosetTable) -> np.ndarray:
    """Project an LLR vector onto the cosets of a 1-D subspace."""
    l = np.asarray(l, dtype=np.float64).reshape(-1)
    if table.s != 1:
        raise ValueError("table must describe a 1-D subspace")
    if l.shape[0] != 1 << table.m:
        raise ValueError("vector length must be 2^m")
    if not np.all(np.isfinite(l)):
        raise ValueError("LLR entries must be finite")
    idx = np.array(table.cosets, dtype=np.int64)
    return llr_boxplus(l[idx[:, 0]], l[idx[:, 1]])


def project_llr_sdim(l, table: CosetTable, s: int | None = None) -> np.ndarray:
    """Project an LLR vector onto the cosets of an s-dimensional subspace.

    Applies the coset-halving recursion; a singleton set reduces to the
    channel LLR itself, so s = 1 coincides with project_llr_1d.
    """
    l = np.asarray(l, dtype=np.float64).reshape(-1)
    if s is not None and s != table.s:
        raise ValueError("s does not match the coset table")
    if l.shape[0] != 1 << table.m:
        raise ValueError("vector length must be 2^m")

    def combine(members: tuple[int, ...]) -> float:
        if len(members) == 1:
            return l[members[0]]
        half = len(members) // 2
        return float(llr_boxplus(combine(members[:half]), combine(members[half:])))

    return np.array([combine(t) for t in table.cosets], dtype=np.float64)


def project_generator(g, table: CosetTable) -> np.ndarray:
    """Merge (XOR) generator columns within each coset."""
    g = np.asarray(g).astype(np.uint8)
    if g.ndim != 2 or g.shape[1] != 1 << table.m:
        raise ValueError("generator must have 2^m columns")
    idx = np.array(table.cosets, dtype=np.int64)
    return np.bitwise_xor.reduce(g[:, idx], axis=2)


def _project_generator_1d(g: np.ndarray, n: int, z: int) -> np.ndarray:
    lo, hi, _, _ = _pair_arrays(n, z)
    return g[:, lo] ^ g[:, hi]


def build_u_and_codebook(g_p) -> tuple[np.ndarray, np.ndarray]:
    """Information-sequence matrix U and codebook of a projected code.

    Scans the rows of g_p in order, keeping the first R linearly
    independent ones (R = rank of g_p).  U is 2^R x k with the binary
    enumeration of [0, 2^R) in the kept-row columns and zeros in the
    remaining (frozen) columns; the codebook is U @ g_p over GF(2) and has
    2^R distinct rows.
    """
    g_p = np.asarray(g_p).astype(np.uint8)
    if g_p.ndim != 2 or g_p.size == 0:
        raise ValueError("g_p must be a non-empty matrix")
    k = g_p.shape[0]
    pivots: dict[int, int] = {}
    u_ind = []
    for i, v in enumerate(pack_rows(g_p)):
        while v:
            h = v.bit_length()
            b = pivots.get(h)
            if b is None:
                pivots[h] = v
                u_ind.append(i)
                break
            v ^= b
    rank = len(u_ind)
    u = np.zeros((1 << rank, k), dtype=np.uint8)
    u[:, u_ind] = de2bi(0, (1 << rank) - 1, rank)
    codebook = gf2_matmul(u, g_p)
    return u, codebook


@dataclass
class ProjNode:
    """One node of the projection tree.

    A leaf (no children) stores the projected generator together with its
    rank, U matrix and codebook; u/codebook stay None in low-memory trees
    and are recomputed on the fly by the decoders.  decode_cache holds
    decoder-derived read-only views of the stored matrices.
    """

    gen: np.ndarray
    n: int
    depth: int
    path: tuple[int, ...]
    rank: int
    subspaces: tuple[int, ...] = ()
    children: tuple["ProjNode", ...] = ()
    u: np.ndarray | None = None
    codebook: np.ndarray | None = None
    decode_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass
class ProjectionTree:
    """Projection tree of a code: r - 1 layers of 1-D projections.

    The tree is immutable once built and safe to share across threads.
    """

    m: int
    r: int
    k: int
    root: ProjNode

    def leaves(self):
        def walk(node):
            if node.is_leaf:
                yield node
            else:
                for child in node.children:
                    yield from walk(child)

        return walk(self.root)

    def inner_nodes(self):
        def walk(node):
            if not node.is_leaf:
                yield node
                for child in node.children:
                    yield from walk(child)

        return walk(self.root)

    @property
    def num_leaves(self) -> int:
        return sum(1 for _ in self.leaves())


def _rank_of(gen: np.ndarray) -> int:
    from .gf2 import gf2_rank

    return gf2_rank(gen)


def _selection_for(plan, path: tuple[int, ...], n_node: int) -> tuple[int, ...]:
    if plan == "full" or plan is None:
        return tuple(range(1, n_node))
    sel = plan.selections.get(path)
    if sel is None:
        return tuple(range(1, n_node))
    sel = tuple(int(z) for z in sel)
    for z in sel:
        if not 0 < z < n_node:
            raise ValueError(f"plan subspace {z} out of range at node {path}")
    return sel


def build_projection_tree(spec, plan="full", store_leaves: bool = True) -> ProjectionTree:
    """Build the projection tree of a code down to its bottom-layer leaves.

    spec needs attributes m, r and generator.  plan is "full" or a
    PruningPlan; pruned nodes project only onto the listed subspaces.  For
    r <= 1 the tree is a single leaf and the code is decoded directly.
    With store_leaves=False the leaves keep only their generator (the
    low-memory mode; U and codebooks are then rebuilt during decoding).
    """
    m, r = spec.m, spec.r
    gen = np.asarray(spec.generator).astype(np.uint8)
    depth_total = max(r - 1, 0)

    def build(gen_node: np.ndarray, depth: int, path: tuple[int, ...]) -> ProjNode:
        n_node = gen_node.shape[1]
        if depth == depth_total:
            if store_leaves:
                u, codebook = build_u_and_codebook(gen_node)
                return ProjNode(gen=gen_node, n=n_node, depth=depth, path=path,
                                rank=int(np.log2(u.shape[0])), u=u, codebook=codebook)
            return ProjNode(gen=gen_node, n=n_node, depth=depth, path=path,
                            rank=_rank_of(gen_node))
        sel = _selection_for(plan, path, n_node)
        children = tuple(
            build(_project_generator_1d(gen_node, n_node, z), depth + 1, path + (z,))
            for z in sel
        )
        return ProjNode(gen=gen_node, n=n_node, depth=depth, path=path,
                        rank=_rank_of(gen_node), subspaces=sel, children=children)

    tree = ProjectionTree(m=m, r=r, k=gen.shape[0], root=build(gen, 0, ()))
    if r >= 1:
        bound = m - r + 2
        for leaf in tree.leaves():
            assert leaf.rank <= bound, "leaf rank exceeds m - r + 2"
    return tree


def memory_report(tree: ProjectionTree) -> dict:
    """Exact stored bit counts of the tree plus the analytic worst-case bound.

    The bound evaluates the per-leaf worst case (rank m - r + 2) at the
    tree's own leaf count T: codebooks T * (n/2^(r-2)) * (n/2^(r-1)) bits,
    generators T * k * n/2^(r-1), U matrices T * (n/2^(r-2)) * k.
    """
    n, k, r = 1 << tree.m, tree.k, tree.r
    bits_codebooks = bits_generators = bits_u = 0
    t_leaves = 0
    for leaf in tree.leaves():
        t_leaves += 1
        bits_generators += leaf.gen.size
        rows = 1 << leaf.rank
        bits_codebooks += rows * leaf.n
        bits_u += rows * k
    n_leaf = n >> max(r - 1, 0)
    rows_max = 1 << min(tree.m - r + 2, k) if r >= 1 else 1 << k
    report = {
        "leaves": t_leaves,
        "bits_codebooks": bits_codebooks,
        "bits_generators": bits_generators,
        "bits_U": bits_u,
        "total_bits": bits_codebooks + bits_generators + bits_u,
        "bound_codebooks": t_leaves * rows_max * n_leaf,
        "bound_generators": t_leaves * k * n_leaf,
        "bound_U": t_leaves * rows_max * k,
    }
    report["bound_total"] = (
        report["bound_codebooks"] + report["bound_generators"] + report["bound_U"]
    )
    return report


def rank_report_rows(tree: ProjectionTree) -> list[tuple[str, int, int]]:
    """(subspace path, rank, 2^rank) for every leaf; paths join with '/'."""
    rows = []
    for leaf in tree.leaves():
        label = "/".join(str(z) for z in leaf.path) or "root"
        rows.append((label, leaf.rank, 1 << leaf.rank))
    return rows


def rank_report_csv(tree: ProjectionTree) -> str:
    """CSV rank/L/memory report: per-leaf rows plus summary lines."""
    rows = rank_report_rows(tree)
    lines = ["subspace_id,rank,two_pow_rank"]
    lines += [f"{label},{rank},{term}" for label, rank, term in rows]
    total = sum(term for _, _, term in rows)
    lines.append(f"total_L,,{total}")
    mem = memory_report(tree)
    for key in ("bits_codebooks", "bits_generators", "bits_U", "total_bits"):
        lines.append(f"{key},,{mem[key]}")
    return "\n".join(lines) + "\n"
