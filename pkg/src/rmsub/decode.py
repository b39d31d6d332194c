"""Decoders: exhaustive MAP, FHT, soft-MAP leaves and recursive (soft-)subRPA.

LLR convention: l(z) = ln(P(c(z)=0 | obs) / P(c(z)=1 | obs)), so a positive
LLR favours bit 0 and the hard decision of a tie is bit 0.  All decoders
run on a ProjectionTree; the batched engine processes whole blocks of
codewords at once and the single-vector entry points wrap a batch of one.
Rows of a batch are decoded independently; the only cross-row coupling is
BLAS summation order, which can move results by a few ulp between batch
shapes, so runs that fix the batch decomposition (as the Monte-Carlo
harness does with its chunking) are bit-for-bit reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .gf2 import gf2_solve
from .project import (ProjectionTree, ProjNode, _pair_arrays, build_u_and_codebook,
                      llr_boxplus)

__all__ = [
    "DecodeResult",
    "DecoderConfig",
    "BatchResult",
    "map_decode",
    "fht_decode",
    "soft_map",
    "hard_aggregate",
    "soft_aggregate",
    "logsum_aggregate",
    "subrpa_decode",
    "soft_subrpa_decode",
    "decode_batch",
    "recover_info_bits",
]


# ---------------------------------------------------------------------------
# leaf decoders


def _leaf_tables(node: ProjNode) -> tuple[np.ndarray, np.ndarray]:
    """(U, codebook) of a leaf, rebuilt on the fly for low-memory trees."""
    if node.codebook is not None:
        return node.u, node.codebook
    return build_u_and_codebook(node.gen)


def _leaf_cache(node: ProjNode) -> dict:
    """Float views of the leaf matrices, derived once per stored-leaf node."""
    if node.decode_cache:
        return node.decode_cache
    u, codebook = _leaf_tables(node)
    u_ind = np.flatnonzero(u.any(axis=0))
    built = dict(
        codebook=codebook,
        ct_t=np.ascontiguousarray((1.0 - 2.0 * codebook.astype(np.float64)).T),
        gen_basis=node.gen[u_ind].astype(np.float64),
        rank=int(np.log2(u.shape[0])),
    )
    if node.codebook is not None:
        # low-memory trees (codebook is None) recompute per use instead
        node.decode_cache.update(built)
    return built


def _map_batch(lp: np.ndarray, codebook: np.ndarray) -> np.ndarray:
    scores = lp @ (1.0 - 2.0 * codebook.astype(np.float64)).T
    return codebook[np.argmax(scores, axis=1)]


def map_decode(l, codebook) -> np.ndarray:
    """Codebook row maximizing <l, 1-2c>; ties pick the lowest row index."""
    l = np.asarray(l, dtype=np.float64).reshape(-1)
    codebook = np.asarray(codebook).astype(np.uint8)
    if codebook.ndim != 2 or codebook.shape[0] == 0:
        raise ValueError("codebook must be a non-empty matrix")
    if codebook.shape[1] != l.shape[0]:
        raise ValueError("codeword length must match LLR length")
    return _map_batch(l[None, :], codebook)[0]


def _fwht(x: np.ndarray) -> np.ndarray:
    """Walsh-Hadamard transform along the last axis (length a power of two)."""
    y = x.astype(np.float64, copy=True)
    n = y.shape[-1]
    h = 1
    while h < n:
        y = y.reshape(y.shape[:-1] + (n // (2 * h), 2, h))
        a = y[..., 0, :] + y[..., 1, :]
        b = y[..., 0, :] - y[..., 1, :]
        y = np.stack([a, b], axis=-2).reshape(y.shape[:-3] + (n,))
        h *= 2
    return y


@lru_cache(maxsize=None)
def _parity_table(n: int) -> np.ndarray:
    """parity(a & z) for all a, z in [0, n)."""
    a = np.arange(n, dtype=np.uint32)
    table = np.bitwise_and(a[:, None], a[None, :])
    return (np.bitwise_count(table) & 1).astype(np.uint8)


def _fht_batch(lp: np.ndarray) -> np.ndarray:
    t = _fwht(lp)
    j = np.argmax(np.abs(t), axis=1)
    a0 = (t[np.arange(t.shape[0]), j] < 0).astype(np.uint8)
    return a0[:, None] ^ _parity_table(lp.shape[1])[j]


def fht_decode(l, rank: int) -> np.ndarray:
    """MAP decoding of a full first-order RM code via the fast Hadamard transform.

    rank is the dimension of the leaf code and must equal m' + 1 for the
    code length 2^m'; anything smaller is a strict subcode, which this
    decoder cannot search (use map_decode or soft_map).  An all-zero input
    deterministically returns the all-zero codeword.
    """
    l = np.asarray(l, dtype=np.float64).reshape(-1)
    n = l.shape[0]
    m_prime = int(np.log2(n))
    if 1 << m_prime != n:
        raise ValueError("LLR length must be a power of two")
    if rank != m_prime + 1:
        raise ValueError(f"code of rank {rank} is not the full RM({m_prime},1)")
    return _fht_batch(l[None, :])[0]


def _soft_map_batch(lp: np.ndarray, ct_t: np.ndarray, gen_basis: np.ndarray,
                    rank: int) -> np.ndarray:
    """Soft decisions of a leaf: max-log information-bit LLRs, then min-sum.

    ct_t is (1 - 2*codebook)^T as floats and gen_basis holds the generator
    rows picked by the U finder, in order.
    """
    bsz = lp.shape[0]
    scores = lp @ ct_t  # (B, 2^R)

    l_basis = np.empty((bsz, rank))
    for j in range(rank):
        # rows of U enumerate [0, 2^R); bit j (MSB first) splits them in halves
        s = scores.reshape(bsz, 1 << j, 2, 1 << (rank - 1 - j))
        max0 = s[:, :, 0, :].reshape(bsz, -1).max(axis=1)
        max1 = s[:, :, 1, :].reshape(bsz, -1).max(axis=1)
        l_basis[:, j] = max0 - max1

    # frozen rows carry l_inf = 0 and never contribute to a column's min-sum,
    # so the combination runs over the basis rows only
    v = l_basis[:, :, None] * gen_basis[None, :, :]  # (B, R, n')
    absv = np.abs(v)
    absv[v == 0] = np.inf
    min_abs = absv.min(axis=1, initial=np.inf)
    signs = 1.0 - 2.0 * ((v < 0).sum(axis=1) & 1)
    return np.where(np.isinf(min_abs), 0.0, signs * min_abs)


def soft_map(l_p, g_p, codebook, u) -> np.ndarray:
    """Per-position LLRs of a leaf codeword given the projected channel LLRs.

    Consistency of (g_p, codebook, u) as produced by build_u_and_codebook is
    assumed; positions whose contributing information LLRs are all frozen
    come out as 0.
    """
    l_p = np.asarray(l_p, dtype=np.float64).reshape(-1)
    g_p = np.asarray(g_p).astype(np.uint8)
    codebook = np.asarray(codebook).astype(np.uint8)
    u = np.asarray(u).astype(np.uint8)
    if g_p.shape[1] != l_p.shape[0] or codebook.shape[1] != l_p.shape[0]:
        raise ValueError("matrix widths must match the LLR length")
    if u.shape != (codebook.shape[0], g_p.shape[0]):
        raise ValueError("U shape must be (codebook rows, generator rows)")
    u_ind = np.flatnonzero(u.any(axis=0))
    ct_t = (1.0 - 2.0 * codebook.astype(np.float64)).T
    rank = int(np.log2(u.shape[0]))
    return _soft_map_batch(l_p[None, :], ct_t, g_p[u_ind].astype(np.float64), rank)[0]


# ---------------------------------------------------------------------------
# aggregation


def _aggregate_batch(l: np.ndarray, items, weights, mode: str) -> np.ndarray:
    """Combine per-subspace decisions with the channel LLRs.

    items is a sequence of (subspace integer, decision batch); decisions are
    hard projected codewords for mode "hard" and projected LLR vectors for
    modes "soft" / "logsum".  weights defaults to the uniform 1/Q.
    """
    n = l.shape[1]
    q = len(items)
    if weights is None:
        weights = np.full(q, 1.0 / q)
    acc = np.zeros_like(l)
    for w, (z, dec) in zip(weights, items):
        _, _, coset_of, partner = _pair_arrays(n, int(z))
        lpart = l[:, partner]
        if mode == "hard":
            acc += w * (1.0 - 2.0 * dec[:, coset_of]) * lpart
        elif mode == "soft":
            acc += w * np.tanh(dec[:, coset_of] / 2.0) * lpart
        elif mode == "logsum":
            acc += w * llr_boxplus(dec[:, coset_of], lpart)
        else:
            raise ValueError(f"unknown aggregation mode {mode!r}")
    return acc


def _as_items_batch(l, decisions, dtype):
    l = np.asarray(l, dtype=np.float64).reshape(1, -1)
    items = [(int(z), np.asarray(d, dtype=dtype).reshape(1, -1)) for z, d in decisions]
    for _, d in items:
        if d.shape[1] * 2 != l.shape[1]:
            raise ValueError("decisions must have length n/2")
    return l, items


def hard_aggregate(l, decisions) -> np.ndarray:
    """Update LLRs from hard projected codewords.

    decisions is a list of (subspace integer, projected hard codeword); the
    update is the +-1 hard-decision specialization of the soft rule:
    mean over q of (1 - 2 y_q([z+B_q])) * l(z ^ z_q).
    """
    l, items = _as_items_batch(l, decisions, np.float64)
    return _aggregate_batch(l, items, None, "hard")[0]


def soft_aggregate(l, soft_decisions) -> np.ndarray:
    """Update LLRs from soft decisions: mean of tanh(l_q/2) * l(z ^ z_q)."""
    l, items = _as_items_batch(l, soft_decisions, np.float64)
    return _aggregate_batch(l, items, None, "soft")[0]


def logsum_aggregate(l, soft_decisions) -> np.ndarray:
    """Update LLRs with the exact pairwise rule: mean of boxplus(l_q, l(z ^ z_q))."""
    l, items = _as_items_batch(l, soft_decisions, np.float64)
    return _aggregate_batch(l, items, None, "logsum")[0]


# ---------------------------------------------------------------------------
# recursive decoding


@dataclass(frozen=True)
class DecoderConfig:
    """How to decode: algorithm kind, aggregation rule and iteration counts.

    kind "map" and "fht" require a single-leaf tree.  iters_by_depth gives
    the iteration count per recursion depth; the root defaults to n_max and
    every deeper node to a single pass.  Early exit stops the outer loop
    once the hard-decision codeword stops changing (compared across
    consecutive iterations, starting from the channel hard decision).
    """

    kind: str = "soft-subrpa"
    aggregation: str = "soft"
    n_max: int = 3
    early_exit: bool = True
    use_fht_leaves: bool = False
    iters_by_depth: tuple[int, ...] | None = None

    def iters_at(self, depth: int) -> int:
        if self.iters_by_depth is not None:
            if depth < len(self.iters_by_depth):
                return self.iters_by_depth[depth]
            return 1
        return self.n_max if depth == 0 else 1


@dataclass
class BatchResult:
    codewords: np.ndarray
    final_llrs: np.ndarray
    iterations: np.ndarray
    leaf_calls: np.ndarray


@dataclass
class DecodeResult:
    """Decoded codeword, its final LLRs and per-decode accounting."""

    codeword: np.ndarray
    final_llr: np.ndarray
    iterations_used: int
    leaf_map_calls: int
    info_bits: np.ndarray | None = None


def _check_weights(node: ProjNode, weights) -> np.ndarray | None:
    if weights is None:
        return None
    w = weights.get(node.path)
    if w is None:
        return None
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if w.shape[0] != len(node.subspaces):
        raise ValueError(f"weight vector at node {node.path} has wrong length")
    if abs(w.sum() - 1.0) > 1e-6 or w.min() < -1e-6 or w.max() > 1 + 1e-6:
        raise ValueError(f"weight vector at node {node.path} is off the simplex")
    return w


def _decode_leaf(l: np.ndarray, node: ProjNode, cfg: DecoderConfig, soft: bool):
    cache = _leaf_cache(node)
    if soft:
        return _soft_map_batch(l, cache["ct_t"], cache["gen_basis"], cache["rank"])
    if cfg.use_fht_leaves or cfg.kind == "fht":
        m_prime = int(np.log2(node.n))
        if node.rank != m_prime + 1:
            raise ValueError("FHT leaves require full first-order leaf codes")
        return _fht_batch(l).astype(np.float64)
    scores = l @ cache["ct_t"]
    return cache["codebook"][np.argmax(scores, axis=1)].astype(np.float64)


def _decode_node(l: np.ndarray, node: ProjNode, cfg: DecoderConfig, weights,
                 soft: bool, depth: int):
    """Returns (decision batch, per-sample leaf call counts).

    The decision is a soft LLR batch in soft mode and a hard 0/1 codeword
    batch (as float) in hard mode.
    """
    bsz = l.shape[0]
    if node.is_leaf:
        return _decode_leaf(l, node, cfg, soft), np.ones(bsz, dtype=np.int64)

    calls = np.zeros(bsz, dtype=np.int64)
    w = _check_weights(node, weights)
    mode = cfg.aggregation if soft else "hard"
    for _ in range(cfg.iters_at(depth)):
        items = []
        for z, child in zip(node.subspaces, node.children):
            lo, hi, _, _ = _pair_arrays(node.n, z)
            lq = llr_boxplus(l[:, lo], l[:, hi])
            dec, child_calls = _decode_node(lq, child, cfg, weights, soft, depth + 1)
            calls += child_calls
            items.append((z, dec if soft else dec))
        l = _aggregate_batch(l, items, w, mode)
    if soft:
        return l, calls
    return (l < 0).astype(np.float64), calls


def decode_batch(llrs, tree: ProjectionTree, cfg: DecoderConfig,
                 weights=None) -> BatchResult:
    """Decode a batch of LLR vectors; rows are independent codewords."""
    llrs = np.asarray(llrs, dtype=np.float64)
    if llrs.ndim == 1:
        llrs = llrs[None, :]
    bsz, n = llrs.shape
    if n != 1 << tree.m:
        raise ValueError("LLR length must match the code blocklength")
    root = tree.root
    soft = cfg.kind in ("soft-subrpa",)
    if cfg.kind not in ("map", "fht", "subrpa", "soft-subrpa"):
        raise ValueError(f"unknown decoder kind {cfg.kind!r}")
    if cfg.kind in ("map", "fht") and not root.is_leaf:
        raise ValueError(f"decoder kind {cfg.kind!r} requires a single-leaf tree")

    if root.is_leaf:
        if soft:
            llr_out = _decode_leaf(llrs, root, cfg, soft=True)
        else:
            hard = _decode_leaf(llrs, root, cfg, soft=False)
            llr_out = 1.0 - 2.0 * hard  # sign-compatible stand-in LLR
        return BatchResult(codewords=(llr_out < 0).astype(np.uint8),
                           final_llrs=llr_out,
                           iterations=np.ones(bsz, dtype=np.int64),
                           leaf_calls=np.ones(bsz, dtype=np.int64))

    cur = llrs.copy()
    prev_hard = cur < 0
    done = np.zeros(bsz, dtype=bool)
    iterations = np.zeros(bsz, dtype=np.int64)
    leaf_calls = np.zeros(bsz, dtype=np.int64)
    w = _check_weights(root, weights)
    mode = cfg.aggregation if soft else "hard"
    n_outer = cfg.iters_at(0)

    for it in range(n_outer):
        act = np.flatnonzero(~done)
        if act.size == 0:
            break
        la = cur[act]
        items = []
        calls = np.zeros(act.size, dtype=np.int64)
        for z, child in zip(root.subspaces, root.children):
            lo, hi, _, _ = _pair_arrays(root.n, z)
            lq = llr_boxplus(la[:, lo], la[:, hi])
            dec, child_calls = _decode_node(lq, child, cfg, weights, soft, 1)
            calls += child_calls
            items.append((z, dec))
        lnew = _aggregate_batch(la, items, w, mode)
        hard_new = lnew < 0
        cur[act] = lnew
        leaf_calls[act] += calls
        iterations[act] = it + 1
        if cfg.early_exit:
            stable = (hard_new == prev_hard[act]).all(axis=1)
            done[act[stable]] = True
        prev_hard[act] = hard_new

    return BatchResult(codewords=(cur < 0).astype(np.uint8), final_llrs=cur,
                       iterations=iterations, leaf_calls=leaf_calls)


def subrpa_decode(l, tree: ProjectionTree, n_max: int = 3, *,
                  early_exit: bool = True, use_fht_leaves: bool = False,
                  iters_by_depth=None) -> DecodeResult:
    """Recursive projection-aggregation decoding with hard leaf decisions."""
    cfg = DecoderConfig(kind="subrpa", n_max=n_max, early_exit=early_exit,
                        use_fht_leaves=use_fht_leaves,
                        iters_by_depth=None if iters_by_depth is None else tuple(iters_by_depth))
    res = decode_batch(np.asarray(l, dtype=np.float64)[None, :], tree, cfg)
    return DecodeResult(codeword=res.codewords[0], final_llr=res.final_llrs[0],
                        iterations_used=int(res.iterations[0]),
                        leaf_map_calls=int(res.leaf_calls[0]))


def soft_subrpa_decode(l, tree: ProjectionTree, n_max: int = 3, *,
                       aggregation: str = "soft", weights=None,
                       early_exit: bool = True,
                       iters_by_depth=None) -> DecodeResult:
    """Soft-decision recursive decoding: soft-MAP leaves, tanh-weighted aggregation.

    weights optionally maps node paths to per-subspace simplex vectors; the
    unweighted mean is the uniform special case.
    """
    if aggregation not in ("soft", "logsum"):
        raise ValueError(f"unknown aggregation {aggregation!r}")
    cfg = DecoderConfig(kind="soft-subrpa", aggregation=aggregation, n_max=n_max,
                        early_exit=early_exit,
                        iters_by_depth=None if iters_by_depth is None else tuple(iters_by_depth))
    res = decode_batch(np.asarray(l, dtype=np.float64)[None, :], tree, cfg, weights=weights)
    return DecodeResult(codeword=res.codewords[0], final_llr=res.final_llrs[0],
                        iterations_used=int(res.iterations[0]),
                        leaf_map_calls=int(res.leaf_calls[0]))


def recover_info_bits(codeword, spec):
    """Information bits of a codeword, or None when it is not in the code.

    A None result flags a residual decoding failure as opposed to decoding
    to a wrong codeword.
    """
    return gf2_solve(spec.generator, codeword)
