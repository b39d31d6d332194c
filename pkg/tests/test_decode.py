import itertools

import numpy as np
import pytest

from rmsub import construct, project
from rmsub.decode import (DecoderConfig, decode_batch, fht_decode, hard_aggregate,
                          logsum_aggregate, map_decode, recover_info_bits,
                          soft_aggregate, soft_map, soft_subrpa_decode,
                          subrpa_decode)
from rmsub.gf2 import gf2_matmul
from rmsub.project import (build_projection_tree, build_u_and_codebook,
                           coset_table_1d, llr_boxplus)


def single_leaf_tree(spec):
    u, cb = build_u_and_codebook(spec.generator)
    leaf = project.ProjNode(gen=spec.generator, n=spec.n, depth=0, path=(),
                            rank=spec.k, u=u, codebook=cb)
    return project.ProjectionTree(m=spec.m, r=spec.r, k=spec.k, root=leaf)


# ---------------------------------------------------------------------------
# map_decode


def test_map_two_word_example():
    cb = np.array([[0, 0], [1, 1]], dtype=np.uint8)
    assert np.array_equal(map_decode([3.0, 1.0], cb), [0, 0])


def test_map_noiseless_recovery():
    _, cb = build_u_and_codebook(construct.rm_generator(3, 1))
    for c in cb:
        l = 9.0 * (1.0 - 2.0 * c.astype(float))
        assert np.array_equal(map_decode(l, cb), c)


def test_map_matches_distance_oracle(g15_tree):
    leaf = next(l for l in g15_tree.leaves() if l.rank == 4)
    rng = np.random.default_rng(0)
    sigma = 0.9
    signals = 1.0 - 2.0 * leaf.codebook.astype(float)
    for _ in range(1000):
        c = leaf.codebook[rng.integers(len(leaf.codebook))]
        y = (1.0 - 2.0 * c) + sigma * rng.standard_normal(leaf.n)
        got = map_decode(2.0 * y / sigma ** 2, leaf.codebook)
        best = np.argmin(((y[None, :] - signals) ** 2).sum(axis=1))
        assert np.array_equal(got, leaf.codebook[best])


def test_map_tie_breaks_to_first_row():
    cb = np.array([[0, 0], [1, 1]], dtype=np.uint8)
    assert np.array_equal(map_decode([0.0, 0.0], cb), [0, 0])


# ---------------------------------------------------------------------------
# fht_decode


def test_fht_exhaustive_small():
    gen = construct.rm_generator(2, 1)
    _, cb = build_u_and_codebook(gen)
    for c in cb:
        l = 7.0 * (1.0 - 2.0 * c.astype(float))
        assert np.array_equal(fht_decode(l, rank=3), c)


def test_fht_matches_map_random():
    gen = construct.rm_generator(4, 1)
    _, cb = build_u_and_codebook(gen)
    rng = np.random.default_rng(1)
    for _ in range(10_000):
        l = rng.normal(0, 2, 16)
        assert np.array_equal(fht_decode(l, rank=5), map_decode(l, cb))


def test_fht_all_zero_input_deterministic():
    out = fht_decode(np.zeros(8), rank=4)
    assert np.array_equal(out, np.zeros(8, dtype=np.uint8))


def test_fht_rejects_subcode_rank():
    with pytest.raises(ValueError):
        fht_decode(np.zeros(8), rank=3)


# ---------------------------------------------------------------------------
# soft_map


def test_soft_map_repetition_leaf():
    g = np.ones((1, 4), dtype=np.uint8)
    u, cb = build_u_and_codebook(g)
    out = soft_map(np.array([2.0, 2.0, 2.0, 2.0]), g, cb, u)
    assert np.allclose(out, [16.0, 16.0, 16.0, 16.0])


def test_soft_map_min_sum_combination():
    # two information rows; column with both set combines sign x min
    g = np.array([[1, 1, 0], [1, 0, 1]], dtype=np.uint8)
    u, cb = build_u_and_codebook(g)
    # choose lp so that l_inf = (2, -3): solve via the score construction
    out = soft_map(np.array([0.0, 0.0, 0.0]), g, cb, u)
    assert np.allclose(out, 0.0)  # zero LLRs carry no information
    # direct check of the combination rule on a hand-built l_inf
    from rmsub.decode import _soft_map_batch

    ct_t = (1.0 - 2.0 * cb.astype(float)).T
    lp = np.array([[0.5, 2.0, -3.0]])
    got = _soft_map_batch(lp, ct_t, g.astype(float), 2)[0]
    # recompute the algorithm by hand
    scores = lp[0] @ (1.0 - 2.0 * cb.astype(float)).T
    linf = np.zeros(2)
    for j, col in enumerate(np.flatnonzero(u.any(axis=0))):
        linf[j] = scores[u[:, col] == 0].max() - scores[u[:, col] == 1].max()
    expect = np.zeros(3)
    for pos in range(3):
        contrib = linf[g[:, pos] == 1]
        contrib = contrib[contrib != 0]
        if contrib.size:
            expect[pos] = np.prod(np.sign(contrib)) * np.abs(contrib).min()
    assert np.allclose(got, expect, atol=1e-12)


def test_min_sum_sign_and_magnitude():
    g = np.array([[1], [1]], dtype=np.uint8)
    from rmsub.decode import _soft_map_batch

    # l_inf = (2, -3) on a single column with both rows set -> -2
    l_basis = np.array([[2.0, -3.0]])
    v = l_basis[:, :, None] * g.astype(float)[None, :, :]
    absv = np.abs(v)
    absv[v == 0] = np.inf
    got = (1 - 2 * ((v < 0).sum(axis=1) & 1)) * absv.min(axis=1)
    assert got[0, 0] == -2.0


def test_soft_map_noiseless_signs_all_leaves(g15_tree):
    for leaf in g15_tree.leaves():
        for c in leaf.codebook:
            lp = 25.0 * (1.0 - 2.0 * c.astype(float))
            out = soft_map(lp, leaf.gen, leaf.codebook, leaf.u)
            assert np.array_equal((out < 0).astype(np.uint8), c)


# ---------------------------------------------------------------------------
# aggregation


def test_hard_aggregate_single_projection():
    table = coset_table_1d(3, 5)
    l = np.arange(1.0, 9.0)
    zero_dec = np.zeros(4)
    out = hard_aggregate(l, [(5, zero_dec)])
    partner = np.arange(8) ^ 5
    assert np.allclose(out, l[partner])
    one_dec = np.ones(4)
    out = hard_aggregate(l, [(5, one_dec)])
    assert np.allclose(out, -l[partner])


def test_soft_aggregate_zero_information():
    l = np.linspace(-3, 3, 8)
    out = soft_aggregate(l, [(1, np.zeros(4)), (2, np.zeros(4))])
    assert np.allclose(out, 0.0)


def test_soft_aggregate_saturated():
    l = np.linspace(-3, 3, 8)
    out = soft_aggregate(l, [(3, np.full(4, 60.0))])
    partner = np.arange(8) ^ 3
    assert np.allclose(out, l[partner], atol=1e-12)


def test_soft_aggregate_matches_naive_oracle(rng):
    n, q = 16, 5
    l = rng.normal(0, 2, n)
    subspaces = [1, 2, 7, 9, 14]
    decs = [rng.normal(0, 2, n // 2) for _ in subspaces]
    got = soft_aggregate(l, list(zip(subspaces, decs)))
    want = np.zeros(n)
    for z_idx in range(n):
        acc = 0.0
        for (z, dec) in zip(subspaces, decs):
            table = coset_table_1d(4, z)
            coset_idx = next(i for i, c in enumerate(table.cosets) if z_idx in c)
            acc += np.tanh(dec[coset_idx] / 2.0) * l[z_idx ^ z]
        want[z_idx] = acc / len(subspaces)
    assert np.allclose(got, want, atol=1e-12)


def test_hard_soft_agreement_at_saturation(rng):
    n = 16
    l = rng.normal(0, 2, n)
    subspaces = [1, 4, 11]
    hards = [rng.integers(0, 2, n // 2).astype(np.uint8) for _ in subspaces]
    soft_decs = [50.0 * (1.0 - 2.0 * h.astype(float)) for h in hards]
    a = hard_aggregate(l, list(zip(subspaces, hards)))
    b = soft_aggregate(l, list(zip(subspaces, soft_decs)))
    assert np.allclose(a, b, atol=1e-6)


def test_logsum_terms():
    l = np.zeros(2)
    out = logsum_aggregate(l, [(1, np.zeros(1))])
    assert np.allclose(out, 0.0)
    # boxplus(5, 5) appears per coordinate when both inputs are 5
    l = np.array([5.0, 5.0])
    out = logsum_aggregate(l, [(1, np.array([5.0]))])
    assert out[0] == pytest.approx(float(llr_boxplus(5.0, 5.0)), abs=1e-12)
    assert out[0] == pytest.approx(4.3069, abs=1e-3)


# ---------------------------------------------------------------------------
# recursive decoders


def all_codewords(spec):
    for bits in itertools.product([0, 1], repeat=spec.k):
        yield np.array(bits, dtype=np.uint8)


def test_subrpa_noiseless_recovery_sampled(small_spec, small_tree, rng):
    for _ in range(50):
        u = rng.integers(0, 2, small_spec.k, dtype=np.uint8)
        c = small_spec.encode(u)
        l = 25.0 * (1.0 - 2.0 * c.astype(float))
        assert np.array_equal(subrpa_decode(l, small_tree).codeword, c)
        assert np.array_equal(soft_subrpa_decode(l, small_tree).codeword, c)


def test_leaf_call_accounting(small_spec, small_tree, rng):
    l = rng.normal(0, 1, small_spec.n)
    res = subrpa_decode(l, small_tree, n_max=3, early_exit=False)
    assert res.leaf_map_calls == 3 * 15
    assert res.iterations_used == 3
    res = soft_subrpa_decode(l, small_tree, n_max=2, early_exit=False)
    assert res.leaf_map_calls == 2 * 15


def test_leaf_call_accounting_pruned(small_spec, rng):
    from rmsub.prune import plan_minrank

    full = build_projection_tree(small_spec, "full")
    tree = build_projection_tree(small_spec, plan_minrank(full, 4))
    l = rng.normal(0, 1, small_spec.n)
    res = subrpa_decode(l, tree, n_max=3, early_exit=False)
    assert res.leaf_map_calls == 3 * 4


def test_early_exit_stops_on_stable_decision(small_spec, small_tree):
    c = small_spec.encode(np.zeros(small_spec.k, dtype=np.uint8))
    l = 25.0 * (1.0 - 2.0 * c.astype(float))
    res = subrpa_decode(l, small_tree, n_max=3)
    assert res.iterations_used == 1
    assert res.leaf_map_calls == 15


def test_single_leaf_tree_equals_map(small_spec, rng):
    tree = single_leaf_tree(small_spec)
    u, cb = build_u_and_codebook(small_spec.generator)
    for _ in range(25):
        l = rng.normal(0, 2, small_spec.n)
        res = subrpa_decode(l, tree)
        assert np.array_equal(res.codeword, map_decode(l, cb))
        soft = soft_subrpa_decode(l, tree)
        sm = soft_map(l, small_spec.generator, cb, u)
        assert np.array_equal(soft.codeword, (sm < 0).astype(np.uint8))
        assert np.allclose(soft.final_llr, sm, atol=1e-10)


def test_remark2_fht_leaves_match_map(rng):
    spec = construct.subcode_generator(4, 2, 11, range(6))  # full RM(4,2)
    tree = build_projection_tree(spec, "full")
    assert all(leaf.rank == 4 for leaf in tree.leaves())
    for _ in range(25):
        l = rng.normal(0, 1.5, 16)
        a = subrpa_decode(l, tree, use_fht_leaves=False)
        b = subrpa_decode(l, tree, use_fht_leaves=True)
        assert np.array_equal(a.codeword, b.codeword)


def test_fht_leaves_rejected_for_subcode(small_spec, small_tree, rng):
    l = rng.normal(0, 1, small_spec.n)
    with pytest.raises(ValueError):
        subrpa_decode(l, small_tree, use_fht_leaves=True)


def test_uniform_weights_reproduce_unweighted(small_spec, small_tree, rng):
    q = len(small_tree.root.subspaces)
    weights = {(): np.full(q, 1.0 / q)}
    for _ in range(10):
        l = rng.normal(0, 1.5, small_spec.n)
        a = soft_subrpa_decode(l, small_tree)
        b = soft_subrpa_decode(l, small_tree, weights=weights)
        assert np.array_equal(a.codeword, b.codeword)
        assert np.array_equal(a.final_llr, b.final_llr)


def test_weights_off_simplex_rejected(small_spec, small_tree):
    q = len(small_tree.root.subspaces)
    weights = {(): np.full(q, 2.0 / q)}
    with pytest.raises(ValueError):
        soft_subrpa_decode(np.zeros(small_spec.n), small_tree, weights=weights)


def test_codeword_sign_invariant(small_spec, small_tree, rng):
    for _ in range(10):
        l = rng.normal(0, 1, small_spec.n)
        res = soft_subrpa_decode(l, small_tree)
        assert np.array_equal(res.codeword, (res.final_llr < 0).astype(np.uint8))


def test_logsum_aggregation_decodes(small_spec, small_tree, rng):
    errors = 0
    for _ in range(30):
        u = rng.integers(0, 2, small_spec.k, dtype=np.uint8)
        c = small_spec.encode(u)
        y = (1.0 - 2.0 * c) + 0.6 * rng.standard_normal(small_spec.n)
        l = 2.0 * y / 0.36
        res = soft_subrpa_decode(l, small_tree, aggregation="logsum")
        errors += int(not np.array_equal(res.codeword, c))
    assert errors <= 5


def test_batch_matches_single(small_spec, small_tree, rng):
    # rows decode independently; batched and looped runs agree to roundoff
    cfg = DecoderConfig(kind="soft-subrpa", n_max=3)
    llrs = rng.normal(0, 1.5, (17, small_spec.n))
    batch = decode_batch(llrs, small_tree, cfg)
    for i in range(llrs.shape[0]):
        res = soft_subrpa_decode(llrs[i], small_tree)
        assert np.array_equal(res.codeword, batch.codewords[i])
        assert np.allclose(res.final_llr, batch.final_llrs[i], atol=1e-10)
        assert res.leaf_map_calls == batch.leaf_calls[i]


def test_recover_info_bits_roundtrip(small_spec, rng):
    for _ in range(20):
        u = rng.integers(0, 2, small_spec.k, dtype=np.uint8)
        c = small_spec.encode(u)
        assert np.array_equal(recover_info_bits(c, small_spec), u)
    zero = np.zeros(small_spec.n, dtype=np.uint8)
    assert np.array_equal(recover_info_bits(zero, small_spec),
                          np.zeros(small_spec.k, dtype=np.uint8))


def test_recover_info_bits_flags_noncodeword():
    spec = construct.subcode_generator(4, 2, 11, range(6))  # RM(4,2), d_min = 4
    rng = np.random.default_rng(5)
    for _ in range(20):
        u = rng.integers(0, 2, spec.k, dtype=np.uint8)
        c = spec.encode(u)
        flip = rng.integers(spec.n)
        c2 = c.copy()
        c2[flip] ^= 1
        assert recover_info_bits(c2, spec) is None
