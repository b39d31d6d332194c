import math

import numpy as np
import pytest

from rmsub import construct, project
from rmsub.decode import DecoderConfig
from rmsub.project import build_u_and_codebook, coset_table_1d, project_binary, project_llr_1d
from rmsub.sim import (ChannelConfig, StopRule, awgn_llr, bsc_output, profile_csv,
                       results_csv, run_montecarlo, sigma_to_ebn0_db,
                       sigma_to_snr_db, snr_convert)


def map_tree(spec):
    u, cb = build_u_and_codebook(spec.generator)
    leaf = project.ProjNode(gen=spec.generator, n=spec.n, depth=0, path=(),
                            rank=spec.k, u=u, codebook=cb)
    return project.ProjectionTree(m=spec.m, r=spec.r, k=spec.k, root=leaf)


def test_snr_convert_zero_db():
    assert snr_convert("snr", 0.0, 64, 14) == pytest.approx(1 / math.sqrt(2))


def test_snr_and_ebn0_coincide_at_rate_one():
    assert snr_convert("snr", 2.5, 32, 32) == pytest.approx(
        snr_convert("ebn0", 2.5, 32, 32))


def test_ebn0_formula_64_14():
    sigma = snr_convert("ebn0", 3.0, 64, 14)
    assert sigma == pytest.approx(math.sqrt(64 / (2 * 14 * 10 ** 0.3)))
    assert sigma_to_ebn0_db(sigma, 64, 14) == pytest.approx(3.0)
    assert sigma_to_snr_db(snr_convert("snr", 3.0, 64, 14)) == pytest.approx(3.0)


def test_awgn_llr_noiseless_limit(rng):
    c = rng.integers(0, 2, 64).astype(np.uint8)
    l = awgn_llr(c, 1e-4, rng)
    assert np.array_equal((l < 0).astype(np.uint8), c)


def test_awgn_llr_mean(rng):
    sigma = 0.8
    c = np.zeros(100_000, dtype=np.uint8)
    l = awgn_llr(c, sigma, rng)
    expect = 2.0 / sigma ** 2
    tol = 3 * (2.0 / sigma) / math.sqrt(l.size)
    assert abs(l.mean() - expect) < tol


def test_awgn_llr_seeded_reproducible():
    c = np.zeros(32, dtype=np.uint8)
    a = awgn_llr(c, 0.5, np.random.default_rng(9))
    b = awgn_llr(c, 0.5, np.random.default_rng(9))
    assert np.array_equal(a, b)


def test_bsc_output_low_p_identity(rng):
    c = rng.integers(0, 2, 64).astype(np.uint8)
    out, llr = bsc_output(c, 1e-12, rng)
    assert np.array_equal(out, c)
    assert np.all(np.sign(llr) == 1 - 2 * out.astype(float))


def test_bsc_flip_rate(rng):
    p = 0.11
    c = np.zeros(200_000, dtype=np.uint8)
    out, _ = bsc_output(c, p, rng)
    flips = int(out.sum())
    sigma = math.sqrt(c.size * p * (1 - p))
    assert abs(flips - p * c.size) < 3 * sigma


def test_bsc_llr_projection_matches_hard(rng):
    c = rng.integers(0, 2, 16).astype(np.uint8)
    out, llr = bsc_output(c, 0.2, rng)
    table = coset_table_1d(4, 5)
    assert np.array_equal((project_llr_1d(llr, table) < 0).astype(np.uint8),
                          project_binary(out, table))


def test_channel_config_validation():
    with pytest.raises(ValueError):
        ChannelConfig(kind="awgn", sigma=-1.0)
    with pytest.raises(ValueError):
        ChannelConfig(kind="bsc", p=0.7)
    with pytest.raises(ValueError):
        ChannelConfig(kind="laplace")


def test_map_rm41_high_snr_error_free():
    spec = construct.subcode_generator(4, 1, 5, range(4))  # exactly RM(4,1)
    tree = map_tree(spec)
    stop = StopRule(min_trials=10_000, min_errors=1, max_trials=10_000)
    res = run_montecarlo(spec, tree, DecoderConfig(kind="map"), [10.0],
                         metric="ebn0", stop=stop, seed=3)
    assert res.points[0].block_errors == 0
    assert res.points[0].trials == 10_000


def test_montecarlo_reproducible(small_spec, small_tree):
    cfg = DecoderConfig(kind="soft-subrpa", n_max=2)
    stop = StopRule(min_trials=2000, min_errors=10, max_trials=4000)
    a = run_montecarlo(small_spec, small_tree, cfg, [2.0], stop=stop, seed=5)
    b = run_montecarlo(small_spec, small_tree, cfg, [2.0], stop=stop, seed=5)
    pa, pb = a.points[0], b.points[0]
    assert (pa.trials, pa.block_errors) == (pb.trials, pb.block_errors)
    assert np.array_equal(pa.bit_errors, pb.bit_errors)
    c = run_montecarlo(small_spec, small_tree, cfg, [2.0], stop=stop, seed=6)
    assert c.points[0].block_errors != pa.block_errors or not np.array_equal(
        c.points[0].bit_errors, pa.bit_errors)


def test_montecarlo_parallel_equals_serial(small_spec, small_tree):
    cfg = DecoderConfig(kind="soft-subrpa", n_max=2)
    stop = StopRule(min_trials=1500, min_errors=5, max_trials=3000, chunk_size=128)
    serial = run_montecarlo(small_spec, small_tree, cfg, [1.0, 3.0], stop=stop,
                            seed=17, workers=1)
    parallel = run_montecarlo(small_spec, small_tree, cfg, [1.0, 3.0], stop=stop,
                              seed=17, workers=2)
    for ps, pp in zip(serial.points, parallel.points):
        assert ps.trials == pp.trials
        assert ps.block_errors == pp.block_errors
        assert np.array_equal(ps.bit_errors, pp.bit_errors)
        assert ps.leaf_calls == pp.leaf_calls


def test_montecarlo_monotone_bler(small_spec, small_tree):
    cfg = DecoderConfig(kind="soft-subrpa", n_max=3)
    stop = StopRule(min_trials=4000, min_errors=40, max_trials=20_000)
    res = run_montecarlo(small_spec, small_tree, cfg, [0.0, 2.0, 4.0],
                         metric="ebn0", stop=stop, seed=2)
    blers = [p.bler for p in res.points]
    for lo, hi in zip(blers[1:], blers):
        # allow 2-sigma Monte-Carlo slack on the ordering
        n = stop.min_trials
        slack = 2 * math.sqrt(max(hi, 1e-9) / n)
        assert lo <= hi + slack


def test_stop_rule_semantics(small_spec, small_tree):
    cfg = DecoderConfig(kind="soft-subrpa", n_max=2)
    # high SNR: errors never reach min_errors, so the cap binds
    stop = StopRule(min_trials=1000, min_errors=10 ** 9, max_trials=2000,
                    chunk_size=100, wave_chunks=2)
    res = run_montecarlo(small_spec, small_tree, cfg, [8.0], stop=stop, seed=1)
    assert res.points[0].trials == 2000


def test_bit_error_counts_consistent(small_spec, small_tree):
    cfg = DecoderConfig(kind="soft-subrpa", n_max=2)
    stop = StopRule(min_trials=3000, min_errors=30, max_trials=6000)
    res = run_montecarlo(small_spec, small_tree, cfg, [1.0], stop=stop, seed=4)
    p = res.points[0]
    total_bits = int(p.bit_errors.sum())
    assert p.ber == pytest.approx(total_bits / (p.trials * small_spec.n))
    assert total_bits <= p.block_errors * small_spec.n
    assert p.block_errors <= total_bits


def test_csv_formats(small_spec, small_tree):
    cfg = DecoderConfig(kind="soft-subrpa", n_max=2)
    stop = StopRule(min_trials=500, min_errors=5, max_trials=1000)
    res = run_montecarlo(small_spec, small_tree, cfg, [2.0], stop=stop, seed=8)
    table = results_csv(res)
    header = table.splitlines()[0]
    assert header == "snr_db,ebn0_db,trials,block_errors,bler,ber,seconds,leaf_calls"
    prof = profile_csv(res)
    assert prof.splitlines()[0] == "position,errors,trials"
    assert len(prof.splitlines()) == 1 + small_spec.n


def test_bsc_channel_runs(small_spec, small_tree):
    cfg = DecoderConfig(kind="subrpa", n_max=2)
    stop = StopRule(min_trials=500, min_errors=5, max_trials=1000)
    res = run_montecarlo(small_spec, small_tree, cfg, [4.0], stop=stop, seed=8,
                         channel_kind="bsc")
    assert res.points[0].trials >= 500


def test_map_is_optimal_at_desk_scale(small_spec, small_tree):
    """No decoder beats exhaustive MAP beyond Monte-Carlo noise."""
    mtree = map_tree(small_spec)
    stop = StopRule(min_trials=20_000, min_errors=100, max_trials=40_000)
    grid = [2.5]
    r_map = run_montecarlo(small_spec, mtree, DecoderConfig(kind="map"), grid,
                           metric="ebn0", stop=stop, seed=21)
    p_map = r_map.points[0]
    for kind in ("subrpa", "soft-subrpa"):
        r = run_montecarlo(small_spec, small_tree, DecoderConfig(kind=kind, n_max=3),
                           grid, metric="ebn0", stop=stop, seed=21)
        p = r.points[0]
        sigma = math.sqrt(p_map.bler * (1 - p_map.bler) / p_map.trials
                          + p.bler * (1 - p.bler) / p.trials)
        assert p.bler >= p_map.bler - 2 * sigma
