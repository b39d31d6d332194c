"""Channels, SNR bookkeeping and the Monte-Carlo BLER/BER harness.

Every trial draws its randomness from a counter-based Philox stream keyed
by (seed, trial index), so the simulated noise realizations depend only on
the seed and never on batching or worker count.  Trials are decoded in
fixed-size chunks and chunks are dispatched in fixed-size waves; the stop
rule is evaluated between waves.  Counts are integers merged by addition,
which makes multi-process runs bit-identical to serial ones.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import multiprocessing as mp

import numpy as np

from .construct import CodeSpec
from .decode import DecoderConfig, decode_batch
from .project import ProjectionTree

__all__ = [
    "ChannelConfig",
    "StopRule",
    "SimPoint",
    "SimResult",
    "snr_convert",
    "sigma_to_snr_db",
    "sigma_to_ebn0_db",
    "awgn_llr",
    "bsc_output",
    "run_montecarlo",
    "results_csv",
    "profile_csv",
]


@dataclass(frozen=True)
class ChannelConfig:
    """Channel model: AWGN with noise deviation sigma, or BSC with crossover p."""

    kind: str = "awgn"
    sigma: float | None = None
    p: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("awgn", "bsc"):
            raise ValueError(f"unknown channel kind {self.kind!r}")
        if self.kind == "awgn" and (self.sigma is None or self.sigma <= 0):
            raise ValueError("AWGN channel needs sigma > 0")
        if self.kind == "bsc" and not (self.p is not None and 0 < self.p < 0.5):
            raise ValueError("BSC channel needs 0 < p < 0.5")


def snr_convert(kind: str, value_db: float, n: int, k: int) -> float:
    """Noise deviation sigma for a target SNR or Eb/N0 in dB.

    SNR := 1/(2 sigma^2) and Eb/N0 := n/(2 k sigma^2).
    """
    if n <= 0 or k <= 0:
        raise ValueError("n and k must be positive")
    lin = 10.0 ** (value_db / 10.0)
    if kind == "snr":
        return math.sqrt(1.0 / (2.0 * lin))
    if kind == "ebn0":
        return math.sqrt(n / (2.0 * k * lin))
    raise ValueError(f"unknown SNR kind {kind!r}")


def sigma_to_snr_db(sigma: float) -> float:
    return 10.0 * math.log10(1.0 / (2.0 * sigma * sigma))


def sigma_to_ebn0_db(sigma: float, n: int, k: int) -> float:
    return 10.0 * math.log10(n / (2.0 * k * sigma * sigma))


def awgn_llr(codeword, sigma: float, rng) -> np.ndarray:
    """BPSK-transmit a codeword over AWGN and return the channel LLRs 2y/sigma^2.

    Accepts a single codeword or a batch of rows.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    c = np.asarray(codeword).astype(np.float64)
    s = 1.0 - 2.0 * c
    y = s + sigma * rng.standard_normal(c.shape)
    return 2.0 * y / (sigma * sigma)


def bsc_output(codeword, p: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Flip codeword bits iid with probability p.

    Returns the hard output together with its LLR form +-ln((1-p)/p) so the
    soft decoders run on the BSC as well.
    """
    if not 0 < p < 0.5:
        raise ValueError("need 0 < p < 0.5")
    c = np.asarray(codeword).astype(np.uint8)
    flips = rng.random(c.shape) < p
    out = c ^ flips.astype(np.uint8)
    mag = math.log((1.0 - p) / p)
    return out, (1.0 - 2.0 * out.astype(np.float64)) * mag


@dataclass(frozen=True)
class StopRule:
    """Stop a point after min_trials and min_errors, capped at max_trials."""

    min_trials: int = 100_000
    min_errors: int = 100
    max_trials: int = 1_000_000
    chunk_size: int = 256
    wave_chunks: int = 4

    def done(self, trials: int, errors: int) -> bool:
        if trials >= self.max_trials:
            return True
        return trials >= self.min_trials and errors >= self.min_errors


@dataclass
class SimPoint:
    """Monte-Carlo estimate at one operating point."""

    snr_db: float
    ebn0_db: float
    sigma: float
    trials: int
    block_errors: int
    bit_errors: np.ndarray
    seconds: float
    leaf_calls: int

    @property
    def bler(self) -> float:
        return self.block_errors / self.trials

    @property
    def ber(self) -> float:
        return int(self.bit_errors.sum()) / (self.trials * self.bit_errors.shape[0])


@dataclass
class SimResult:
    n: int
    k: int
    metric: str
    points: list[SimPoint] = field(default_factory=list)
    meta: dict = field(default_factory=dict)


# Worker-process state, installed once per process by _worker_init.
_WORKER: dict = {}


def _worker_init(payload):
    _WORKER["payload"] = payload


def _trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, 0, trial]))


def _run_chunk_payload(payload, start: int, count: int):
    (spec, tree, cfg, weights, channel, seed) = payload
    k, n = spec.k, spec.n
    u = np.empty((count, k), dtype=np.uint8)
    noise = np.empty((count, n))
    for t in range(count):
        rng = _trial_rng(seed, start + t)
        u[t] = rng.integers(0, 2, size=k, dtype=np.uint8)
        if channel.kind == "awgn":
            noise[t] = rng.standard_normal(n)
        else:
            noise[t] = rng.random(n)
    c = spec.encode(u)
    if channel.kind == "awgn":
        sigma = channel.sigma
        y = (1.0 - 2.0 * c.astype(np.float64)) + sigma * noise
        llrs = 2.0 * y / (sigma * sigma)
    else:
        out = c ^ (noise < channel.p).astype(np.uint8)
        mag = math.log((1.0 - channel.p) / channel.p)
        llrs = (1.0 - 2.0 * out.astype(np.float64)) * mag
    res = decode_batch(llrs, tree, cfg, weights=weights)
    bad = res.codewords != c
    block_errors = int(bad.any(axis=1).sum())
    bit_errors = bad.sum(axis=0).astype(np.int64)
    return count, block_errors, bit_errors, int(res.leaf_calls.sum())


def _run_chunk_worker(args):
    start, count = args
    return _run_chunk_payload(_WORKER["payload"], start, count)


def run_montecarlo(spec: CodeSpec, tree: ProjectionTree, cfg: DecoderConfig,
                   grid_db, metric: str = "ebn0", stop: StopRule | None = None,
                   seed: int = 0, workers: int = 1, weights=None,
                   channel_kind: str = "awgn") -> SimResult:
    """Estimate BLER/BER over a dB grid with random codewords each trial.

    Per-position bit error counts are recorded for the bit-error profile.
    With workers > 1 the chunks of each wave are decoded by a process pool;
    results are identical to the serial run.
    """
    if metric not in ("snr", "ebn0"):
        raise ValueError(f"unknown metric {metric!r}")
    stop = stop or StopRule()
    result = SimResult(n=spec.n, k=spec.k, metric=metric,
                       meta={"seed": seed, "decoder": cfg.kind,
                             "aggregation": cfg.aggregation, "n_max": cfg.n_max,
                             "channel": channel_kind})
    for value_db in grid_db:
        sigma = snr_convert(metric, float(value_db), spec.n, spec.k)
        if channel_kind == "awgn":
            channel = ChannelConfig(kind="awgn", sigma=sigma, seed=seed)
        else:
            # BSC crossover matched to hard-decision BPSK at the same sigma
            p = 0.5 * math.erfc(1.0 / (sigma * math.sqrt(2.0)))
            channel = ChannelConfig(kind="bsc", p=p, seed=seed)
        payload = (spec, tree, cfg, weights, channel, seed)
        t0 = time.perf_counter()
        trials = block_errors = leaf_calls = 0
        bit_errors = np.zeros(spec.n, dtype=np.int64)
        chunk_index = 0

        def waves(mapper):
            nonlocal trials, block_errors, leaf_calls, bit_errors, chunk_index
            while not stop.done(trials, block_errors):
                tasks = []
                for _ in range(stop.wave_chunks):
                    start = chunk_index * stop.chunk_size
                    if start >= stop.max_trials:
                        break
                    count = min(stop.chunk_size, stop.max_trials - start)
                    tasks.append((start, count))
                    chunk_index += 1
                if not tasks:
                    break
                for cnt, blk, bits, calls in mapper(tasks):
                    trials += cnt
                    block_errors += blk
                    bit_errors += bits
                    leaf_calls += calls

        if workers > 1:
            with ProcessPoolExecutor(
                    max_workers=workers, mp_context=mp.get_context("fork"),
                    initializer=_worker_init, initargs=(payload,)) as pool:
                waves(lambda tasks: list(pool.map(_run_chunk_worker, tasks)))
        else:
            waves(lambda tasks: [_run_chunk_payload(payload, s, c) for s, c in tasks])

        result.points.append(SimPoint(
            snr_db=sigma_to_snr_db(sigma),
            ebn0_db=sigma_to_ebn0_db(sigma, spec.n, spec.k),
            sigma=sigma, trials=trials, block_errors=block_errors,
            bit_errors=bit_errors, seconds=time.perf_counter() - t0,
            leaf_calls=leaf_calls))
    return result


def results_csv(result: SimResult) -> str:
    lines = ["snr_db,ebn0_db,trials,block_errors,bler,ber,seconds,leaf_calls"]
    for p in result.points:
        lines.append(f"{p.snr_db:.4f},{p.ebn0_db:.4f},{p.trials},{p.block_errors},"
                     f"{p.bler:.6e},{p.ber:.6e},{p.seconds:.3f},{p.leaf_calls}")
    return "\n".join(lines) + "\n"


def profile_csv(result: SimResult) -> str:
    """Per-position bit error counts, one block per simulated point."""
    lines = ["position,errors,trials"]
    for p in result.points:
        for pos, cnt in enumerate(p.bit_errors.tolist()):
            lines.append(f"{pos},{cnt},{p.trials}")
    return "\n".join(lines) + "\n"
