"""Reproducible microbenchmarks: median-of-repetitions timing with warm-up.

Every report embeds a machine descriptor and the pinned thread count, so
numbers are never silently compared across hosts or threading setups. The
single-threaded configuration is the reference for speed-up ratios.
"""

from __future__ import annotations

import platform
import time
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import InvalidInput, NoQueries
from .hashing import Hasher
from .index import FlatCosineIndex, FlatHammingIndex, query_top2
from .model import FeatureVector


@dataclass(frozen=True)
class BenchReport:
    operation: str
    candidates: int
    bits_or_dim: int
    wall_time_per_query_us: float  # median over all repetitions
    throughput_hz: float
    repetitions: int
    threads: int
    machine: str

    def to_dict(self) -> dict:
        return asdict(self)


def machine_descriptor() -> str:
    return (
        f"{platform.machine()}/{platform.system()} "
        f"python-{platform.python_version()} numpy-{np.__version__}"
    )


def _median_report(operation: str, candidates: int, bits_or_dim: int,
                   samples_us: np.ndarray, repetitions: int,
                   threads: int) -> BenchReport:
    median_us = float(np.median(samples_us))
    return BenchReport(
        operation=operation,
        candidates=candidates,
        bits_or_dim=bits_or_dim,
        wall_time_per_query_us=median_us,
        throughput_hz=1e6 / median_us if median_us > 0 else float("inf"),
        repetitions=repetitions,
        threads=threads,
        machine=machine_descriptor(),
    )


def bench_query(index, queries: Sequence, repetitions: int = 30,
                threads: int = 1) -> BenchReport:
    """Median per-query scan time over ``repetitions`` passes (plus a
    discarded warm-up pass). Queries must match the index backend."""
    if not queries:
        raise NoQueries("no queries to benchmark")
    if repetitions < 30:
        raise InvalidInput(f"repetitions must be >= 30, got {repetitions}")

    if isinstance(index, FlatCosineIndex):
        operation, size = "query-cosine", index.dim
    elif isinstance(index, FlatHammingIndex):
        operation, size = "query-hamming", index.length_bits
    else:
        raise TypeError(f"unsupported index type: {type(index).__name__}")

    samples = np.empty(repetitions * len(queries))
    with threadpool_limits(limits=threads):
        for q in queries:  # warm-up
            query_top2(index, q)
        k = 0
        for _ in range(repetitions):
            for q in queries:
                t0 = time.perf_counter_ns()
                query_top2(index, q)
                samples[k] = (time.perf_counter_ns() - t0) / 1e3
                k += 1
    return _median_report(operation, len(index), size, samples, repetitions,
                          threads)


def bench_hashing(hasher: Hasher, vectors: Sequence[FeatureVector],
                  repetitions: int = 10, threads: int = 1) -> BenchReport:
    """Median per-vector hashing time; each repetition hashes the whole batch."""
    if not vectors:
        raise NoQueries("no vectors to benchmark")
    if repetitions < 10:
        raise InvalidInput(f"repetitions must be >= 10, got {repetitions}")
    matrix = np.stack([v.values for v in vectors])
    samples = np.empty(repetitions)
    with threadpool_limits(limits=threads):
        hasher.hash_batch(matrix)  # warm-up
        for r in range(repetitions):
            t0 = time.perf_counter_ns()
            hasher.hash_batch(matrix)
            samples[r] = (time.perf_counter_ns() - t0) / 1e3 / len(vectors)
    return _median_report("hashing", len(vectors), hasher.bits, samples,
                          repetitions, threads)


def random_signature_words(count: int, bits: int, seed: int) -> np.ndarray:
    """Uniform random packed signature words for scan benchmarks whose timing
    does not depend on signature content."""
    rng = np.random.default_rng(seed)
    return rng.integers(0, 1 << 64, size=(count, bits // 64), dtype=np.uint64)
