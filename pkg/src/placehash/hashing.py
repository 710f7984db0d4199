"""Cosine-preserving random-hyperplane hashing and Hamming-space helpers.

Each hash bit is the sign of a projection onto a random direction: bit i of
``hash(v)`` is 1 iff ``dot(hyperplane_i, v) >= 0``. The probability that a
random hyperplane separates two vectors equals their angle divided by pi, so
the normalized Hamming distance between two signatures is an unbiased
estimator of ``angle(x, y) / pi`` and ``cos(pi * hamming / bits)`` estimates
their cosine similarity. More bits give a tighter estimate (binomial standard
error ``sqrt(p * (1 - p) / bits)``).

Hyperplanes are standard normal floats drawn from a seeded, versioned,
block-wise generator, so ``(seed, dim, bits)`` fully determines every hash.
Hashers whose matrix would exceed ``MATERIALIZE_LIMIT_BYTES`` regenerate
blocks on the fly instead of caching them, which keeps very high-dimensional
configurations inside modest memory budgets at identical output.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

from .errors import (
    DimensionMismatch,
    IncomparableSignatures,
    InvalidBitLength,
    InvalidFeature,
    InvalidInput,
)
from .model import BitSignature, FeatureVector

GENERATOR_VERSION = 1
ROWS_PER_BLOCK = 512
MATERIALIZE_LIMIT_BYTES = 1 << 30

_U64_MASK = (1 << 64) - 1


def _digest_hasher_id(seed: int, dim: int, bits: int) -> int:
    key = f"placehash-hyperplanes-v{GENERATOR_VERSION}:{seed}:{dim}:{bits}"
    return int.from_bytes(
        hashlib.blake2b(key.encode("ascii"), digest_size=8).digest(), "little"
    )


class Hasher:
    """Deterministic random-hyperplane hasher for one (seed, dim, bits) tuple.

    Not constructed directly; use :func:`make_hasher`.
    """

    def __init__(self, dim: int, bits: int, seed: int,
                 materialize_limit: int = MATERIALIZE_LIMIT_BYTES):
        self.dim = dim
        self.bits = bits
        self.seed = seed
        self.hasher_id = _digest_hasher_id(seed, dim, bits)
        self._materialize = dim * bits * 4 <= materialize_limit
        self._cached_blocks = None

    @property
    def words(self) -> int:
        return self.bits // 64

    def _make_block(self, block_index: int) -> np.ndarray:
        rows = min(ROWS_PER_BLOCK, self.bits - block_index * ROWS_PER_BLOCK)
        seq = np.random.SeedSequence([self.seed, block_index])
        gen = np.random.Generator(np.random.PCG64(seq))
        return gen.standard_normal((rows, self.dim), dtype=np.float32)

    def _iter_blocks(self):
        n_blocks = -(-self.bits // ROWS_PER_BLOCK)
        if self._materialize:
            if self._cached_blocks is None:
                self._cached_blocks = [self._make_block(b) for b in range(n_blocks)]
            yield from self._cached_blocks
        else:
            for b in range(n_blocks):
                yield self._make_block(b)

    @property
    def hyperplanes(self) -> np.ndarray:
        """Full (bits, dim) hyperplane matrix. Large configurations allocate it
        on every access; prefer :meth:`hash_batch` for bulk work."""
        return np.concatenate(list(self._iter_blocks()), axis=0)

    def hash_batch(self, vectors: np.ndarray) -> np.ndarray:
        """Hash a (n, dim) float array into (n, bits // 64) packed uint64 words.

        Bit k of row r is 1 iff ``dot(hyperplane_k, vectors[r]) >= 0`` and is
        stored LSB-first in word ``k // 64``. Row order matches input order.
        """
        x = np.asarray(vectors, dtype=np.float32)
        if x.ndim == 1:
            x = x[np.newaxis, :]
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise DimensionMismatch(
                f"expected vectors of dim {self.dim}, got shape {x.shape}"
            )
        signs = np.empty((x.shape[0], self.bits), dtype=bool)
        row = 0
        for block in self._iter_blocks():
            signs[:, row:row + block.shape[0]] = (x @ block.T) >= 0.0
            row += block.shape[0]
        packed = np.packbits(signs, axis=1, bitorder="little")
        words = packed.view("<u8").astype(np.uint64, copy=False)
        return np.ascontiguousarray(words)


def make_hasher(dim: int, bits: int, seed: int,
                materialize_limit: int = MATERIALIZE_LIMIT_BYTES) -> Hasher:
    """Build a deterministic hasher; the same (seed, dim, bits) always yields
    the same hyperplanes, hashes, and hasher_id, across runs and platforms."""
    if dim < 1:
        raise InvalidInput(f"dim must be >= 1, got {dim}")
    if bits < 64 or bits % 64 != 0:
        raise InvalidBitLength(f"bits must be a multiple of 64 and >= 64, got {bits}")
    return Hasher(dim, bits, int(seed) & _U64_MASK, materialize_limit)


def hash_vector(hasher: Hasher, vector: FeatureVector) -> BitSignature:
    """Hash one feature vector into a bit signature.

    Scale invariant up to float rounding: positive rescaling of the input
    leaves all projection signs unchanged in real arithmetic, and exactly so
    for power-of-two scalings (which commute with float32 rounding).
    """
    if vector.dim != hasher.dim:
        raise DimensionMismatch(
            f"vector dim {vector.dim} != hasher dim {hasher.dim}"
        )
    words = hasher.hash_batch(vector.values[np.newaxis, :])[0]
    return BitSignature(words=words, length_bits=hasher.bits,
                        hasher_id=hasher.hasher_id)


def hamming(a: BitSignature, b: BitSignature) -> int:
    """Number of differing bits between two signatures from the same hasher."""
    if a.hasher_id != b.hasher_id:
        raise IncomparableSignatures(
            f"hasher_id mismatch: {a.hasher_id:#x} vs {b.hasher_id:#x}"
        )
    if a.length_bits != b.length_bits:
        raise IncomparableSignatures("signature lengths differ")
    return int(np.bitwise_count(a.words ^ b.words).sum())


def estimate_cosine(hamming_count: int, bits: int) -> float:
    """Cosine similarity estimate from a Hamming count: cos(pi * h / bits).

    Monotone decreasing in ``hamming_count``; 0 differing bits -> 1.0, all
    bits differing -> -1.0.
    """
    if bits < 1:
        raise InvalidInput(f"bits must be >= 1, got {bits}")
    if not 0 <= hamming_count <= bits:
        raise InvalidInput(
            f"hamming count {hamming_count} outside [0, {bits}]"
        )
    return math.cos(math.pi * hamming_count / bits)


def cosine_distance(x, y) -> float:
    """Cosine distance 1 - dot(x, y) / (|x| * |y|), in [0, 2].

    Accepts FeatureVector or plain 1-D arrays; computed in float64.
    """
    xv = x.values if isinstance(x, FeatureVector) else np.asarray(x)
    yv = y.values if isinstance(y, FeatureVector) else np.asarray(y)
    if xv.shape != yv.shape:
        raise DimensionMismatch(f"shape mismatch: {xv.shape} vs {yv.shape}")
    x64 = xv.astype(np.float64, copy=False)
    y64 = yv.astype(np.float64, copy=False)
    nx = math.sqrt(float(x64 @ x64))
    ny = math.sqrt(float(y64 @ y64))
    if nx == 0.0 or ny == 0.0:
        raise InvalidFeature("cosine distance undefined for zero vectors")
    d = 1.0 - float(x64 @ y64) / (nx * ny)
    return min(max(d, 0.0), 2.0)
