"""Domain types: feature vectors, bit signatures, place records, ground truth.

Feature values are held as read-only float32 arrays (the on-disk unit), bit
signatures as packed little-endian uint64 words. All types validate their
invariants at construction so downstream code can assume clean data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    InvalidBitLength,
    InvalidFeature,
    InvalidInput,
    InvalidTolerance,
)

#: Signature lengths used in the standard sweep; any other multiple of 64 is
#: also accepted.
DEFAULT_BIT_LENGTHS = (256, 512, 1024, 2048, 4096, 8192)


def _as_float32_vector(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 1:
        raise InvalidFeature(f"feature values must be 1-D, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class FeatureVector:
    """Dense holistic image descriptor.

    Attributes:
        values: float32 activations, finite and not all zero.
        layer_tag: short label of the producing network layer (e.g. "conv3").
    """

    values: np.ndarray
    layer_tag: str = ""

    def __post_init__(self):
        arr = _as_float32_vector(self.values)
        if arr.size < 1:
            raise InvalidFeature("feature vector must have dim >= 1")
        if not np.isfinite(arr).all():
            raise InvalidFeature("feature vector contains NaN or Inf")
        if not arr.any():
            raise InvalidFeature("zero feature vector: cosine distance undefined")
        arr = arr.view()
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return int(self.values.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return self.layer_tag == other.layer_tag and np.array_equal(
            self.values, other.values
        )


@dataclass(frozen=True)
class BitSignature:
    """Packed b-bit hash of a feature vector.

    Bit k of the signature lives in ``words[k // 64]`` at position ``k % 64``
    (LSB first), so word values are platform independent.

    Attributes:
        words: uint64 array of length ``length_bits // 64``.
        length_bits: number of hash bits, a positive multiple of 64.
        hasher_id: 64-bit digest identifying the hyperplane set that produced
            this signature; only signatures with equal hasher_id are comparable.
    """

    words: np.ndarray
    length_bits: int
    hasher_id: int

    def __post_init__(self):
        if self.length_bits < 64 or self.length_bits % 64 != 0:
            raise InvalidBitLength(
                f"length_bits must be a multiple of 64 and >= 64, got {self.length_bits}"
            )
        words = np.asarray(self.words, dtype=np.uint64)
        if words.ndim != 1 or words.size != self.length_bits // 64:
            raise InvalidBitLength(
                f"expected {self.length_bits // 64} packed words, got shape {words.shape}"
            )
        words = words.view()
        words.setflags(write=False)
        object.__setattr__(self, "words", words)

    @property
    def payload_bytes(self) -> int:
        """Size of the packed bit payload in bytes."""
        return self.length_bits // 8

    def __eq__(self, other) -> bool:
        if not isinstance(other, BitSignature):
            return NotImplemented
        return (
            self.hasher_id == other.hasher_id
            and self.length_bits == other.length_bits
            and np.array_equal(self.words, other.words)
        )


@dataclass(frozen=True)
class PlaceRecord:
    """One stored place: identity plus at least one matchable representation.

    class_probs, when present, holds one probability in [0, 1] per semantic
    class. The entries come from independent per-class classifier outputs and
    need not sum to one.
    """

    place_id: int
    frame_index: int
    feature: Optional[FeatureVector] = None
    signature: Optional[BitSignature] = None
    class_probs: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.place_id < 0 or self.frame_index < 0:
            raise InvalidInput("place_id and frame_index must be non-negative")
        if self.feature is None and self.signature is None:
            raise InvalidInput("place record needs a feature or a signature")
        if self.class_probs is not None:
            probs = np.asarray(self.class_probs, dtype=np.float32)
            if probs.ndim != 1:
                raise InvalidInput("class_probs must be 1-D")
            if probs.size and (probs.min() < 0.0 or probs.max() > 1.0):
                raise InvalidInput("class probabilities must lie in [0, 1]")
            probs = probs.view()
            probs.setflags(write=False)
            object.__setattr__(self, "class_probs", probs)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PlaceRecord):
            return NotImplemented
        if (self.place_id, self.frame_index) != (other.place_id, other.frame_index):
            return False
        if self.feature != other.feature or self.signature != other.signature:
            return False
        if (self.class_probs is None) != (other.class_probs is None):
            return False
        if self.class_probs is not None:
            return np.array_equal(self.class_probs, other.class_probs)
        return True


@dataclass(frozen=True)
class GroundTruth:
    """Query frame -> reference frame correspondence with a +-tolerance band.

    A query's positive match counts as correct when the matched reference
    frame lies within ``tolerance_frames`` of the stored reference frame.
    """

    pairs: Mapping[int, int]
    tolerance_frames: int

    def __post_init__(self):
        if self.tolerance_frames not in (1, 2, 3, 4, 5):
            raise InvalidTolerance(
                f"tolerance_frames must be in 1..5, got {self.tolerance_frames}"
            )
        object.__setattr__(self, "pairs", dict(self.pairs))

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True)
class DatasetManifest:
    """Sidecar metadata describing one feature file."""

    name: str
    feature_file: str
    dim: int
    layer_tag: str
    count: int
    class_names: Optional[Sequence[str]] = None
    ground_truth_file: Optional[str] = None
    extra: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1 or self.count < 0:
            raise InvalidInput("manifest dim must be >= 1 and count >= 0")


def check_same_dim(records: Sequence[PlaceRecord]) -> int:
    """Return the shared feature dim of ``records``, or raise DimensionMismatch."""
    dims = {r.feature.dim for r in records if r.feature is not None}
    if len(dims) > 1:
        raise DimensionMismatch(f"mixed feature dimensions: {sorted(dims)}")
    if not dims:
        raise InvalidFeature("no records carry features")
    return dims.pop()
