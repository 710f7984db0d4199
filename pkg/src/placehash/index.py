"""Top-2 nearest-neighbor indices: exact cosine scan, Hamming-signature scan,
and semantically partitioned Hamming scan.

All backends are exhaustive over their candidate set and therefore exact
under their own distance. Ties are broken by lower place_id, which makes
query results deterministic and independent of scan order. The Hamming
backends report distances normalized by the bit length so the ratio test
operates on a scale comparable to cosine distance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    FormatError,
    IncomparableSignatures,
    IndexTooSmall,
    InvalidThreshold,
    MissingClassProbabilities,
)
from .fileio import SignatureSet, read_feature_file, read_signature_set, write_signature_set
from .hashing import Hasher
from .model import BitSignature, FeatureVector, PlaceRecord, check_same_dim

_NORM_CHUNK = 4096


@dataclass(frozen=True)
class QueryResult:
    """Best and second-best match of one top-2 query.

    Distances are cosine distances for the cosine backend and Hamming counts
    divided by the bit length for the Hamming backends, both on [0, 2] / [0, 1]
    scales suitable for the best/second-best ratio test.
    """

    best_id: int
    second_id: int
    best_distance: float
    second_distance: float
    best_frame: int
    second_frame: int
    candidates_scanned: int
    used_fallback: bool = False


def _select_top2(distances: np.ndarray, ids: np.ndarray, frames: np.ndarray,
                 scanned: int, used_fallback: bool = False) -> QueryResult:
    """Exact top-2 by (distance, place_id); tie-safe around the partition cut."""
    n = distances.shape[0]
    kth = min(2, n - 1)
    cut = np.partition(distances, kth)[kth]
    cand = np.flatnonzero(distances <= cut)
    order = np.lexsort((ids[cand], distances[cand]))
    b = cand[order[0]]
    s = cand[order[1]]
    return QueryResult(
        best_id=int(ids[b]),
        second_id=int(ids[s]),
        best_distance=float(distances[b]),
        second_distance=float(distances[s]),
        best_frame=int(frames[b]),
        second_frame=int(frames[s]),
        candidates_scanned=scanned,
        used_fallback=used_fallback,
    )


class FlatCosineIndex:
    """Exhaustive cosine-distance scan over raw feature vectors."""

    backend = "cosine"

    def __init__(self, matrix: np.ndarray, ids: np.ndarray, frames: np.ndarray):
        if matrix.ndim != 2 or matrix.shape[0] < 2:
            raise IndexTooSmall("cosine index needs >= 2 records")
        self.matrix = np.ascontiguousarray(matrix, dtype=np.float32)
        self.ids = np.asarray(ids, dtype=np.int64)
        self.frames = np.asarray(frames, dtype=np.int64)
        # float64 norms, accumulated chunk-wise to avoid a full-matrix upcast
        norms = np.empty(matrix.shape[0], dtype=np.float64)
        for start in range(0, matrix.shape[0], _NORM_CHUNK):
            chunk = self.matrix[start:start + _NORM_CHUNK]
            norms[start:start + _NORM_CHUNK] = np.sqrt(
                np.einsum("ij,ij->i", chunk, chunk, dtype=np.float64)
            )
        if not norms.all():
            raise IndexTooSmall("cosine index cannot hold zero vectors")
        self.norms = norms

    def __len__(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def query(self, vector: FeatureVector) -> QueryResult:
        if vector.dim != self.dim:
            raise DimensionMismatch(
                f"query dim {vector.dim} != index dim {self.dim}"
            )
        q = vector.values
        qnorm = float(np.sqrt(np.einsum("i,i->", q, q, dtype=np.float64)))
        sims = self.matrix @ q
        distances = 1.0 - sims.astype(np.float64) / (self.norms * qnorm)
        return _select_top2(distances, self.ids, self.frames, len(self))


class FlatHammingIndex:
    """Exhaustive Hamming scan over packed bit signatures."""

    backend = "hamming"

    def __init__(self, words: np.ndarray, ids: np.ndarray, frames: np.ndarray,
                 length_bits: int, hasher_id: int):
        if words.ndim != 2 or words.shape[0] < 2:
            raise IndexTooSmall("hamming index needs >= 2 records")
        if words.shape[1] * 64 != length_bits:
            raise IncomparableSignatures("word count does not match length_bits")
        self.words = np.ascontiguousarray(words, dtype=np.uint64)
        self.ids = np.asarray(ids, dtype=np.int64)
        self.frames = np.asarray(frames, dtype=np.int64)
        self.length_bits = length_bits
        self.hasher_id = hasher_id

    def __len__(self) -> int:
        return self.words.shape[0]

    def _check_query(self, signature: BitSignature) -> None:
        if signature.hasher_id != self.hasher_id:
            raise IncomparableSignatures(
                f"query hasher_id {signature.hasher_id:#x} != "
                f"index hasher_id {self.hasher_id:#x}"
            )
        if signature.length_bits != self.length_bits:
            raise IncomparableSignatures("query signature length differs")

    def _distances(self, q_words: np.ndarray, rows: Optional[np.ndarray] = None):
        block = self.words if rows is None else self.words[rows]
        counts = np.bitwise_count(block ^ q_words).sum(axis=1, dtype=np.int64)
        return counts / self.length_bits

    def query(self, signature: BitSignature) -> QueryResult:
        self._check_query(signature)
        distances = self._distances(signature.words)
        return _select_top2(distances, self.ids, self.frames, len(self))

    def to_signature_set(self) -> SignatureSet:
        return SignatureSet(
            hasher_id=self.hasher_id,
            length_bits=self.length_bits,
            place_ids=self.ids,
            frame_indices=self.frames,
            words=self.words,
        )


class PartitionedIndex:
    """Per-class Hamming indices over a shared signature store.

    Class c's index holds every record whose stored probability for c is at
    least ``theta_build``; records may belong to several classes, and the
    full store doubles as the fallback index so every record stays reachable.
    """

    backend = "partitioned"

    def __init__(self, full: FlatHammingIndex, members: list[np.ndarray],
                 theta_build: float, class_names: Optional[Sequence[str]] = None):
        self.full = full
        self.members = members
        self.theta_build = theta_build
        self.class_names = list(class_names) if class_names is not None else None

    @property
    def class_count(self) -> int:
        return len(self.members)

    def __len__(self) -> int:
        return len(self.full)

    def membership_counts(self) -> list[int]:
        return [int(m.size) for m in self.members]


def _features_matrix(records: Sequence[PlaceRecord]) -> np.ndarray:
    dim = check_same_dim(records)
    matrix = np.empty((len(records), dim), dtype=np.float32)
    for i, r in enumerate(records):
        matrix[i] = r.feature.values
    return matrix


def _ids_frames(records: Sequence[PlaceRecord]):
    ids = np.array([r.place_id for r in records], dtype=np.int64)
    frames = np.array([r.frame_index for r in records], dtype=np.int64)
    return ids, frames


def build_cosine_index(records: Sequence[PlaceRecord]) -> FlatCosineIndex:
    """Build an exact cosine index from records carrying features."""
    if len(records) < 2:
        raise IndexTooSmall(f"need >= 2 records, got {len(records)}")
    ids, frames = _ids_frames(records)
    return FlatCosineIndex(_features_matrix(records), ids, frames)


def build_hamming_index(records: Sequence[PlaceRecord],
                        hasher: Hasher) -> FlatHammingIndex:
    """Build a Hamming index, hashing features or reusing stored signatures.

    Records carrying signatures must have been hashed by ``hasher``; records
    carrying only features are hashed here in insertion order.
    """
    if len(records) < 2:
        raise IndexTooSmall(f"need >= 2 records, got {len(records)}")
    ids, frames = _ids_frames(records)
    words = np.empty((len(records), hasher.words), dtype=np.uint64)
    to_hash: list[int] = []
    for i, r in enumerate(records):
        if r.signature is not None:
            if r.signature.hasher_id != hasher.hasher_id:
                raise IncomparableSignatures(
                    f"record {r.place_id} hashed by a different hasher"
                )
            words[i] = r.signature.words
        else:
            if r.feature is None or r.feature.dim != hasher.dim:
                raise DimensionMismatch(
                    f"record {r.place_id} has no dim-{hasher.dim} feature to hash"
                )
            to_hash.append(i)
    if to_hash:
        matrix = np.empty((len(to_hash), hasher.dim), dtype=np.float32)
        for j, i in enumerate(to_hash):
            matrix[j] = records[i].feature.values
        words[np.array(to_hash)] = hasher.hash_batch(matrix)
    return FlatHammingIndex(words, ids, frames, hasher.bits, hasher.hasher_id)


def build_cosine_index_from_matrix(matrix: np.ndarray, ids: np.ndarray,
                                   frames: np.ndarray) -> FlatCosineIndex:
    """Array-level constructor for callers that already hold a feature matrix."""
    return FlatCosineIndex(matrix, ids, frames)


def build_hamming_index_from_matrix(matrix: np.ndarray, ids: np.ndarray,
                                    frames: np.ndarray,
                                    hasher: Hasher) -> FlatHammingIndex:
    words = hasher.hash_batch(np.ascontiguousarray(matrix, dtype=np.float32))
    return FlatHammingIndex(words, ids, frames, hasher.bits, hasher.hasher_id)


def _class_probs_matrix(records: Sequence[PlaceRecord]) -> np.ndarray:
    sizes = set()
    for r in records:
        if r.class_probs is None:
            raise MissingClassProbabilities(
                f"record {r.place_id} has no class probabilities"
            )
        sizes.add(int(r.class_probs.size))
    if len(sizes) > 1:
        raise DimensionMismatch(f"ragged class_probs lengths: {sorted(sizes)}")
    size = sizes.pop()
    if size < 2:
        raise MissingClassProbabilities("need >= 2 semantic classes")
    probs = np.empty((len(records), size), dtype=np.float32)
    for i, r in enumerate(records):
        probs[i] = r.class_probs
    return probs


def build_partitioned_index(records: Sequence[PlaceRecord], hasher: Hasher,
                            theta: float,
                            class_names: Optional[Sequence[str]] = None
                            ) -> PartitionedIndex:
    """Build per-class Hamming indices: class c holds records with
    class_probs[c] >= theta. The full index over all records is kept as
    fallback."""
    if not 0.0 <= theta <= 1.0:
        raise InvalidThreshold(f"theta must be in [0, 1], got {theta}")
    probs = _class_probs_matrix(records)
    full = build_hamming_index(records, hasher)
    members = [np.flatnonzero(probs[:, c] >= theta) for c in range(probs.shape[1])]
    return PartitionedIndex(full, members, theta, class_names)


def query_top2(index, query) -> QueryResult:
    """Exact top-2 over all stored entries of a flat backend.

    Cosine indices take a FeatureVector, Hamming indices a BitSignature from
    the same hasher. Ties break toward the lower place_id.
    """
    if isinstance(index, FlatCosineIndex):
        if not isinstance(query, FeatureVector):
            raise DimensionMismatch("cosine backend expects a FeatureVector query")
        return index.query(query)
    if isinstance(index, FlatHammingIndex):
        if not isinstance(query, BitSignature):
            raise IncomparableSignatures("hamming backend expects a BitSignature query")
        return index.query(query)
    raise TypeError(f"not a flat index: {type(index).__name__}")


def query_partitioned(index: PartitionedIndex, query_signature: BitSignature,
                      query_class_probs, theta: float) -> QueryResult:
    """Top-2 over the union of per-class indices the query may belong to.

    Candidates are places indexed under any class c with
    ``query_class_probs[c] >= theta``, deduplicated. A candidate set smaller
    than two falls back to the full index and flags the result.
    """
    if not 0.0 <= theta <= 1.0:
        raise InvalidThreshold(f"theta must be in [0, 1], got {theta}")
    probs = np.asarray(query_class_probs, dtype=np.float64).ravel()
    if probs.size != index.class_count:
        raise DimensionMismatch(
            f"query has {probs.size} class probs, index has {index.class_count} classes"
        )
    full = index.full
    full._check_query(query_signature)

    if theta == 0.0:
        rows = None  # exact contract: theta 0 equals the unpartitioned search
    else:
        qualifying = np.flatnonzero(probs >= theta)
        selected = [index.members[c] for c in qualifying]
        rows = (np.unique(np.concatenate(selected)) if selected
                else np.empty(0, dtype=np.int64))
        if rows.size == len(full):
            rows = None  # same scan either way; skip the gather

    if rows is None:
        distances = full._distances(query_signature.words)
        return _select_top2(distances, full.ids, full.frames, len(full))
    if rows.size < 2:
        distances = full._distances(query_signature.words)
        return _select_top2(distances, full.ids, full.frames, len(full),
                            used_fallback=True)
    distances = full._distances(query_signature.words, rows)
    return _select_top2(distances, full.ids[rows], full.frames[rows],
                        int(rows.size))


# -- persistence --------------------------------------------------------------

PARTITION_SIDECAR = "partition.json"
PARTITION_FULL_FILE = "full.phs"


def load_cosine_index(feature_file) -> FlatCosineIndex:
    return build_cosine_index(read_feature_file(feature_file))


def load_hamming_index(signature_file) -> FlatHammingIndex:
    ss = read_signature_set(signature_file)
    return FlatHammingIndex(ss.words, ss.place_ids, ss.frame_indices,
                            ss.length_bits, ss.hasher_id)


def save_partitioned_index(index: PartitionedIndex, directory) -> None:
    """Persist as one signature file per class plus full.phs and a sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    full = index.full
    write_signature_set(full.to_signature_set(), directory / PARTITION_FULL_FILE)
    for c, rows in enumerate(index.members):
        write_signature_set(
            SignatureSet(
                hasher_id=full.hasher_id,
                length_bits=full.length_bits,
                place_ids=full.ids[rows],
                frame_indices=full.frames[rows],
                words=full.words[rows],
            ),
            directory / f"class_{c:03d}.phs",
        )
    sidecar = {
        "theta_build": index.theta_build,
        "class_count": index.class_count,
        "class_names": index.class_names,
        "membership_counts": index.membership_counts(),
        "hasher_id": full.hasher_id,
        "length_bits": full.length_bits,
        "count": len(full),
    }
    (directory / PARTITION_SIDECAR).write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n"
    )


def load_partitioned_index(directory) -> PartitionedIndex:
    directory = Path(directory)
    sidecar = json.loads((directory / PARTITION_SIDECAR).read_text())
    full = load_hamming_index(directory / PARTITION_FULL_FILE)
    if len(full) != sidecar["count"]:
        raise FormatError(f"{directory}: full index count mismatch")
    position = {int(pid): i for i, pid in enumerate(full.ids)}
    members = []
    for c in range(sidecar["class_count"]):
        ss = read_signature_set(directory / f"class_{c:03d}.phs")
        if ss.hasher_id != full.hasher_id:
            raise IncomparableSignatures(f"{directory}: class {c} hasher mismatch")
        members.append(
            np.array(sorted(position[int(pid)] for pid in ss.place_ids),
                     dtype=np.int64)
        )
    return PartitionedIndex(full, members, sidecar["theta_build"],
                            sidecar["class_names"])
