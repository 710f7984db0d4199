"""Flat-file formats: feature files, signature files, ground truth, manifests.

Both binary layouts are little-endian and fixed, so files round-trip
bit-exactly across platforms.

Feature file ("PHF1"):
    magic 4s | format_version u16 | tag_len u16 | tag utf-8 |
    dim u32 | count u32 | n_classes u32 |
    count * [place_id u64 | frame_index u64 | dim * f32 | n_classes * f32]

Signature file ("PHS1"):
    magic 4s | hasher_id u64 | length_bits u32 | count u32 |
    count * [place_id u64 | frame_index u64 | (length_bits / 64) * u64]
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    DuplicateGroundTruth,
    FormatError,
    IncomparableSignatures,
    InvalidFeature,
    InvalidInput,
)
from .model import (
    BitSignature,
    DatasetManifest,
    FeatureVector,
    GroundTruth,
    PlaceRecord,
)

FEATURE_MAGIC = b"PHF1"
SIGNATURE_MAGIC = b"PHS1"
FORMAT_VERSION = 1

_WRITE_CHUNK = 1024


def _feature_record_dtype(dim: int, n_classes: int) -> np.dtype:
    fields = [("place_id", "<u8"), ("frame_index", "<u8"), ("values", "<f4", (dim,))]
    if n_classes > 0:
        fields.append(("probs", "<f4", (n_classes,)))
    return np.dtype(fields)


def write_feature_file(records: Sequence[PlaceRecord], path) -> None:
    """Write records to the binary feature layout; re-reading is bit-exact.

    All records must share dim and layer_tag, and either all or none carry
    class probabilities (of equal length).
    """
    if not records:
        raise InvalidInput("cannot write an empty feature file")
    first = records[0]
    if first.feature is None:
        raise InvalidFeature("feature file records must carry features")
    dim = first.feature.dim
    tag = first.feature.layer_tag
    n_classes = 0 if first.class_probs is None else int(first.class_probs.size)
    for r in records:
        if r.feature is None:
            raise InvalidFeature(f"record {r.place_id} has no feature")
        if r.feature.dim != dim:
            raise DimensionMismatch(
                f"record {r.place_id} has dim {r.feature.dim}, expected {dim}"
            )
        if r.feature.layer_tag != tag:
            raise DimensionMismatch(
                f"record {r.place_id} has layer {r.feature.layer_tag!r}, expected {tag!r}"
            )
        rc = 0 if r.class_probs is None else int(r.class_probs.size)
        if rc != n_classes:
            raise DimensionMismatch(
                f"record {r.place_id} has {rc} class probs, expected {n_classes}"
            )

    tag_bytes = tag.encode("utf-8")
    header = FEATURE_MAGIC + struct.pack(
        "<HH", FORMAT_VERSION, len(tag_bytes)
    ) + tag_bytes + struct.pack("<III", dim, len(records), n_classes)

    rec_dtype = _feature_record_dtype(dim, n_classes)
    with open(path, "wb") as fh:
        fh.write(header)
        for start in range(0, len(records), _WRITE_CHUNK):
            chunk = records[start:start + _WRITE_CHUNK]
            arr = np.empty(len(chunk), dtype=rec_dtype)
            for i, r in enumerate(chunk):
                arr["place_id"][i] = r.place_id
                arr["frame_index"][i] = r.frame_index
                arr["values"][i] = r.feature.values
                if n_classes:
                    arr["probs"][i] = r.class_probs
            fh.write(arr.tobytes())


def read_feature_file(path) -> list[PlaceRecord]:
    """Read a feature file, validating layout and feature invariants."""
    data = Path(path).read_bytes()
    if len(data) < 8 or data[:4] != FEATURE_MAGIC:
        raise FormatError(f"{path}: not a feature file (bad magic)")
    version, tag_len = struct.unpack_from("<HH", data, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    offset = 8 + tag_len
    if len(data) < offset + 12:
        raise FormatError(f"{path}: truncated header")
    tag = data[8:offset].decode("utf-8")
    dim, count, n_classes = struct.unpack_from("<III", data, offset)
    offset += 12
    if dim < 1:
        raise FormatError(f"{path}: dim field must be >= 1, got {dim}")

    rec_dtype = _feature_record_dtype(dim, n_classes)
    expected = count * rec_dtype.itemsize
    if len(data) - offset != expected:
        raise FormatError(
            f"{path}: payload is {len(data) - offset} bytes, "
            f"count field implies {expected}"
        )
    arr = np.frombuffer(data, dtype=rec_dtype, count=count, offset=offset)

    if count:
        values = arr["values"]
        if not np.isfinite(values).all():
            raise InvalidFeature(f"{path}: non-finite feature value")
        if not np.abs(values).max(axis=1).all():
            raise InvalidFeature(f"{path}: zero feature vector")
        ids = arr["place_id"]
        if np.unique(ids).size != count:
            raise FormatError(f"{path}: duplicate place_id")
        if n_classes:
            probs = arr["probs"]
            if probs.min() < 0.0 or probs.max() > 1.0:
                raise InvalidInput(f"{path}: class probability outside [0, 1]")

    records = []
    for i in range(count):
        records.append(
            PlaceRecord(
                place_id=int(arr["place_id"][i]),
                frame_index=int(arr["frame_index"][i]),
                feature=FeatureVector(values=arr["values"][i], layer_tag=tag),
                class_probs=arr["probs"][i] if n_classes else None,
            )
        )
    return records


@dataclass(frozen=True)
class SignatureSet:
    """Column-wise contents of one signature file."""

    hasher_id: int
    length_bits: int
    place_ids: np.ndarray
    frame_indices: np.ndarray
    words: np.ndarray  # (count, length_bits // 64) uint64


def write_signature_set(sigs: SignatureSet, path) -> None:
    n, w = sigs.words.shape
    if w * 64 != sigs.length_bits:
        raise InvalidInput("word count does not match length_bits")
    header = SIGNATURE_MAGIC + struct.pack(
        "<QII", sigs.hasher_id, sigs.length_bits, n
    )
    rec_dtype = np.dtype(
        [("place_id", "<u8"), ("frame_index", "<u8"), ("words", "<u8", (w,))]
    )
    arr = np.empty(n, dtype=rec_dtype)
    arr["place_id"] = sigs.place_ids
    arr["frame_index"] = sigs.frame_indices
    arr["words"] = sigs.words
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes())


def read_signature_set(path) -> SignatureSet:
    data = Path(path).read_bytes()
    if len(data) < 20 or data[:4] != SIGNATURE_MAGIC:
        raise FormatError(f"{path}: not a signature file (bad magic)")
    hasher_id, length_bits, count = struct.unpack_from("<QII", data, 4)
    if length_bits < 64 or length_bits % 64:
        raise FormatError(f"{path}: invalid length_bits {length_bits}")
    w = length_bits // 64
    rec_dtype = np.dtype(
        [("place_id", "<u8"), ("frame_index", "<u8"), ("words", "<u8", (w,))]
    )
    if len(data) - 20 != count * rec_dtype.itemsize:
        raise FormatError(f"{path}: payload size does not match count field")
    arr = np.frombuffer(data, dtype=rec_dtype, count=count, offset=20)
    ids = arr["place_id"].astype(np.int64)
    if count and np.unique(ids).size != count:
        raise FormatError(f"{path}: duplicate place_id")
    return SignatureSet(
        hasher_id=hasher_id,
        length_bits=length_bits,
        place_ids=ids,
        frame_indices=arr["frame_index"].astype(np.int64),
        words=arr["words"].astype(np.uint64, copy=False).reshape(count, w),
    )


def write_signature_records(records: Sequence[PlaceRecord], path) -> None:
    """Write records carrying signatures (all from the same hasher)."""
    if not records:
        raise InvalidInput("cannot write an empty signature file")
    sigs = [r.signature for r in records]
    if any(s is None for s in sigs):
        raise InvalidInput("all records must carry signatures")
    hasher_ids = {s.hasher_id for s in sigs}
    if len(hasher_ids) > 1:
        raise IncomparableSignatures("records hashed by different hashers")
    write_signature_set(
        SignatureSet(
            hasher_id=sigs[0].hasher_id,
            length_bits=sigs[0].length_bits,
            place_ids=np.array([r.place_id for r in records], dtype=np.int64),
            frame_indices=np.array([r.frame_index for r in records], dtype=np.int64),
            words=np.stack([s.words for s in sigs]),
        ),
        path,
    )


def read_signature_records(path) -> list[PlaceRecord]:
    ss = read_signature_set(path)
    return [
        PlaceRecord(
            place_id=int(ss.place_ids[i]),
            frame_index=int(ss.frame_indices[i]),
            signature=BitSignature(
                words=ss.words[i], length_bits=ss.length_bits, hasher_id=ss.hasher_id
            ),
        )
        for i in range(len(ss.place_ids))
    ]


def read_ground_truth(path, tolerance_frames: int) -> GroundTruth:
    """Parse a two-column integer CSV of (query_frame, reference_frame) pairs.

    A single non-numeric header row is permitted; duplicate query frames are
    rejected.
    """
    # Validate tolerance before touching the file.
    GroundTruth(pairs={}, tolerance_frames=tolerance_frames)
    pairs: dict[int, int] = {}
    with open(path, newline="") as fh:
        for row_no, row in enumerate(csv.reader(fh)):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < 2:
                raise FormatError(f"{path}:{row_no + 1}: expected two columns")
            try:
                query = int(row[0])
                ref = int(row[1])
            except ValueError:
                if row_no == 0:
                    continue  # header row
                raise FormatError(
                    f"{path}:{row_no + 1}: non-integer ground truth entry"
                ) from None
            if query in pairs:
                raise DuplicateGroundTruth(
                    f"{path}: query frame {query} listed twice"
                )
            pairs[query] = ref
    return GroundTruth(pairs=pairs, tolerance_frames=tolerance_frames)


def write_ground_truth(gt: GroundTruth, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query_frame", "reference_frame"])
        for query in sorted(gt.pairs):
            writer.writerow([query, gt.pairs[query]])


def write_manifest(manifest: DatasetManifest, path) -> None:
    payload = {
        "name": manifest.name,
        "feature_file": manifest.feature_file,
        "dim": manifest.dim,
        "layer_tag": manifest.layer_tag,
        "count": manifest.count,
    }
    if manifest.class_names is not None:
        payload["class_names"] = list(manifest.class_names)
    if manifest.ground_truth_file is not None:
        payload["ground_truth_file"] = manifest.ground_truth_file
    payload.update(manifest.extra)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> DatasetManifest:
    raw = json.loads(Path(path).read_text())
    known = {"name", "feature_file", "dim", "layer_tag", "count",
             "class_names", "ground_truth_file"}
    try:
        return DatasetManifest(
            name=raw["name"],
            feature_file=raw["feature_file"],
            dim=int(raw["dim"]),
            layer_tag=raw["layer_tag"],
            count=int(raw["count"]),
            class_names=raw.get("class_names"),
            ground_truth_file=raw.get("ground_truth_file"),
            extra={k: v for k, v in raw.items() if k not in known},
        )
    except KeyError as exc:
        raise FormatError(f"{path}: manifest missing field {exc}") from None
