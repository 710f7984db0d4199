"""Matching decisions and the precision-recall evaluation protocol.

A query is declared a positive match when the ratio of its best to its
second-best distance is at or below a threshold, and a negative otherwise.
Every query has a ground-truth reference, so there are no true negatives:
a negative is always a false negative, and a positive is a true positive
exactly when the matched frame lies within the ground-truth tolerance band.
Sweeping the ratio threshold produces the precision-recall curve; reports
carry the maximum F1 over the sweep (selection convention recorded in the
report itself).
"""

from __future__ import annotations

import csv
import enum
import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    IncomparableReports,
    InvalidThreshold,
    MissingClassProbabilities,
    MissingGroundTruth,
    NoQueries,
)
from .hashing import Hasher, hash_vector
from .index import (
    FlatCosineIndex,
    FlatHammingIndex,
    PartitionedIndex,
    QueryResult,
    query_partitioned,
    query_top2,
)
from .model import GroundTruth, PlaceRecord

F1_SELECTION = "max_over_tau_sweep"
DEFAULT_TAU_COUNT = 200


class Label(enum.Enum):
    TP = "TP"
    FP = "FP"
    FN = "FN"


@dataclass(frozen=True)
class MatchDecision:
    """Positive/negative verdict of the best-over-second-best ratio test."""

    query_frame: int
    result: QueryResult
    ratio: float
    tau: float
    verdict: str  # "positive" | "negative"


@dataclass(frozen=True)
class PRPoint:
    tau: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int

    @property
    def f1(self) -> float:
        if self.precision + self.recall == 0.0:
            return 0.0
        return 2.0 * self.precision * self.recall / (self.precision + self.recall)


@dataclass(frozen=True)
class Timing:
    mean_us: float
    median_us: float


@dataclass(frozen=True)
class EvalReport:
    curve: tuple[PRPoint, ...]
    best_f1: float
    best_tau: float
    backend_tag: str
    n_queries: int
    query_set_id: str
    timing: Optional[Timing] = None
    hasher_id: Optional[int] = None
    f1_selection: str = F1_SELECTION


@dataclass(frozen=True)
class ComparisonRow:
    backend_tag: str
    best_f1: float
    best_tau: float
    retention: float
    median_us: Optional[float]
    mean_us: Optional[float]
    speedup: Optional[float]


@dataclass(frozen=True)
class ComparisonTable:
    reference_tag: str
    rows: tuple[ComparisonRow, ...]


def default_taus(count: int = DEFAULT_TAU_COUNT) -> np.ndarray:
    """``count`` evenly spaced ratio thresholds in (0, 1], ending at 1."""
    return np.linspace(1.0 / count, 1.0, count)


def match_ratio(result: QueryResult) -> float:
    """Best over second-best distance; 1.0 when both are exactly zero
    (duplicate stored places make the match ambiguous)."""
    if result.second_distance > 0.0:
        return result.best_distance / result.second_distance
    return 1.0


def decide(result: QueryResult, tau: float, query_frame: int = 0) -> MatchDecision:
    """Apply the ratio test at threshold ``tau`` in (0, 1]."""
    if not 0.0 < tau <= 1.0:
        raise InvalidThreshold(f"tau must be in (0, 1], got {tau}")
    ratio = match_ratio(result)
    return MatchDecision(
        query_frame=query_frame,
        result=result,
        ratio=ratio,
        tau=tau,
        verdict="positive" if ratio <= tau else "negative",
    )


def label(decision: MatchDecision, gt: GroundTruth) -> Label:
    """Classify a decision: negatives are FN; positives are TP iff the matched
    frame is within the tolerance band of the ground-truth reference."""
    if decision.query_frame not in gt.pairs:
        raise MissingGroundTruth(
            f"query frame {decision.query_frame} has no ground truth"
        )
    if decision.verdict == "negative":
        return Label.FN
    reference = gt.pairs[decision.query_frame]
    if abs(decision.result.best_frame - reference) <= gt.tolerance_frames:
        return Label.TP
    return Label.FP


def _query_set_digest(query_frames: Sequence[int], gt: GroundTruth) -> str:
    h = hashlib.blake2b(digest_size=8)
    h.update(np.asarray(query_frames, dtype=np.int64).tobytes())
    for q in sorted(gt.pairs):
        h.update(f"{q}:{gt.pairs[q]};".encode())
    h.update(str(gt.tolerance_frames).encode())
    return h.hexdigest()


def _validate_taus(taus: np.ndarray) -> np.ndarray:
    taus = np.asarray(taus, dtype=np.float64)
    if taus.size == 0:
        raise InvalidThreshold("tau sweep is empty")
    if taus.min() <= 0.0 or taus.max() > 1.0:
        raise InvalidThreshold("tau values must lie in (0, 1]")
    if taus.size > 1 and not (np.diff(taus) > 0).all():
        raise InvalidThreshold("tau values must be strictly increasing")
    return taus


def pr_sweep(results: Sequence[QueryResult], gt: GroundTruth, taus,
             query_frames: Sequence[int], backend_tag: str = "",
             timing: Optional[Timing] = None,
             hasher_id: Optional[int] = None) -> EvalReport:
    """Sweep the ratio threshold over ``taus`` and report the PR curve.

    ``query_frames`` pairs each result with the frame that issued it. The
    per-query correctness bit is independent of tau; only the
    positive/negative split moves with the threshold, so recall is
    non-decreasing along the sweep and tp + fp + fn equals the query count
    at every point.
    """
    if not results:
        raise NoQueries("no query results to evaluate")
    if len(query_frames) != len(results):
        raise ValueError("query_frames must parallel results")
    taus = _validate_taus(taus)

    ratios = np.array([match_ratio(r) for r in results])
    correct = np.empty(len(results), dtype=bool)
    for i, (r, frame) in enumerate(zip(results, query_frames)):
        if frame not in gt.pairs:
            raise MissingGroundTruth(f"query frame {frame} has no ground truth")
        correct[i] = abs(r.best_frame - gt.pairs[frame]) <= gt.tolerance_frames

    n = len(results)
    curve = []
    for tau in taus:
        positive = ratios <= tau
        tp = int((positive & correct).sum())
        fp = int((positive & ~correct).sum())
        fn = n - tp - fp
        precision = tp / (tp + fp) if tp + fp else 1.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        curve.append(PRPoint(float(tau), precision, recall, tp, fp, fn))

    f1s = [p.f1 for p in curve]
    best = int(np.argmax(f1s))
    return EvalReport(
        curve=tuple(curve),
        best_f1=f1s[best],
        best_tau=curve[best].tau,
        backend_tag=backend_tag,
        n_queries=n,
        query_set_id=_query_set_digest(query_frames, gt),
        timing=timing,
        hasher_id=hasher_id,
    )


def evaluate_backend(index, queries: Sequence[PlaceRecord], gt: GroundTruth,
                     taus=None, backend_tag: Optional[str] = None,
                     hasher: Optional[Hasher] = None,
                     theta: Optional[float] = None) -> EvalReport:
    """Run every query against ``index`` and sweep the ratio test.

    Hamming and partitioned backends hash query features with ``hasher``
    unless the records already carry matching signatures; hashing time is
    excluded from the per-query timing, which brackets the index scan only.
    """
    if not queries:
        raise NoQueries("no queries")
    if taus is None:
        taus = default_taus()

    def query_signature(record: PlaceRecord):
        sig = record.signature
        if sig is not None and hasher is not None and sig.hasher_id == hasher.hasher_id:
            return sig
        if record.feature is None or hasher is None:
            raise ValueError(
                f"query {record.place_id}: no usable signature and no hasher"
            )
        return hash_vector(hasher, record.feature)

    results: list[QueryResult] = []
    elapsed_us = np.empty(len(queries))
    if isinstance(index, PartitionedIndex):
        if theta is None:
            theta = index.theta_build
        tag = backend_tag or f"partitioned-{index.full.length_bits}"
        hid = index.full.hasher_id
        for i, record in enumerate(queries):
            if record.class_probs is None:
                raise MissingClassProbabilities(
                    f"query {record.place_id} has no class probabilities"
                )
            sig = query_signature(record)
            t0 = time.perf_counter_ns()
            res = query_partitioned(index, sig, record.class_probs, theta)
            elapsed_us[i] = (time.perf_counter_ns() - t0) / 1e3
            results.append(res)
    elif isinstance(index, FlatHammingIndex):
        tag = backend_tag or f"hamming-{index.length_bits}"
        hid = index.hasher_id
        for i, record in enumerate(queries):
            sig = query_signature(record)
            t0 = time.perf_counter_ns()
            res = query_top2(index, sig)
            elapsed_us[i] = (time.perf_counter_ns() - t0) / 1e3
            results.append(res)
    elif isinstance(index, FlatCosineIndex):
        tag = backend_tag or "cosine"
        hid = None
        for i, record in enumerate(queries):
            t0 = time.perf_counter_ns()
            res = query_top2(index, record.feature)
            elapsed_us[i] = (time.perf_counter_ns() - t0) / 1e3
            results.append(res)
    else:
        raise TypeError(f"unsupported index type: {type(index).__name__}")

    timing = Timing(mean_us=float(elapsed_us.mean()),
                    median_us=float(np.median(elapsed_us)))
    frames = [r.frame_index for r in queries]
    return pr_sweep(results, gt, taus, frames, backend_tag=tag, timing=timing,
                    hasher_id=hid)


def compare_backends(reports: Sequence[EvalReport],
                     reference_tag: Optional[str] = None) -> ComparisonTable:
    """Tabulate reports side by side: F1 retention and speed-up relative to a
    reference backend (default: the first report)."""
    if len(reports) < 2:
        raise IncomparableReports("need >= 2 reports to compare")
    ids = {r.query_set_id for r in reports}
    if len(ids) > 1:
        raise IncomparableReports("reports cover different query sets")
    if reference_tag is None:
        reference = reports[0]
    else:
        matches = [r for r in reports if r.backend_tag == reference_tag]
        if not matches:
            raise IncomparableReports(f"no report tagged {reference_tag!r}")
        reference = matches[0]

    rows = []
    for r in reports:
        retention = r.best_f1 / reference.best_f1 if reference.best_f1 > 0 else 0.0
        speedup = None
        if r.timing is not None and reference.timing is not None and r.timing.median_us > 0:
            speedup = reference.timing.median_us / r.timing.median_us
        rows.append(
            ComparisonRow(
                backend_tag=r.backend_tag,
                best_f1=r.best_f1,
                best_tau=r.best_tau,
                retention=retention,
                median_us=r.timing.median_us if r.timing else None,
                mean_us=r.timing.mean_us if r.timing else None,
                speedup=speedup,
            )
        )
    return ComparisonTable(reference_tag=reference.backend_tag, rows=tuple(rows))


# -- serialization -------------------------------------------------------------

def report_to_dict(report: EvalReport) -> dict:
    return {
        "backend_tag": report.backend_tag,
        "best_f1": report.best_f1,
        "best_tau": report.best_tau,
        "f1_selection": report.f1_selection,
        "n_queries": report.n_queries,
        "query_set_id": report.query_set_id,
        "hasher_id": report.hasher_id,
        "timing_us": (
            {"mean": report.timing.mean_us, "median": report.timing.median_us}
            if report.timing else None
        ),
        "curve": [
            {"tau": p.tau, "precision": p.precision, "recall": p.recall,
             "tp": p.tp, "fp": p.fp, "fn": p.fn}
            for p in report.curve
        ],
    }


def write_report_json(report: EvalReport, path) -> None:
    Path(path).write_text(json.dumps(report_to_dict(report), indent=2) + "\n")


def write_pr_csv(report: EvalReport, path) -> None:
    """Two-column (recall, precision) curve for external plotting."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["recall", "precision"])
        for p in report.curve:
            writer.writerow([f"{p.recall:.6f}", f"{p.precision:.6f}"])


def comparison_to_dict(table: ComparisonTable) -> dict:
    return {
        "reference_tag": table.reference_tag,
        "rows": [
            {"backend_tag": r.backend_tag, "best_f1": r.best_f1,
             "best_tau": r.best_tau, "retention": r.retention,
             "median_us": r.median_us, "mean_us": r.mean_us,
             "speedup": r.speedup}
            for r in table.rows
        ],
    }


def write_comparison_json(table: ComparisonTable, path) -> None:
    Path(path).write_text(json.dumps(comparison_to_dict(table), indent=2) + "\n")
