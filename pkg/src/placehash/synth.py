"""Synthetic place-recognition datasets with controllable appearance change.

Each place is a unit-norm random prototype; its reference and query records
are independently perturbed copies, modelling severe appearance change at a
fixed viewpoint. Perturbation strength is the standard deviation of the
additive noise relative to the unit-norm prototype (per-dimension sigma /
sqrt(dim), so the expected noise magnitude equals sigma), which makes the
paired cosine similarity decay smoothly as roughly 1 / (1 + sigma^2).

When classes are requested, paired records share a dominant semantic class
whose probability is forced to at least 0.5 (redrawn when the concentration
would let it fall below); the remaining per-class probabilities are
independent classifier-style outputs skewed toward zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IndexTooSmall, InvalidInput
from .model import FeatureVector, GroundTruth, PlaceRecord

_CHUNK = 256
_MAX_REDRAWS = 1000


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of one synthetic dataset.

    class_concentration controls the sharpness of class-probability vectors:
    the dominant class draws Beta(concentration, 1) (skewed to 1), the others
    Beta(1, concentration) (skewed to 0).
    """

    n_places: int
    dim: int
    seed: int
    perturbation_sigma: float = 0.0
    n_classes: int = 0
    class_concentration: float = 8.0

    def __post_init__(self):
        if self.n_places < 2:
            raise IndexTooSmall(f"n_places must be >= 2, got {self.n_places}")
        if self.dim < 1:
            raise InvalidInput(f"dim must be >= 1, got {self.dim}")
        if self.perturbation_sigma < 0:
            raise InvalidInput("perturbation_sigma must be >= 0")
        if self.n_classes < 0:
            raise InvalidInput("n_classes must be >= 0")
        if self.class_concentration <= 0:
            raise InvalidInput("class_concentration must be > 0")


def _class_probs(rng: np.random.Generator, dominant: int, n_classes: int,
                 concentration: float) -> np.ndarray:
    """One record's class probabilities with the dominant class >= 0.5."""
    for _ in range(_MAX_REDRAWS):
        probs = rng.beta(1.0, concentration, size=n_classes)
        probs[dominant] = rng.beta(concentration, 1.0)
        if probs[dominant] >= 0.5:
            return probs.astype(np.float32)
    probs[dominant] = rng.uniform(0.5, 1.0)
    return probs.astype(np.float32)


def generate(spec: SynthSpec):
    """Generate (reference, query, ground_truth), deterministic in the seed.

    reference[i] and query[i] derive from prototype i; ground truth maps
    frame i to frame i with tolerance 1.
    """
    rng = np.random.default_rng(spec.seed)
    n, dim = spec.n_places, spec.dim
    sigma = spec.perturbation_sigma / np.sqrt(dim)

    ref_values = np.empty((n, dim), dtype=np.float32)
    qry_values = np.empty((n, dim), dtype=np.float32)
    for start in range(0, n, _CHUNK):
        stop = min(start + _CHUNK, n)
        protos = rng.standard_normal((stop - start, dim), dtype=np.float32)
        protos /= np.linalg.norm(protos, axis=1, keepdims=True)
        noise_ref = rng.standard_normal((stop - start, dim), dtype=np.float32)
        noise_qry = rng.standard_normal((stop - start, dim), dtype=np.float32)
        ref_values[start:stop] = protos + sigma * noise_ref
        qry_values[start:stop] = protos + sigma * noise_qry

    if spec.n_classes > 0:
        dominant = rng.integers(0, spec.n_classes, size=n)
        ref_probs = [
            _class_probs(rng, int(dominant[i]), spec.n_classes,
                         spec.class_concentration)
            for i in range(n)
        ]
        qry_probs = [
            _class_probs(rng, int(dominant[i]), spec.n_classes,
                         spec.class_concentration)
            for i in range(n)
        ]
    else:
        ref_probs = qry_probs = [None] * n

    layer = f"synth-{dim}"
    reference = [
        PlaceRecord(place_id=i, frame_index=i,
                    feature=FeatureVector(ref_values[i], layer_tag=layer),
                    class_probs=ref_probs[i])
        for i in range(n)
    ]
    query = [
        PlaceRecord(place_id=i, frame_index=i,
                    feature=FeatureVector(qry_values[i], layer_tag=layer),
                    class_probs=qry_probs[i])
        for i in range(n)
    ]
    gt = GroundTruth(pairs={i: i for i in range(n)}, tolerance_frames=1)
    return reference, query, gt
