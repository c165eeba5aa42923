"""Read-only evaluation: verification, identification, and diagnostics.

Nothing in this module mutates model state. Scores are cosine similarities
between L2-normalized embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .encoder import MlpEncoder, forward
from .errors import (
    DimensionMismatchError,
    EmptyClassError,
    EmptyInputError,
    InvalidShapeError,
)
from .linalg import as_f64, normalize_rows

HISTOGRAM_BIN_WIDTH = 0.01


@dataclass
class EmbeddingSet:
    features: np.ndarray  # (M, d), unit rows
    labels: np.ndarray
    is_hard: np.ndarray


@dataclass
class HistogramSummary:
    bin_edges: np.ndarray
    counts: np.ndarray
    peak: float  # center of the fullest bin, lowest bin on ties
    mean: float


def embed(encoder: MlpEncoder, ds: Dataset) -> EmbeddingSet:
    """Encode every sample and L2-normalize the rows."""
    if len(ds) == 0:
        raise EmptyInputError("cannot embed an empty dataset")
    feats, _ = forward(encoder, ds.inputs)
    unit, _ = normalize_rows(feats)
    return EmbeddingSet(unit, ds.labels.copy(), ds.is_hard.copy())


def pair_scores(emb: EmbeddingSet, pairs: np.ndarray) -> np.ndarray:
    """Cosine score per index pair; rows of emb.features are unit length."""
    pairs = np.asarray(pairs, dtype=np.int64)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise InvalidShapeError(f"pairs must be (P, 2), got {pairs.shape}")
    a = emb.features[pairs[:, 0]]
    b = emb.features[pairs[:, 1]]
    return np.clip((a * b).sum(axis=1), -1.0, 1.0)


def tar_at_far(genuine_scores, impostor_scores, far: float):
    """True-accept rate at a false-accept rate, with a pinned threshold rule.

    The threshold is the k-th largest impostor score with
    k = floor(far * |impostor|); when k = 0 it sits just above the largest
    impostor score so no impostor is accepted. Acceptance uses >=.
    Returns (tar, threshold).
    """
    g = as_f64(genuine_scores)
    s = as_f64(impostor_scores)
    if g.size == 0 or s.size == 0:
        raise EmptyInputError("tar_at_far needs both score sets non-empty")
    if not 0.0 <= far <= 1.0:
        raise InvalidShapeError(f"far must be in [0, 1], got {far!r}")
    desc = np.sort(s)[::-1]
    k = int(np.floor(far * s.size))
    if k >= 1:
        threshold = float(desc[min(k, s.size) - 1])
    else:
        threshold = float(np.nextafter(desc[0], np.inf))
    tar = float(np.mean(g >= threshold))
    return tar, threshold


def rank1_identification(probe: EmbeddingSet, gallery: np.ndarray,
                         gallery_labels) -> float:
    """Fraction of probes whose nearest gallery row shares their label.

    Ties go to the lowest gallery index.
    """
    gal = as_f64(gallery)
    if gal.ndim != 2 or gal.shape[1] != probe.features.shape[1]:
        raise DimensionMismatchError("gallery shape does not match embeddings")
    if gal.shape[0] == 0:
        raise EmptyInputError("empty gallery")
    gal_labels = np.asarray(gallery_labels, dtype=np.int64)
    galh, _ = normalize_rows(gal)
    sims = probe.features @ galh.T
    best = sims.argmax(axis=1)  # argmax takes the first maximum on ties
    return float(np.mean(gal_labels[best] == probe.labels))


def top_k_negative_similarities(emb: EmbeddingSet, prototypes, k: int):
    """Per sample, the k largest cosines to other-class prototype rows.

    Returns (values (M, k) sorted descending per row, HistogramSummary over
    all M*k values with bin width 0.01 on [-1, 1]).
    """
    proto = as_f64(prototypes)
    if k < 1:
        raise InvalidShapeError(f"k must be >= 1, got {k}")
    if proto.shape[0] - 1 < k:
        raise InvalidShapeError(f"k={k} but only {proto.shape[0] - 1} negatives")
    ph, _ = normalize_rows(proto)
    sims = np.clip(emb.features @ ph.T, -1.0, 1.0)
    rows = np.arange(sims.shape[0])
    sims[rows, emb.labels] = -np.inf
    values = np.sort(sims, axis=1)[:, ::-1][:, :k]
    edges = np.linspace(-1.0, 1.0, int(round(2.0 / HISTOGRAM_BIN_WIDTH)) + 1)
    counts, edges = np.histogram(values.ravel(), bins=edges)
    peak_bin = int(counts.argmax())
    peak = float((edges[peak_bin] + edges[peak_bin + 1]) / 2.0)
    return values, HistogramSummary(edges, counts, peak, float(values.mean()))


def centroid_alignment(emb: EmbeddingSet, prototypes,
                       use_normal_only: bool = True) -> np.ndarray:
    """Cosine between each prototype row and its class centroid.

    The centroid is the normalized mean embedding of the class, restricted
    to non-hard samples when use_normal_only is set. EmptyClass when a
    class has no eligible samples.
    """
    proto = as_f64(prototypes)
    n = proto.shape[0]
    if proto.ndim != 2 or proto.shape[1] != emb.features.shape[1]:
        raise DimensionMismatchError("prototype shape does not match embeddings")
    ph, _ = normalize_rows(proto)
    out = np.empty(n)
    for c in range(n):
        mask = emb.labels == c
        if use_normal_only:
            mask = mask & ~emb.is_hard
        if not mask.any():
            raise EmptyClassError(f"class {c} has no eligible samples")
        mean = emb.features[mask].mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm <= 1e-12:
            raise EmptyClassError(f"class {c} centroid vanished")
        out[c] = float(np.clip((mean / norm) @ ph[c], -1.0, 1.0))
    return out
