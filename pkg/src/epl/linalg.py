"""Dense vector primitives: normalization, cosine similarity, seeded RNG.

All arithmetic is float64. Randomness comes from numpy's PCG64 generator
seeded through SeedSequence, so a given (seed, stream) pair yields the same
draws on every platform. Returned arrays are fresh; inputs are never
mutated.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatchError, InvalidShapeError, ZeroVectorError

EPS_NORM = 1e-12


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Deterministic PCG64 generator for a seed plus optional stream ids."""
    key = [int(seed)] + [int(s) for s in stream]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))


def as_f64(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float64)


def l2_normalize(v, eps: float = EPS_NORM) -> np.ndarray:
    """Return v / ||v||_2, raising ZeroVectorError when ||v|| <= eps."""
    v = as_f64(v)
    if v.ndim != 1:
        raise InvalidShapeError(f"expected a 1-d vector, got shape {v.shape}")
    n = float(np.linalg.norm(v))
    if n <= eps:
        raise ZeroVectorError(f"norm {n!r} is at or below eps {eps!r}")
    return v / n


def normalize_rows(m, eps: float = EPS_NORM) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalize a matrix; returns (unit_rows, original_norms)."""
    m = as_f64(m)
    if m.ndim != 2:
        raise InvalidShapeError(f"expected a 2-d matrix, got shape {m.shape}")
    norms = np.linalg.norm(m, axis=1)
    bad = np.flatnonzero(norms <= eps)
    if bad.size:
        raise ZeroVectorError(f"row {int(bad[0])} has norm {norms[bad[0]]!r}")
    return m / norms[:, None], norms


def cosine_similarity(a, b, eps: float = EPS_NORM) -> float:
    """Cosine of the angle between a and b, clamped to [-1, 1]."""
    a = as_f64(a)
    b = as_f64(b)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"shapes {a.shape} and {b.shape} differ")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na <= eps or nb <= eps:
        raise ZeroVectorError("cosine of a zero vector is undefined")
    return float(np.clip(float(a @ b) / (na * nb), -1.0, 1.0))


def similarity_matrix(features, prototypes, eps: float = EPS_NORM) -> np.ndarray:
    """Pairwise cosine similarities: rows of features vs rows of prototypes.

    Returns a (B, N) matrix with entries clamped to [-1, 1].
    """
    f = as_f64(features)
    p = as_f64(prototypes)
    if f.ndim != 2 or p.ndim != 2:
        raise InvalidShapeError("similarity_matrix expects two 2-d matrices")
    if f.shape[1] != p.shape[1]:
        raise DimensionMismatchError(
            f"feature dim {f.shape[1]} != prototype dim {p.shape[1]}"
        )
    fh, _ = normalize_rows(f, eps)
    ph, _ = normalize_rows(p, eps)
    return np.clip(fh @ ph.T, -1.0, 1.0)


def random_unit_vector(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform direction on the unit sphere: Gaussian draw then normalize."""
    if dim < 1:
        raise InvalidShapeError(f"dim must be >= 1, got {dim}")
    while True:
        g = rng.standard_normal(dim)
        n = float(np.linalg.norm(g))
        if n > EPS_NORM:
            return g / n


def random_unit_rows(n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Matrix of n independent uniform unit directions."""
    if n < 1:
        raise InvalidShapeError(f"row count must be >= 1, got {n}")
    return np.stack([random_unit_vector(dim, rng) for _ in range(n)])
