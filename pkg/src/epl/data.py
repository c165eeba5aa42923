"""Synthetic hypersphere datasets with injected hard samples.

Each class gets a uniform random unit direction as its center. A normal
sample is normalize(center + sigma * gaussian). A hard sample is pulled
toward the confuser, the nearest other class center:

    normalize((1 - pull) * own + pull * confuser + sigma * gaussian)

The first round(hard_fraction * samples_per_class) indices of every class
block are the hard ones. Files round-trip bit-exactly through repr-precision
decimals.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyClassError, FormatError, InvalidSpecError
from .linalg import as_f64, l2_normalize, make_rng, random_unit_rows

HEADER_PREFIX = "epl-dataset v1"


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 50
    samples_per_class: int = 100
    input_dim: int = 32
    noise_sigma: float = 0.25
    hard_fraction: float = 0.1
    hard_pull: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 1:
            raise InvalidSpecError(f"num_classes must be >= 1, got {self.num_classes}")
        if self.samples_per_class < 1:
            raise InvalidSpecError("samples_per_class must be >= 1")
        if self.input_dim < 2:
            raise InvalidSpecError(f"input_dim must be >= 2, got {self.input_dim}")
        if self.noise_sigma < 0.0:
            raise InvalidSpecError("noise_sigma must be >= 0")
        if not 0.0 <= self.hard_fraction < 1.0:
            raise InvalidSpecError("hard_fraction must be in [0, 1)")
        if not 0.0 < self.hard_pull <= 1.0:
            raise InvalidSpecError("hard_pull must be in (0, 1]")
        if self.hard_fraction > 0.0 and self.num_classes < 2:
            raise InvalidSpecError("hard samples need at least 2 classes")


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    is_hard: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.inputs = as_f64(self.inputs)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.is_hard = np.asarray(self.is_hard, dtype=bool)
        n = self.inputs.shape[0]
        if self.labels.shape != (n,) or self.is_hard.shape != (n,):
            raise InvalidSpecError("inputs, labels, is_hard lengths differ")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise InvalidSpecError("label outside [0, num_classes)")

    def __len__(self) -> int:
        return self.inputs.shape[0]


def hard_count(spec: SyntheticSpec) -> int:
    return int(round(spec.hard_fraction * spec.samples_per_class))


def class_centers(spec: SyntheticSpec) -> np.ndarray:
    """The centers the generator would draw for this spec, (N, d)."""
    rng = make_rng(spec.seed, 10)
    return random_unit_rows(spec.num_classes, spec.input_dim, rng)


def confuser_of(centers: np.ndarray) -> np.ndarray:
    """Index of the nearest other center (max cosine) for every class."""
    sims = centers @ centers.T
    np.fill_diagonal(sims, -np.inf)
    return sims.argmax(axis=1)


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Deterministic dataset for a spec; class-major sample order."""
    centers = class_centers(spec)
    confusers = confuser_of(centers) if spec.num_classes > 1 else None
    n_hard = hard_count(spec)
    rng = make_rng(spec.seed, 11)
    rows, labels, hard = [], [], []
    for c in range(spec.num_classes):
        own = centers[c]
        for k in range(spec.samples_per_class):
            noise = spec.noise_sigma * rng.standard_normal(spec.input_dim)
            if k < n_hard:
                base = (1.0 - spec.hard_pull) * own + spec.hard_pull * centers[confusers[c]]
                rows.append(l2_normalize(base + noise))
                hard.append(True)
            else:
                rows.append(l2_normalize(own + noise))
                hard.append(False)
            labels.append(c)
    return Dataset(np.stack(rows), labels, hard, spec.num_classes)


def save_dataset(ds: Dataset, path) -> None:
    """Text format: header line, then label,is_hard,v0,...,v{d-1} per row."""
    d = ds.inputs.shape[1]
    lines = [f"{HEADER_PREFIX} N={ds.num_classes} dim={d}"]
    for k in range(len(ds)):
        vals = ",".join(repr(float(v)) for v in ds.inputs[k])
        lines.append(f"{int(ds.labels[k])},{int(ds.is_hard[k])},{vals}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path) -> Dataset:
    """Inverse of save_dataset; FormatError on any malformed content."""
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines:
        raise FormatError("empty dataset file")
    head = lines[0].split()
    if len(head) != 4 or " ".join(head[:2]) != HEADER_PREFIX:
        raise FormatError(f"bad header {lines[0]!r}")
    try:
        n = int(head[2].removeprefix("N="))
        dim = int(head[3].removeprefix("dim="))
    except ValueError as exc:
        raise FormatError(f"bad header {lines[0]!r}") from exc
    if not head[2].startswith("N=") or not head[3].startswith("dim="):
        raise FormatError(f"bad header {lines[0]!r}")
    inputs, labels, hard = [], [], []
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2 + dim:
            raise FormatError(f"line {ln}: expected {2 + dim} fields, got {len(parts)}")
        try:
            label = int(parts[0])
            flag = int(parts[1])
            vec = [float(p) for p in parts[2:]]
        except ValueError as exc:
            raise FormatError(f"line {ln}: unparsable field") from exc
        if not 0 <= label < n:
            raise FormatError(f"line {ln}: label {label} outside [0, {n})")
        if flag not in (0, 1):
            raise FormatError(f"line {ln}: is_hard must be 0 or 1")
        labels.append(label)
        hard.append(bool(flag))
        inputs.append(vec)
    if not inputs:
        raise FormatError("dataset file has no sample rows")
    return Dataset(np.asarray(inputs), labels, hard, n)


def split_dataset(ds: Dataset, test_fraction: float, rng: np.random.Generator):
    """Stratified split; returns (train, test).

    Per class the shuffled first floor(test_fraction * count) samples go to
    test. InvalidSpec when any class would leave either side empty.
    """
    if not 0.0 < test_fraction < 1.0:
        raise InvalidSpecError("test_fraction must be in (0, 1)")
    test_idx, train_idx = [], []
    for c in range(ds.num_classes):
        idx = np.flatnonzero(ds.labels == c)
        if idx.size == 0:
            raise EmptyClassError(f"class {c} has no samples")
        k = int(np.floor(test_fraction * idx.size))
        if k == 0 or k == idx.size:
            raise InvalidSpecError(
                f"class {c}: split {test_fraction} leaves an empty side"
            )
        perm = rng.permutation(idx.size)
        test_idx.extend(idx[perm[:k]])
        train_idx.extend(idx[perm[k:]])
    def take(indices):
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(ds.inputs[indices], ds.labels[indices],
                       ds.is_hard[indices], ds.num_classes)
    return take(train_idx), take(test_idx)


def make_verification_pairs(ds: Dataset, pairs_per_kind: int,
                            rng: np.random.Generator):
    """Index pairs for verification: (genuine (P, 2), impostor (P, 2)).

    Genuine: uniform class, two distinct members. Impostor: two distinct
    uniform classes, one member each. Every class must have >= 2 samples.
    """
    if pairs_per_kind < 1:
        raise InvalidSpecError("pairs_per_kind must be >= 1")
    if ds.num_classes < 2:
        raise InvalidSpecError("verification pairs need >= 2 classes")
    by_class = [np.flatnonzero(ds.labels == c) for c in range(ds.num_classes)]
    for c, idx in enumerate(by_class):
        if idx.size < 2:
            raise InvalidSpecError(f"class {c} has {idx.size} samples, needs >= 2")
    genuine = np.empty((pairs_per_kind, 2), dtype=np.int64)
    impostor = np.empty((pairs_per_kind, 2), dtype=np.int64)
    for k in range(pairs_per_kind):
        c = int(rng.integers(ds.num_classes))
        genuine[k] = rng.choice(by_class[c], size=2, replace=False)
    for k in range(pairs_per_kind):
        c1, c2 = rng.choice(ds.num_classes, size=2, replace=False)
        impostor[k, 0] = by_class[c1][rng.integers(by_class[c1].size)]
        impostor[k, 1] = by_class[c2][rng.integers(by_class[c2].size)]
    return genuine, impostor
