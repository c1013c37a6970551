"""Binarized AU codes: exact-match retrieval, score similarity, class statistics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

if TYPE_CHECKING:
    from .dataset import Sample

AU_THRESHOLD = 0.5


def binarize(au_scores: Sequence[float] | np.ndarray, threshold: float = AU_THRESHOLD) -> np.ndarray:
    """Threshold AU scores into a 0/1 code. Scores equal to the threshold map to 1."""
    scores = np.asarray(au_scores, dtype=np.float64)
    if scores.ndim != 1:
        raise ValueError("au_scores must be a 1-d vector")
    if scores.size and (float(scores.min()) < 0.0 or float(scores.max()) > 1.0):
        raise ValueError("au_scores must lie in [0, 1]")
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    return (scores >= threshold).astype(np.uint8)


def code_key(code: Sequence[int] | np.ndarray) -> bytes:
    """Hashable exact-match key for an AU code."""
    return np.asarray(code, dtype=np.uint8).tobytes()


@dataclass(frozen=True, eq=False)
class AuIndex:
    """Exact-match map from AU code to ascending sample ids, for one domain.

    Immutable after construction; concurrent read-only queries are safe.
    """

    groups: dict[bytes, tuple[int, ...]]
    domain: str
    K: int | None

    def __len__(self) -> int:
        return len(self.groups)


def build_index(samples: Iterable["Sample"], domain: str) -> AuIndex:
    """Group samples of one domain by their exact AU code."""
    groups: dict[bytes, list[int]] = {}
    K: int | None = None
    for s in samples:
        if s.domain != domain:
            raise ValueError(f"sample {s.id} is from domain {s.domain!r}, expected {domain!r}")
        if K is None:
            K = int(s.au_code.size)
        elif int(s.au_code.size) != K:
            raise ValueError("inconsistent AU code lengths")
        groups.setdefault(code_key(s.au_code), []).append(int(s.id))
    return AuIndex({k: tuple(sorted(v)) for k, v in groups.items()}, domain, K)


def query_exact(index: AuIndex, code: Sequence[int] | np.ndarray) -> list[int]:
    """All sample ids whose code equals the query bitwise, ascending."""
    arr = np.asarray(code, dtype=np.uint8)
    if arr.ndim != 1:
        raise ValueError("code must be a 1-d bit vector")
    if index.K is not None and int(arr.size) != index.K:
        raise ValueError(f"code length {arr.size} does not match index K={index.K}")
    return list(index.groups.get(code_key(arr), ()))


def au_similarity(a: Sequence[float] | np.ndarray, b: Sequence[float] | np.ndarray) -> float:
    """Cosine similarity between two AU score vectors; 0 if either has zero norm."""
    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape or va.ndim != 1:
        raise ValueError("score vectors must be 1-d and share length")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na <= 0.0 or nb <= 0.0:
        return 0.0
    sim = float(np.dot(va, vb)) / (na * nb)
    # guard float overshoot just past 1
    return min(1.0, max(0.0, sim))


def au_class_distribution(samples: Sequence["Sample"], n_classes: int) -> np.ndarray:
    """Per-class AU occurrence frequencies, shape (n_classes, K).

    Entry (c, k) is the fraction of class-c samples whose code has bit k set;
    rows of classes with no samples are all zeros.
    """
    if n_classes < 1:
        raise ValueError("n_classes must be positive")
    if not samples:
        raise ValueError("no samples")
    K = int(samples[0].au_code.size)
    counts = np.zeros(n_classes, dtype=np.int64)
    occ = np.zeros((n_classes, K), dtype=np.float64)
    for s in samples:
        if s.label is None:
            raise ValueError(f"sample {s.id} carries no label")
        if not 0 <= s.label < n_classes:
            raise ValueError(f"sample {s.id} label {s.label} out of range")
        counts[s.label] += 1
        occ[s.label] += s.au_code
    dist = np.zeros((n_classes, K), dtype=np.float64)
    nonempty = counts > 0
    dist[nonempty] = occ[nonempty] / counts[nonempty, None]
    return dist
