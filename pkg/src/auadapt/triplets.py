"""Offline cross-domain triplet mining with AU-similarity hard negatives.

Anchors pair with an opposite-domain positive of equal AU code and an
opposite-domain negative of different code. Negatives are drawn from the hard
pool (AU cosine similarity strictly above tau_n); an exhausted hard pool falls
back to the full code-different candidate list so anchors are never dropped
for lack of hard negatives. Per-anchor random streams are keyed by
(seed, direction, anchor_id), so results do not depend on iteration order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .au_index import au_similarity, code_key
from .dataset import Dataset, Sample, samples_by_id

SOURCE_ANCHORED = "source"
TARGET_ANCHORED = "target"
ANCHOR_MODES = ("source", "target", "both")


@dataclass(frozen=True)
class Triplet:
    """Anchor/positive/negative sample ids; direction names the anchor domain."""

    anchor_id: int
    positive_id: int
    negative_id: int
    direction: str


@dataclass(frozen=True)
class MiningConfig:
    tau_n: float = 0.5
    anchors: str = "both"
    seed: int = 0
    triplets_per_anchor: int = 1

    def __post_init__(self):
        if not 0.0 <= self.tau_n <= 1.0:
            raise ValueError(f"tau_n {self.tau_n} outside [0, 1]")
        if self.anchors not in ANCHOR_MODES:
            raise ValueError(f"anchors must be one of {ANCHOR_MODES}, got {self.anchors!r}")
        if self.triplets_per_anchor < 1:
            raise ValueError("triplets_per_anchor must be positive")
        if self.seed < 0:
            raise ValueError("seed must be a non-negative integer")


def hard_negative_pool(anchor: Sample, candidates: Sequence[Sample], tau_n: float) -> list[int]:
    """Ids of code-different candidates whose AU similarity to the anchor is
    strictly above tau_n, ascending; the full candidate list if none qualify."""
    hard = sorted(c.id for c in candidates
                  if au_similarity(anchor.au_scores, c.au_scores) > tau_n)
    return hard if hard else sorted(c.id for c in candidates)


def _normalized_scores(samples: Sequence[Sample]) -> np.ndarray:
    M = np.stack([s.au_scores for s in samples])
    norms = np.linalg.norm(M, axis=1)
    out = np.zeros_like(M)
    ok = norms > 0.0
    out[ok] = M[ok] / norms[ok, None]
    return out


def mine_triplets(source: Dataset, target: Dataset, config: MiningConfig) -> list[Triplet]:
    """Mine triplets for every eligible anchor, deterministically.

    Anchors without an equal-code opposite-domain sample (or with no
    code-different candidate at all) are skipped. Output is sorted by
    (direction, anchor_id); repeated draws per anchor keep draw order.
    """
    if source.dims.K != target.dims.K:
        raise ValueError(f"AU count mismatch: source K={source.dims.K}, target K={target.dims.K}")

    plan = []
    if config.anchors in ("source", "both"):
        plan.append((0, SOURCE_ANCHORED, source.samples, target.samples))
    if config.anchors in ("target", "both"):
        plan.append((1, TARGET_ANCHORED, target.samples, source.samples))

    out: list[Triplet] = []
    for dir_idx, direction, anchors, candidates in plan:
        if not anchors or not candidates:
            continue
        cands = sorted(candidates, key=lambda s: s.id)
        cand_ids = np.array([c.id for c in cands], dtype=np.int64)
        cand_norm = _normalized_scores(cands)
        groups: dict[bytes, np.ndarray] = {}
        for pos, c in enumerate(cands):
            groups.setdefault(code_key(c.au_code), []).append(pos)  # type: ignore[arg-type]
        groups = {k: np.asarray(v, dtype=np.int64) for k, v in groups.items()}
        n_cand = len(cands)

        for a in anchors:
            pos_positions = groups.get(code_key(a.au_code))
            if pos_positions is None:
                continue
            neg_mask = np.ones(n_cand, dtype=bool)
            neg_mask[pos_positions] = False
            neg_positions = np.flatnonzero(neg_mask)
            if neg_positions.size == 0:
                continue
            norm = float(np.linalg.norm(a.au_scores))
            a_vec = a.au_scores / norm if norm > 0.0 else np.zeros_like(a.au_scores)
            sims = cand_norm @ a_vec
            hard = neg_positions[sims[neg_positions] > config.tau_n]
            pool = hard if hard.size else neg_positions
            rng = np.random.default_rng([config.seed, dir_idx, a.id])
            for _ in range(config.triplets_per_anchor):
                p = int(cand_ids[pos_positions[rng.integers(pos_positions.size)]])
                n = int(cand_ids[pool[rng.integers(pool.size)]])
                out.append(Triplet(a.id, p, n, direction))

    out.sort(key=lambda t: (t.direction, t.anchor_id))
    return out


@dataclass
class TripletReport:
    n_triplets: int
    violations: list[tuple[int, str]]

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_triplets(triplets: Sequence[Triplet], source: Dataset, target: Dataset) -> TripletReport:
    """Check every triplet invariant; findings carry the triplet index."""
    src = samples_by_id(source)
    tgt = samples_by_id(target)
    violations: list[tuple[int, str]] = []
    for i, t in enumerate(triplets):
        if t.direction not in (SOURCE_ANCHORED, TARGET_ANCHORED):
            violations.append((i, f"unknown direction {t.direction!r}"))
            continue
        anchor_pool, other_pool = (src, tgt) if t.direction == SOURCE_ANCHORED else (tgt, src)
        a = anchor_pool.get(t.anchor_id)
        p = other_pool.get(t.positive_id)
        n = other_pool.get(t.negative_id)
        if a is None:
            violations.append((i, f"anchor {t.anchor_id} not in {t.direction} domain"))
        if p is None:
            violations.append((i, f"positive {t.positive_id} not in opposite domain"))
        if n is None:
            violations.append((i, f"negative {t.negative_id} not in opposite domain"))
        if a is None or p is None or n is None:
            continue
        if not np.array_equal(a.au_code, p.au_code):
            violations.append((i, "positive code differs from anchor"))
        if np.array_equal(a.au_code, n.au_code):
            violations.append((i, "negative code equals anchor"))
    return TripletReport(len(triplets), violations)


def write_triplets(triplets: Sequence[Triplet], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["direction", "anchor_id", "positive_id", "negative_id"])
        for t in triplets:
            w.writerow([t.direction, t.anchor_id, t.positive_id, t.negative_id])


def read_triplets(path: str | Path) -> list[Triplet]:
    out: list[Triplet] = []
    with Path(path).open("r", encoding="utf-8", newline="") as f:
        for row in csv.DictReader(f):
            out.append(Triplet(int(row["anchor_id"]), int(row["positive_id"]),
                               int(row["negative_id"]), row["direction"]))
    return out
