"""AU-guided pseudo-labeling of target samples via exact code retrieval.

Three assignment schemes share one retrieval relation (equal AU codes across
domains): source-query hard labels, target-query majority hard labels, and
target-query soft label histograms. Collisions resolve by majority vote with
ties going to the lowest class index, so assignments are deterministic.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .au_index import AuIndex, build_index, query_exact
from .dataset import SOURCE, TARGET, Dataset, Sample, fmt17

STRATEGIES = ("s-hard", "t-hard", "t-soft", "s-hard+t-soft")
# "all" keeps every field; used when writing annotation files for later selection
MERGE_MODES = STRATEGIES + ("all",)


@dataclass(eq=False)
class Annotation:
    """Pseudo-label record for one target sample.

    ``support`` counts the retrieved source matches; ``fallback`` marks records
    produced by the nearest-code fallback rather than an exact twin.
    """

    target_id: int
    s_hard: int | None = None
    t_hard: int | None = None
    t_soft: np.ndarray | None = None
    support: int = 0
    fallback: bool = False


def _majority(votes: Counter) -> int:
    top = max(votes.values())
    return min(label for label, count in votes.items() if count == top)


def _fallback_ids(code: np.ndarray, index: AuIndex) -> list[int]:
    """Nearest-code retrieval capped at Hamming distance 1: the lowest-id match."""
    found: list[int] = []
    probe = np.array(code, dtype=np.uint8)
    for k in range(probe.size):
        probe[k] ^= 1
        found.extend(query_exact(index, probe))
        probe[k] ^= 1
    return [min(found)] if found else []


def s_hard_assign(source: Dataset, target: Dataset, target_index: AuIndex,
                  fallback: bool = False) -> list[Annotation]:
    """Source-query hard labels: each source sample casts its label onto every
    target sample sharing its exact AU code; targets take the majority vote."""
    votes: dict[int, Counter] = {t.id: Counter() for t in target.samples}
    for s in source.samples:
        for tid in query_exact(target_index, s.au_code):
            votes[tid][s.label] += 1

    source_index = build_index(source.samples, SOURCE) if fallback else None
    source_labels = {s.id: s.label for s in source.samples}
    out: list[Annotation] = []
    for t in sorted(target.samples, key=lambda s: s.id):
        c = votes[t.id]
        if c:
            out.append(Annotation(t.id, s_hard=_majority(c), support=sum(c.values())))
            continue
        if fallback:
            ids = _fallback_ids(t.au_code, source_index)
            if ids:
                out.append(Annotation(t.id, s_hard=source_labels[ids[0]], support=len(ids),
                                      fallback=True))
                continue
        out.append(Annotation(t.id))
    return out


def _retrieve(t: Sample, source_index: AuIndex, fallback: bool) -> tuple[list[int], bool]:
    ids = query_exact(source_index, t.au_code)
    if ids or not fallback:
        return ids, False
    ids = _fallback_ids(t.au_code, source_index)
    return ids, bool(ids)


def t_hard_assign(target: Dataset, source_index: AuIndex, source_labels: Mapping[int, int],
                  fallback: bool = False) -> list[Annotation]:
    """Target-query hard labels: the most frequent label among exact-code source
    matches, ties to the lowest class index."""
    out: list[Annotation] = []
    for t in sorted(target.samples, key=lambda s: s.id):
        ids, used_fb = _retrieve(t, source_index, fallback)
        if not ids:
            out.append(Annotation(t.id))
            continue
        votes = Counter(source_labels[i] for i in ids)
        out.append(Annotation(t.id, t_hard=_majority(votes), support=len(ids), fallback=used_fb))
    return out


def t_soft_assign(target: Dataset, source_index: AuIndex, source_labels: Mapping[int, int],
                  n_classes: int, fallback: bool = False) -> list[Annotation]:
    """Target-query soft labels: the normalized label histogram of the matches."""
    out: list[Annotation] = []
    for t in sorted(target.samples, key=lambda s: s.id):
        ids, used_fb = _retrieve(t, source_index, fallback)
        if not ids:
            out.append(Annotation(t.id))
            continue
        hist = np.bincount([source_labels[i] for i in ids], minlength=n_classes).astype(np.float64)
        out.append(Annotation(t.id, t_soft=hist / hist.sum(), support=len(ids), fallback=used_fb))
    return out


def combine_annotations(s_hard_list: Sequence[Annotation], t_hard_list: Sequence[Annotation],
                        t_soft_list: Sequence[Annotation],
                        strategy: str = "s-hard+t-soft") -> list[Annotation]:
    """Merge per-sample fields of the three schemes and keep only the fields the
    chosen strategy lets the trainer consume (``"all"`` keeps everything)."""
    if strategy not in MERGE_MODES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {MERGE_MODES}")
    if not len(s_hard_list) == len(t_hard_list) == len(t_soft_list):
        raise ValueError("annotation lists differ in length")
    keep_s = strategy in ("s-hard", "s-hard+t-soft", "all")
    keep_t = strategy in ("t-hard", "all")
    keep_soft = strategy in ("t-soft", "s-hard+t-soft", "all")
    merged: list[Annotation] = []
    for a_s, a_t, a_k in zip(s_hard_list, t_hard_list, t_soft_list):
        if not a_s.target_id == a_t.target_id == a_k.target_id:
            raise ValueError(f"annotation id mismatch: {a_s.target_id}/{a_t.target_id}/{a_k.target_id}")
        if not a_s.support == a_t.support == a_k.support:
            raise ValueError(f"inconsistent support counts for target {a_s.target_id}")
        merged.append(Annotation(
            a_s.target_id,
            s_hard=a_s.s_hard if keep_s else None,
            t_hard=a_t.t_hard if keep_t else None,
            t_soft=a_k.t_soft if keep_soft else None,
            support=a_s.support,
            fallback=a_s.fallback or a_t.fallback or a_k.fallback,
        ))
    return merged


def annotate_datasets(source: Dataset, target: Dataset, strategy: str = "s-hard+t-soft",
                      fallback: bool = False) -> list[Annotation]:
    """Run all three schemes over a source/target pair and merge per strategy."""
    source_index = build_index(source.samples, SOURCE)
    target_index = build_index(target.samples, TARGET)
    labels = {s.id: s.label for s in source.samples}
    s_list = s_hard_assign(source, target, target_index, fallback=fallback)
    t_list = t_hard_assign(target, source_index, labels, fallback=fallback)
    k_list = t_soft_assign(target, source_index, labels, source.dims.C, fallback=fallback)
    return combine_annotations(s_list, t_list, k_list, strategy)


def resolve_strategy_fields(ann: Annotation, strategy: str) -> tuple[int | None, np.ndarray | None]:
    """The (hard label, soft label) pair a trainer may read under a strategy."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    hard = None
    if strategy in ("s-hard", "s-hard+t-soft"):
        hard = ann.s_hard
    elif strategy == "t-hard":
        hard = ann.t_hard
    soft = ann.t_soft if strategy in ("t-soft", "s-hard+t-soft") else None
    return hard, soft


def _annotation_line(a: Annotation) -> str:
    s_hard = "null" if a.s_hard is None else str(int(a.s_hard))
    t_hard = "null" if a.t_hard is None else str(int(a.t_hard))
    if a.t_soft is None:
        t_soft = "null"
    else:
        t_soft = "[" + ",".join(fmt17(v) for v in a.t_soft) + "]"
    return (f'{{"target_id":{int(a.target_id)},"s_hard":{s_hard},"t_hard":{t_hard},'
            f'"t_soft":{t_soft},"support":{int(a.support)}}}')


def write_annotations(annotations: Sequence[Annotation], path: str | Path) -> None:
    body = "\n".join(_annotation_line(a) for a in annotations)
    Path(path).write_text(body + ("\n" if body else ""), encoding="utf-8")


def read_annotations(path: str | Path) -> list[Annotation]:
    out: list[Annotation] = []
    for line in Path(path).read_text(encoding="utf-8").split("\n"):
        if not line.strip():
            continue
        rec = json.loads(line)
        soft = None if rec["t_soft"] is None else np.asarray(rec["t_soft"], dtype=np.float64)
        out.append(Annotation(rec["target_id"], s_hard=rec["s_hard"], t_hard=rec["t_hard"],
                              t_soft=soft, support=rec["support"]))
    return out
