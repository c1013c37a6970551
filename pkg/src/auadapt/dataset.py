"""Domain-tagged sample records and their line-delimited text format.

A dataset file starts with one header line {"D":..,"K":..,"C":..,"class_names":[..]}
followed by one record per line with fixed field order
{"id","domain","features","au_scores","label"}. Floats are written in decimal
with 17 significant digits so that a save/load cycle is bit-exact.

Labels of target-domain records are routed into a separate ``hidden_label``
slot on load: training code only ever sees visible ``label`` fields, which
exist on source samples alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .au_index import AU_THRESHOLD, binarize

SOURCE = "source"
TARGET = "target"
DOMAINS = (SOURCE, TARGET)

_RECORD_FIELDS = ("id", "domain", "features", "au_scores", "label")


class DatasetError(ValueError):
    """A dataset file or record violates the schema."""


def fmt17(x: float) -> str:
    """Decimal rendering with 17 significant digits (exact float64 round-trip)."""
    return format(float(x), ".17g")


@dataclass(frozen=True)
class Dims:
    D: int
    K: int
    C: int


@dataclass(frozen=True, eq=False)
class Sample:
    """One face-level record: feature vector, AU scores, derived AU code.

    ``label`` is the visible ground truth (source domain only). ``hidden_label``
    carries the held-out target label and must only be read by evaluation.
    """

    id: int
    domain: str
    features: np.ndarray
    au_scores: np.ndarray
    au_code: np.ndarray
    label: int | None = None
    hidden_label: int | None = None


def make_sample(
    sample_id: int,
    domain: str,
    features: Sequence[float] | np.ndarray,
    au_scores: Sequence[float] | np.ndarray,
    label: int | None = None,
    hidden_label: int | None = None,
    threshold: float = AU_THRESHOLD,
) -> Sample:
    """Build a Sample with its AU code derived from the scores."""
    feats = np.asarray(features, dtype=np.float64)
    scores = np.asarray(au_scores, dtype=np.float64)
    code = binarize(scores, threshold)
    for arr in (feats, scores, code):
        arr.setflags(write=False)
    return Sample(int(sample_id), domain, feats, scores, code,
                  None if label is None else int(label),
                  None if hidden_label is None else int(hidden_label))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable collection of samples with consistent dimensions."""

    samples: tuple[Sample, ...]
    dims: Dims
    class_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        _validate(self.samples, self.dims, self.class_names)

    def __len__(self) -> int:
        return len(self.samples)


def _validate(samples: tuple[Sample, ...], dims: Dims, class_names: tuple[str, ...]) -> None:
    if dims.D < 1 or dims.K < 1 or dims.C < 2:
        raise DatasetError(f"invalid dims {dims}: need D >= 1, K >= 1, C >= 2")
    if len(class_names) != dims.C:
        raise DatasetError(f"expected {dims.C} class names, got {len(class_names)}")
    seen: set[int] = set()
    for s in samples:
        if s.domain not in DOMAINS:
            raise DatasetError(f"sample {s.id}: unknown domain {s.domain!r}")
        if s.id < 0:
            raise DatasetError(f"sample {s.id}: id must be non-negative")
        if s.id in seen:
            raise DatasetError(f"duplicate id {s.id}")
        seen.add(s.id)
        if s.features.shape != (dims.D,):
            raise DatasetError(f"sample {s.id}: features length {s.features.size} != D={dims.D}")
        if s.au_scores.shape != (dims.K,):
            raise DatasetError(f"sample {s.id}: au_scores length {s.au_scores.size} != K={dims.K}")
        if not np.all(np.isfinite(s.features)):
            raise DatasetError(f"sample {s.id}: non-finite feature value")
        if float(s.au_scores.min(initial=0.0)) < 0.0 or float(s.au_scores.max(initial=0.0)) > 1.0:
            raise DatasetError(f"sample {s.id}: au_score out of range")
        if not np.array_equal(s.au_code, binarize(s.au_scores)):
            raise DatasetError(f"sample {s.id}: au_code is not derived from au_scores")
        if s.domain == SOURCE:
            if s.label is None:
                raise DatasetError(f"sample {s.id}: source sample missing label")
            if s.hidden_label is not None:
                raise DatasetError(f"sample {s.id}: source sample may not carry a hidden label")
        else:
            if s.label is not None:
                raise DatasetError(f"sample {s.id}: target sample may not carry a visible label")
        for value, name in ((s.label, "label"), (s.hidden_label, "hidden_label")):
            if value is not None and not 0 <= value < dims.C:
                raise DatasetError(f"sample {s.id}: {name} {value} out of range [0, {dims.C})")


def samples_by_id(dataset: Dataset) -> dict[int, Sample]:
    return {s.id: s for s in dataset.samples}


def strip_hidden_labels(dataset: Dataset) -> Dataset:
    """Copy of the dataset with every hidden label removed."""
    stripped = tuple(
        replace(s, hidden_label=None) if s.hidden_label is not None else s
        for s in dataset.samples
    )
    return Dataset(stripped, dataset.dims, dataset.class_names)


def _require(cond: bool, lineno: int, message: str) -> None:
    if not cond:
        raise DatasetError(f"line {lineno}: {message}")


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def load_dataset(path: str | Path, expected_dims: Dims | None = None) -> Dataset:
    """Parse and validate a dataset file.

    AU codes are always recomputed from the stored scores; the file carries
    none. Any schema violation raises DatasetError with the offending line.
    """
    text = Path(path).read_text(encoding="utf-8")
    lines = [(i + 1, ln) for i, ln in enumerate(text.split("\n")) if ln.strip()]
    if not lines:
        raise DatasetError("empty dataset")

    lineno, header_line = lines[0]
    try:
        header = json.loads(header_line)
    except json.JSONDecodeError as e:
        raise DatasetError(f"line {lineno}: malformed header: {e.msg}") from e
    _require(isinstance(header, dict), lineno, "header must be an object")
    _require(set(header) == {"D", "K", "C", "class_names"}, lineno,
             "header must have exactly the fields D, K, C, class_names")
    for key in ("D", "K", "C"):
        _require(_is_int(header[key]), lineno, f"header {key} must be an integer")
    names = header["class_names"]
    _require(isinstance(names, list) and all(isinstance(n, str) for n in names),
             lineno, "class_names must be a list of strings")
    dims = Dims(header["D"], header["K"], header["C"])
    if expected_dims is not None and dims != expected_dims:
        raise DatasetError(f"line {lineno}: dims {dims} do not match expected {expected_dims}")

    if len(lines) == 1:
        raise DatasetError("empty dataset")

    samples: list[Sample] = []
    seen_ids: set[int] = set()
    for lineno, line in lines[1:]:
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise DatasetError(f"line {lineno}: malformed record: {e.msg}") from e
        _require(isinstance(rec, dict), lineno, "record must be an object")
        _require(set(rec) == set(_RECORD_FIELDS), lineno,
                 f"record must have exactly the fields {', '.join(_RECORD_FIELDS)}")
        _require(_is_int(rec["id"]) and rec["id"] >= 0, lineno, "id must be a non-negative integer")
        _require(rec["id"] not in seen_ids, lineno, f"duplicate id {rec['id']}")
        seen_ids.add(rec["id"])
        _require(rec["domain"] in DOMAINS, lineno, f"unknown domain {rec['domain']!r}")
        feats = rec["features"]
        _require(isinstance(feats, list) and all(_is_number(v) for v in feats), lineno,
                 "features must be a list of numbers")
        _require(len(feats) == dims.D, lineno,
                 f"features length {len(feats)} != D={dims.D}")
        scores = rec["au_scores"]
        _require(isinstance(scores, list) and all(_is_number(v) for v in scores), lineno,
                 "au_scores must be a list of numbers")
        _require(len(scores) == dims.K, lineno,
                 f"au_scores length {len(scores)} != K={dims.K}")
        _require(all(0.0 <= v <= 1.0 for v in scores), lineno, "au_score out of range")
        label = rec["label"]
        _require(label is None or _is_int(label), lineno, "label must be an integer or null")
        if rec["domain"] == SOURCE:
            _require(label is not None, lineno, "source sample missing label")
        if label is not None:
            _require(0 <= label < dims.C, lineno, f"label {label} out of range [0, {dims.C})")
        if rec["domain"] == SOURCE:
            samples.append(make_sample(rec["id"], SOURCE, feats, scores, label=label))
        else:
            samples.append(make_sample(rec["id"], TARGET, feats, scores, hidden_label=label))

    return Dataset(tuple(samples), dims, tuple(names))


def _sample_line(s: Sample) -> str:
    feats = ",".join(fmt17(v) for v in s.features)
    scores = ",".join(fmt17(v) for v in s.au_scores)
    label = s.label if s.domain == SOURCE else s.hidden_label
    lab = "null" if label is None else str(int(label))
    return (f'{{"id":{int(s.id)},"domain":"{s.domain}","features":[{feats}],'
            f'"au_scores":[{scores}],"label":{lab}}}')


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write the dataset so that load_dataset reproduces it exactly."""
    header = json.dumps(
        {"D": dataset.dims.D, "K": dataset.dims.K, "C": dataset.dims.C,
         "class_names": list(dataset.class_names)},
        separators=(",", ":"),
    )
    body = "\n".join([header] + [_sample_line(s) for s in dataset.samples])
    Path(path).write_text(body + "\n", encoding="utf-8")


def split(dataset: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic disjoint partition; the first part gets round(fraction*N).

    Stratifies on visible labels when present so class ratios carry over.
    Hidden labels never influence the partition.
    """
    if not 0.0 < fraction < 1.0:
        raise DatasetError(f"fraction {fraction} outside (0, 1)")
    n = len(dataset.samples)
    if n == 0:
        raise DatasetError("empty dataset")
    n_first = round(fraction * n)
    if n_first <= 0 or n_first >= n:
        raise DatasetError("empty split")

    groups: dict[object, list[int]] = {}
    for i, s in enumerate(dataset.samples):
        groups.setdefault(s.label, []).append(i)
    keys = sorted(groups, key=lambda k: (k is None, k if k is not None else 0))

    # largest-remainder allocation so group quotas sum exactly to n_first
    quotas = {k: n_first * len(groups[k]) / n for k in keys}
    base = {k: int(quotas[k]) for k in keys}
    leftover = n_first - sum(base.values())
    for k in sorted(keys, key=lambda k: (-(quotas[k] - base[k]), keys.index(k)))[:leftover]:
        base[k] += 1

    rng = np.random.default_rng(seed)
    first_idx: set[int] = set()
    for k in keys:
        perm = rng.permutation(len(groups[k]))
        first_idx.update(groups[k][j] for j in perm[: base[k]])

    part1 = tuple(s for i, s in enumerate(dataset.samples) if i in first_idx)
    part2 = tuple(s for i, s in enumerate(dataset.samples) if i not in first_idx)
    return (Dataset(part1, dataset.dims, dataset.class_names),
            Dataset(part2, dataset.dims, dataset.class_names))
