"""Baseline/ablation experiment harness emitting deterministic CSV/JSON reports.

Method definitions:
  baseline1_source_only  train on source only, score on target as-is
  baseline2_au_query     target-query majority labels used directly as predictions
  baseline3_hard_pseudo  source training, self-predicted hard pseudo-labels, fine-tune
  baseline4_soft_pseudo  same with predicted probability vectors as soft labels
  baseline5_au_concat    AU scores concatenated onto features, then soft-pseudo fine-tune
  adafer                 AU-retrieval pseudo-labels plus triplet training, jointly
  aga_only               AU-retrieval pseudo-labels only (no triplet term)
  agt_only               triplet term only (no pseudo-label terms)
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .annotate import Annotation, annotate_datasets, write_annotations
from .au_index import au_class_distribution
from .dataset import (Dataset, Dims, load_dataset, make_sample, save_dataset,
                      strip_hidden_labels)
from .model import HeadParams, Metrics, TrainConfig, TrainHistory, evaluate, predict_probs, train
from .synth import SynthConfig, generate, meta_to_dict
from .triplets import MiningConfig, mine_triplets, write_triplets

METHODS = (
    "baseline1_source_only",
    "baseline2_au_query",
    "baseline3_hard_pseudo",
    "baseline4_soft_pseudo",
    "baseline5_au_concat",
    "adafer",
    "aga_only",
    "agt_only",
)

SWEEP_KNOBS = ("margin", "beta", "epsilon", "tau_n", "strategy", "anchors")

REPORT_CSV_COLUMNS = ("method", "target_accuracy", "per_class_accuracy", "coverage",
                      "config_hash", "seed")


class PipelineError(RuntimeError):
    """A pipeline stage failed; the message names the stage."""


@dataclass(frozen=True)
class PipelineConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    mining: MiningConfig = field(default_factory=MiningConfig)
    fallback: bool = False
    source_path: str | None = None
    target_path: str | None = None


@dataclass(eq=False)
class MethodResult:
    method: str
    accuracy: float
    per_class: np.ndarray
    coverage: float | None
    seed: int
    config_hash: str
    wall_time_s: float
    history: TrainHistory | None = None
    params: HeadParams | None = None


def config_hash(config: PipelineConfig) -> str:
    """Stable 12-hex digest of the full effective configuration."""
    flat: dict[str, object] = {}
    for prefix, sub in (("synth", config.synth), ("train", config.train), ("mining", config.mining)):
        for key, value in asdict(sub).items():
            flat[f"{prefix}.{key}"] = value
    flat["fallback"] = config.fallback
    flat["source_path"] = config.source_path
    flat["target_path"] = config.target_path
    canonical = ";".join(f"{k}={format(v, '.17g') if isinstance(v, float) else v!r}"
                         for k, v in sorted(flat.items()))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def _metrics_from_predictions(preds: np.ndarray, labels: np.ndarray, C: int) -> Metrics:
    confusion = np.zeros((C, C), dtype=np.int64)
    np.add.at(confusion, (labels, preds), 1)
    row_sums = confusion.sum(axis=1)
    per_class = np.full(C, np.nan)
    nonzero = row_sums > 0
    per_class[nonzero] = confusion.diagonal()[nonzero] / row_sums[nonzero]
    return Metrics(float((preds == labels).mean()), per_class, confusion)


def _hidden_labels(target: Dataset) -> np.ndarray:
    labels = []
    for s in target.samples:
        if s.hidden_label is None:
            raise ValueError(f"target sample {s.id} has no hidden label for evaluation")
        labels.append(s.hidden_label)
    return np.asarray(labels, dtype=np.int64)


def _concat_au_features(dataset: Dataset) -> Dataset:
    """Derived dataset whose features are the original ones with AU scores appended."""
    dims = Dims(dataset.dims.D + dataset.dims.K, dataset.dims.K, dataset.dims.C)
    samples = tuple(
        make_sample(s.id, s.domain, np.concatenate([s.features, s.au_scores]), s.au_scores,
                    label=s.label, hidden_label=s.hidden_label)
        for s in dataset.samples
    )
    return Dataset(samples, dims, dataset.class_names)


def _self_pseudo_annotations(params: HeadParams, target: Dataset, soft: bool) -> list[Annotation]:
    probs = predict_probs(params, target)
    out = []
    for s, p in zip(target.samples, probs):
        if soft:
            out.append(Annotation(s.id, t_soft=p, support=1))
        else:
            out.append(Annotation(s.id, s_hard=int(p.argmax()), support=1))
    return out


def _coverage(annotations: Sequence[Annotation]) -> float:
    if not annotations:
        return 0.0
    return float(np.mean([a.support > 0 for a in annotations]))


def run_baseline(method: str, source: Dataset, target: Dataset,
                 config: PipelineConfig) -> MethodResult:
    """Train and score one method; evaluation reads target hidden labels only."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    t0 = time.perf_counter()
    tcfg = config.train
    tgt_train = strip_hidden_labels(target)
    source_only = replace(tcfg, beta=0.0, epsilon=0.0)
    coverage: float | None = None
    history: TrainHistory | None = None
    params: HeadParams | None = None

    if method == "baseline1_source_only":
        params, history = train(source, tgt_train, [], [], source_only, eval_dataset=target)
        metrics = evaluate(params, target)

    elif method == "baseline2_au_query":
        anns = annotate_datasets(source, tgt_train, strategy="t-hard", fallback=config.fallback)
        coverage = _coverage(anns)
        # unannotated targets default to class 0 and usually score as errors
        preds = np.asarray([a.t_hard if a.t_hard is not None else 0 for a in anns], dtype=np.int64)
        order = np.argsort([s.id for s in target.samples])
        labels = _hidden_labels(target)[order]
        metrics = _metrics_from_predictions(preds, labels, target.dims.C)

    elif method in ("baseline3_hard_pseudo", "baseline4_soft_pseudo", "baseline5_au_concat"):
        soft = method != "baseline3_hard_pseudo"
        src, tgt, tgt_eval = source, tgt_train, target
        if method == "baseline5_au_concat":
            src, tgt, tgt_eval = (_concat_au_features(source), _concat_au_features(tgt_train),
                                  _concat_au_features(target))
        phase1, _ = train(src, tgt, [], [], source_only)
        anns = _self_pseudo_annotations(phase1, tgt, soft)
        coverage = 1.0
        strategy = "t-soft" if soft else "s-hard"
        fine_cfg = replace(tcfg, epsilon=0.0, assignment_strategy=strategy)
        params, history = train(src, tgt, anns, [], fine_cfg, eval_dataset=tgt_eval,
                                init_params=phase1)
        metrics = evaluate(params, tgt_eval)

    else:  # adafer, aga_only, agt_only
        anns = annotate_datasets(source, tgt_train, strategy=tcfg.assignment_strategy,
                                 fallback=config.fallback)
        coverage = _coverage(anns)
        needs_triplets = method in ("adafer", "agt_only") and tcfg.epsilon != 0.0
        tris = mine_triplets(source, tgt_train, config.mining) if needs_triplets else []
        if method == "aga_only":
            run_cfg = replace(tcfg, epsilon=0.0)
        elif method == "agt_only":
            run_cfg = replace(tcfg, beta=0.0)
        else:
            run_cfg = tcfg
        params, history = train(source, tgt_train, anns, tris, run_cfg, eval_dataset=target)
        metrics = evaluate(params, target)

    return MethodResult(method, metrics.accuracy, metrics.per_class, coverage,
                        tcfg.seed, config_hash(config), time.perf_counter() - t0,
                        history, params)


def _load_or_generate(config: PipelineConfig) -> tuple[Dataset, Dataset, object | None]:
    if config.source_path or config.target_path:
        if not (config.source_path and config.target_path):
            raise ValueError("source_path and target_path must be given together")
        return load_dataset(config.source_path), load_dataset(config.target_path), None
    source, target, meta = generate(config.synth)
    return source, target, meta


def write_report_csv(results: Sequence[MethodResult], path: str | Path) -> None:
    """Deterministic delimited report: accuracies at 4 decimals, no timings."""
    with Path(path).open("w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(REPORT_CSV_COLUMNS)
        for r in results:
            per_class = ";".join(f"{v:.4f}" for v in r.per_class)
            w.writerow([r.method, f"{r.accuracy:.4f}", per_class,
                        "" if r.coverage is None else f"{r.coverage:.4f}",
                        r.config_hash, r.seed])


def write_report_json(results: Sequence[MethodResult], config: PipelineConfig,
                      path: str | Path) -> None:
    payload = {
        "config_hash": config_hash(config),
        "config": {
            "synth": asdict(config.synth),
            "train": asdict(config.train),
            "mining": asdict(config.mining),
            "fallback": config.fallback,
            "source_path": config.source_path,
            "target_path": config.target_path,
        },
        "methods": [
            {
                "method": r.method,
                "target_accuracy": r.accuracy,
                "per_class_accuracy": [None if np.isnan(v) else v for v in r.per_class],
                "coverage": r.coverage,
                "seed": r.seed,
                "wall_time_s": r.wall_time_s,
            }
            for r in results
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def run_pipeline(config: PipelineConfig, out_dir: str | Path) -> list[MethodResult]:
    """Full benchmark run: data, stats, annotations, triplets, all methods, report.

    Writes source/target/meta (when generated), au_stats.csv, annotations.jsonl,
    triplets.csv, history.csv (the joint method's), report.csv/.json, and PNG
    figures next to each delimited output. Any stage error aborts with the
    stage name.
    """
    from . import figures

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def stage(name, fn):
        try:
            return fn()
        except PipelineError:
            raise
        except Exception as e:
            raise PipelineError(f"stage {name}: {e}") from e

    def _data():
        source, target, meta = _load_or_generate(config)
        if meta is not None:
            save_dataset(source, out / "source.jsonl")
            save_dataset(target, out / "target.jsonl")
            (out / "meta.json").write_text(json.dumps(meta_to_dict(meta), indent=2) + "\n",
                                           encoding="utf-8")
        return source, target

    source, target = stage("synth", _data)

    def _stats():
        dist = au_class_distribution(
            [s for s in source.samples if s.label is not None], source.dims.C)
        write_au_stats_csv(dist, source.class_names, out / "au_stats.csv")
        figures.save_au_distribution_figure(dist, source.class_names, out / "au_stats.png")

    stage("stats", _stats)

    def _annotate():
        anns = annotate_datasets(source, strip_hidden_labels(target), strategy="all",
                                 fallback=config.fallback)
        write_annotations(anns, out / "annotations.jsonl")

    stage("annotate", _annotate)

    def _mine():
        tris = mine_triplets(source, strip_hidden_labels(target), config.mining)
        write_triplets(tris, out / "triplets.csv")

    stage("mine", _mine)

    results = [stage(method, lambda m=method: run_baseline(m, source, target, config))
               for method in METHODS]

    def _report():
        write_report_csv(results, out / "report.csv")
        write_report_json(results, config, out / "report.json")
        joint = next(r for r in results if r.method == "adafer")
        if joint.history is not None:
            joint.history.write_csv(out / "history.csv")
            figures.save_history_figure(joint.history, out / "history.png")
        figures.save_method_report_figure([r.method for r in results],
                                          [r.accuracy for r in results], out / "report.png")

    stage("report", _report)
    return results


def write_au_stats_csv(dist: np.ndarray, class_names: Sequence[str], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["class"] + [f"AU_{k + 1}" for k in range(dist.shape[1])])
        for name, row in zip(class_names, dist):
            w.writerow([name] + [f"{v:.6f}" for v in row])


def apply_knob(config: PipelineConfig, knob: str, value) -> PipelineConfig:
    """A copy of the config with one ablation knob changed."""
    if knob == "margin":
        if value == "learn":
            return replace(config, train=replace(config.train, gamma_learnable=True))
        return replace(config, train=replace(config.train, gamma=float(value),
                                             gamma_learnable=False))
    if knob == "beta":
        return replace(config, train=replace(config.train, beta=float(value)))
    if knob == "epsilon":
        return replace(config, train=replace(config.train, epsilon=float(value)))
    if knob == "tau_n":
        return replace(config, mining=replace(config.mining, tau_n=float(value)))
    if knob == "strategy":
        return replace(config, train=replace(config.train, assignment_strategy=str(value)))
    if knob == "anchors":
        return replace(config, mining=replace(config.mining, anchors=str(value)))
    raise ValueError(f"unknown knob {knob!r}; expected one of {SWEEP_KNOBS}")


def run_sweep(knob: str, values: Sequence, config: PipelineConfig,
              out_dir: str | Path | None = None) -> list[tuple[object, float]]:
    """One joint-method train/eval per knob value, everything else fixed."""
    if knob not in SWEEP_KNOBS:
        raise ValueError(f"unknown knob {knob!r}; expected one of {SWEEP_KNOBS}")
    if not values:
        raise ValueError("values must be nonempty")
    source, target, _ = _load_or_generate(config)
    rows: list[tuple[object, float]] = []
    for value in values:
        result = run_baseline("adafer", source, target, apply_knob(config, knob, value))
        rows.append((value, result.accuracy))
    if out_dir is not None:
        from . import figures

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with (out / f"sweep_{knob}.csv").open("w", encoding="utf-8", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["value", "accuracy"])
            for value, acc in rows:
                w.writerow([value, f"{acc:.4f}"])
        figures.save_sweep_figure(knob, [v for v, _ in rows], [a for _, a in rows],
                                  out / f"sweep_{knob}.png")
    return rows
