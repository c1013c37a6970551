"""Command-line front end.

Subcommands: synth, stats, annotate, mine, train, eval, pipeline, sweep.
Every subcommand accepts --config pointing at a flat key/value text file
(`key = value`, same keys as the CLI flags); explicit flags win over the file,
which wins over built-in defaults. Report paths write a PNG figure next to
each delimited output.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .annotate import annotate_datasets, write_annotations
from .au_index import au_class_distribution
from .dataset import load_dataset, save_dataset, strip_hidden_labels
from .experiments import (PipelineConfig, SWEEP_KNOBS, run_pipeline, run_sweep,
                          write_au_stats_csv)
from .model import (TrainConfig, evaluate, load_params, save_params, train)
from .synth import SynthConfig, generate, meta_to_dict
from .triplets import MiningConfig, mine_triplets, write_triplets

_BOOL_VALUES = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _read_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").split("\n"), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SystemExit(f"config {path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _parse_bool(text: str) -> bool:
    try:
        return _BOOL_VALUES[text.lower()]
    except KeyError:
        raise SystemExit(f"expected a boolean, got {text!r}") from None


class _Resolver:
    """CLI flag > config file > default."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.file = _read_config_file(args.config) if getattr(args, "config", None) else {}

    def get(self, name: str, conv, default):
        cli = getattr(self.args, name, None)
        if cli is not None:
            return cli
        if name in self.file:
            return conv(self.file[name])
        return default


def _synth_config(res: _Resolver) -> SynthConfig:
    base = SynthConfig()
    return SynthConfig(
        n_classes=res.get("classes", int, base.n_classes),
        feature_dim=res.get("feature_dim", int, base.feature_dim),
        au_count=res.get("au_count", int, base.au_count),
        n_source=res.get("n_source", int, base.n_source),
        n_target=res.get("n_target", int, base.n_target),
        feature_shift=res.get("feature_shift", float, base.feature_shift),
        feature_noise=res.get("feature_noise", float, base.feature_noise),
        au_flip_rate=res.get("au_flip_rate", float, base.au_flip_rate),
        au_score_noise=res.get("au_score_noise", float, base.au_score_noise),
        label_prior_skew=res.get("label_prior_skew", float, base.label_prior_skew),
        seed=res.get("seed", int, base.seed),
    )


def _train_config(res: _Resolver) -> TrainConfig:
    base = TrainConfig()
    gamma_text = res.get("gamma", str, None)
    gamma, learnable = base.gamma, base.gamma_learnable
    if gamma_text is not None:
        if str(gamma_text).lower() == "learn":
            learnable = True
        else:
            gamma, learnable = float(gamma_text), False
    return TrainConfig(
        beta=res.get("beta", float, base.beta),
        epsilon=res.get("epsilon", float, base.epsilon),
        gamma=gamma,
        gamma_learnable=learnable,
        lr=res.get("lr", float, base.lr),
        lr_decay=res.get("lr_decay", float, base.lr_decay),
        epochs=res.get("epochs", int, base.epochs),
        batch_size=res.get("batch_size", int, base.batch_size),
        hidden_dim=res.get("hidden_dim", int, base.hidden_dim),
        seed=res.get("seed", int, base.seed),
        assignment_strategy=res.get("strategy", str, base.assignment_strategy),
        kl_direction=res.get("kl_direction", str, base.kl_direction),
    )


def _mining_config(res: _Resolver) -> MiningConfig:
    base = MiningConfig()
    return MiningConfig(
        tau_n=res.get("tau_n", float, base.tau_n),
        anchors=res.get("anchors", str, base.anchors),
        seed=res.get("seed", int, base.seed),
        triplets_per_anchor=res.get("triplets_per_anchor", int, base.triplets_per_anchor),
    )


def _pipeline_config(res: _Resolver) -> PipelineConfig:
    return PipelineConfig(
        synth=_synth_config(res),
        train=_train_config(res),
        mining=_mining_config(res),
        fallback=res.get("fallback", _parse_bool, False),
        source_path=res.get("source", str, None),
        target_path=res.get("target", str, None),
    )


def _out_dir(res: _Resolver) -> Path:
    out = Path(res.get("out_dir", str, "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, help="seed for data, mining and training")
    p.add_argument("--config", help="flat key/value config file")
    p.add_argument("--out-dir", dest="out_dir", help="output directory (default: .)")


def _add_synth_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--classes", type=int)
    p.add_argument("--feature-dim", dest="feature_dim", type=int)
    p.add_argument("--au-count", dest="au_count", type=int)
    p.add_argument("--n-source", dest="n_source", type=int)
    p.add_argument("--n-target", dest="n_target", type=int)
    p.add_argument("--feature-shift", dest="feature_shift", type=float)
    p.add_argument("--feature-noise", dest="feature_noise", type=float)
    p.add_argument("--au-flip-rate", dest="au_flip_rate", type=float)
    p.add_argument("--au-score-noise", dest="au_score_noise", type=float)
    p.add_argument("--label-prior-skew", dest="label_prior_skew", type=float)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--beta", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--gamma", help="margin value, or 'learn' for a learnable margin")
    p.add_argument("--tau-n", dest="tau_n", type=float)
    p.add_argument("--strategy", choices=("s-hard", "t-hard", "t-soft", "s-hard+t-soft"))
    p.add_argument("--anchors", choices=("source", "target", "both"))
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-decay", dest="lr_decay", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    p.add_argument("--kl-direction", dest="kl_direction", choices=("soft||pred", "pred||soft"))
    p.add_argument("--triplets-per-anchor", dest="triplets_per_anchor", type=int)
    p.add_argument("--fallback", action=argparse.BooleanOptionalAction, default=None,
                   help="nearest-code fallback for unmatched targets")


def cmd_synth(args: argparse.Namespace) -> int:
    res = _Resolver(args)
    out = _out_dir(res)
    source, target, meta = generate(_synth_config(res))
    save_dataset(source, out / "source.jsonl")
    save_dataset(target, out / "target.jsonl")
    (out / "meta.json").write_text(json.dumps(meta_to_dict(meta), indent=2) + "\n",
                                   encoding="utf-8")
    print(f"wrote {len(source)} source and {len(target)} target samples to {out}")
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    from . import figures

    res = _Resolver(args)
    out = _out_dir(res)
    data = load_dataset(args.data)
    labeled = [s for s in data.samples if s.label is not None]
    dist = au_class_distribution(labeled, data.dims.C)
    write_au_stats_csv(dist, data.class_names, out / "au_stats.csv")
    figures.save_au_distribution_figure(dist, data.class_names, out / "au_stats.png")
    print(f"wrote AU statistics for {len(labeled)} labeled samples to {out / 'au_stats.csv'}")
    return 0


def cmd_annotate(args: argparse.Namespace) -> int:
    res = _Resolver(args)
    out = _out_dir(res)
    source = load_dataset(res.get("source", str, None))
    target = strip_hidden_labels(load_dataset(res.get("target", str, None)))
    fallback = res.get("fallback", _parse_bool, False)
    anns = annotate_datasets(source, target, strategy="all", fallback=fallback)
    path = Path(args.out) if args.out else out / "annotations.jsonl"
    write_annotations(anns, path)
    annotated = sum(1 for a in anns if a.support > 0)
    print(f"annotated {annotated}/{len(anns)} target samples -> {path}")
    return 0


def cmd_mine(args: argparse.Namespace) -> int:
    res = _Resolver(args)
    out = _out_dir(res)
    source = load_dataset(res.get("source", str, None))
    target = strip_hidden_labels(load_dataset(res.get("target", str, None)))
    tris = mine_triplets(source, target, _mining_config(res))
    path = Path(args.out) if args.out else out / "triplets.csv"
    write_triplets(tris, path)
    print(f"mined {len(tris)} triplets -> {path}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    from . import figures

    res = _Resolver(args)
    out = _out_dir(res)
    source = load_dataset(res.get("source", str, None))
    target = strip_hidden_labels(load_dataset(res.get("target", str, None)))
    tcfg = _train_config(res)
    fallback = res.get("fallback", _parse_bool, False)
    anns = annotate_datasets(source, target, strategy=tcfg.assignment_strategy,
                             fallback=fallback)
    tris = mine_triplets(source, target, _mining_config(res)) if tcfg.epsilon != 0.0 else []
    params, history = train(source, target, anns, tris, tcfg)
    params_path = Path(args.out) if args.out else out / "params.txt"
    save_params(params, params_path)
    history.write_csv(out / "history.csv")
    figures.save_history_figure(history, out / "history.png")
    print(f"trained {tcfg.epochs} epochs; params -> {params_path}, history -> {out / 'history.csv'}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    params = load_params(args.params)
    data = load_dataset(args.data)
    metrics = evaluate(params, data)
    per_class = ", ".join(
        f"{name}={v:.4f}" if not np.isnan(v) else f"{name}=n/a"
        for name, v in zip(data.class_names, metrics.per_class))
    print(f"accuracy: {metrics.accuracy:.4f}")
    print(f"per-class: {per_class}")
    if args.out:
        payload = {
            "accuracy": metrics.accuracy,
            "per_class": [None if np.isnan(v) else v for v in metrics.per_class],
            "confusion": metrics.confusion.tolist(),
        }
        Path(args.out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        print(f"metrics -> {args.out}")
    return 0


def cmd_pipeline(args: argparse.Namespace) -> int:
    res = _Resolver(args)
    out = _out_dir(res)
    results = run_pipeline(_pipeline_config(res), out)
    for r in results:
        print(f"{r.method:24s} accuracy={r.accuracy:.4f}")
    print(f"report -> {out / 'report.csv'}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    res = _Resolver(args)
    out = _out_dir(res)
    knob = args.knob
    raw_values = [v.strip() for v in args.values.split(",") if v.strip()]
    if knob in ("strategy", "anchors"):
        values: list[object] = list(raw_values)
    elif knob == "margin":
        values = [v if v == "learn" else float(v) for v in raw_values]
    else:
        values = [float(v) for v in raw_values]
    rows = run_sweep(knob, values, _pipeline_config(res), out)
    for value, acc in rows:
        print(f"{knob}={value}: accuracy={acc:.4f}")
    print(f"sweep -> {out / f'sweep_{knob}.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="auadapt",
        description="AU-guided cross-domain expression classification toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic domain-shift benchmark")
    _add_common(p)
    _add_synth_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", help="per-class AU occurrence statistics as CSV")
    _add_common(p)
    p.add_argument("--data", required=True, help="labeled dataset file")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("annotate", help="AU-retrieval pseudo-labels for target samples")
    _add_common(p)
    p.add_argument("--source", help="source dataset file")
    p.add_argument("--target", help="target dataset file")
    p.add_argument("--fallback", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--out", help="output file (default: <out-dir>/annotations.jsonl)")
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("mine", help="mine cross-domain triplets")
    _add_common(p)
    p.add_argument("--source", help="source dataset file")
    p.add_argument("--target", help="target dataset file")
    p.add_argument("--tau-n", dest="tau_n", type=float)
    p.add_argument("--anchors", choices=("source", "target", "both"))
    p.add_argument("--triplets-per-anchor", dest="triplets_per_anchor", type=int)
    p.add_argument("--out", help="output file (default: <out-dir>/triplets.csv)")
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("train", help="train the head on a source/target pair")
    _add_common(p)
    p.add_argument("--source", help="source dataset file")
    p.add_argument("--target", help="target dataset file")
    _add_train_flags(p)
    p.add_argument("--out", help="params file (default: <out-dir>/params.txt)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score saved params on a labeled dataset")
    _add_common(p)
    p.add_argument("--params", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="optional metrics JSON file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="run every method and write the report")
    _add_common(p)
    _add_synth_flags(p)
    _add_train_flags(p)
    p.add_argument("--source", help="existing source dataset (skips generation)")
    p.add_argument("--target", help="existing target dataset (skips generation)")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("sweep", help="ablation sweep over one knob")
    _add_common(p)
    _add_synth_flags(p)
    _add_train_flags(p)
    p.add_argument("--source", help="existing source dataset (skips generation)")
    p.add_argument("--target", help="existing target dataset (skips generation)")
    p.add_argument("--knob", required=True, choices=SWEEP_KNOBS)
    p.add_argument("--values", required=True, help="comma-separated knob values")
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    for name in ("source", "target"):
        if getattr(args, name, True) is None and args.command in ("annotate", "mine", "train"):
            res = _Resolver(args)
            if res.get(name, str, None) is None:
                print(f"error: --{name} is required for {args.command}", file=sys.stderr)
                return 2
    try:
        return args.func(args)
    except Exception as e:  # surface clean one-line errors at the CLI boundary
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
