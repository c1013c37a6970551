"""Shallow classifier/projection head trained under the composite loss.

The head is relu(W1 x + b1) with a linear classifier on the hidden activation
and an L2-normalized copy of the activation serving as the metric embedding.
The training objective combines source cross-entropy, pseudo-label
cross-entropy, soft-label KL divergence, and a triplet hinge on embeddings:

    L_all = CE_src + beta * (CE_hard + KL_soft) + epsilon * L_tri

Each term averages independently over its own batch members; empty groups
contribute zero. Gradients are exact analytic derivatives of this objective,
including the margin when it is learnable, with the conventions relu'(0) = 0,
hinge'(boundary) = 0, and zero gradient through zero-norm embeddings.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .annotate import Annotation, STRATEGIES, resolve_strategy_fields
from .dataset import Dataset, Dims, fmt17, samples_by_id
from .triplets import SOURCE_ANCHORED, Triplet

LOG_EPS = 1e-12
NORM_EPS = 1e-12
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

KL_DIRECTIONS = ("soft||pred", "pred||soft")


@dataclass(eq=False)
class HeadParams:
    """Weights of the two-layer head; margin_raw is set only in learnable mode."""

    W1: np.ndarray  # (H, D)
    b1: np.ndarray  # (H,)
    W2: np.ndarray  # (C, H)
    b2: np.ndarray  # (C,)
    margin_raw: float | None = None

    def copy(self) -> "HeadParams":
        return HeadParams(self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy(),
                          self.margin_raw)

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def n_classes(self) -> int:
        return self.W2.shape[0]


@dataclass(eq=False)
class HeadGrads:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    margin_raw: float | None = None


@dataclass(frozen=True)
class TrainConfig:
    beta: float = 1.0
    epsilon: float = 1.0
    gamma: float = 0.5
    gamma_learnable: bool = False
    lr: float = 0.001
    lr_decay: float = 0.9
    epochs: int = 40
    batch_size: int = 128
    hidden_dim: int = 64
    seed: int = 0
    assignment_strategy: str = "s-hard+t-soft"
    kl_direction: str = "soft||pred"

    def __post_init__(self):
        if self.beta < 0 or self.epsilon < 0 or self.gamma < 0:
            raise ValueError("beta, epsilon and gamma must be non-negative")
        if self.lr <= 0 or self.lr_decay <= 0:
            raise ValueError("lr and lr_decay must be positive")
        if self.epochs < 1 or self.batch_size < 1 or self.hidden_dim < 1:
            raise ValueError("epochs, batch_size and hidden_dim must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be a non-negative integer")
        if self.assignment_strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.assignment_strategy!r}")
        if self.kl_direction not in KL_DIRECTIONS:
            raise ValueError(f"kl_direction must be one of {KL_DIRECTIONS}")


@dataclass
class EpochStats:
    epoch: int
    lr: float
    L_c: float
    L_tri: float
    L_all: float
    active_triplet_fraction: float
    gamma_value: float
    target_accuracy: float | None = None


@dataclass
class TrainHistory:
    rows: list[EpochStats] = field(default_factory=list)

    CSV_COLUMNS = ("epoch", "lr", "L_c", "L_tri", "L_all",
                   "active_triplet_fraction", "gamma_value", "target_accuracy")

    def lr_column(self) -> list[float]:
        return [r.lr for r in self.rows]

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(self.CSV_COLUMNS)
            for r in self.rows:
                w.writerow([r.epoch, fmt17(r.lr), fmt17(r.L_c), fmt17(r.L_tri), fmt17(r.L_all),
                            fmt17(r.active_triplet_fraction), fmt17(r.gamma_value),
                            "" if r.target_accuracy is None else fmt17(r.target_accuracy)])

    @classmethod
    def read_csv(cls, path: str | Path) -> "TrainHistory":
        rows: list[EpochStats] = []
        with Path(path).open("r", encoding="utf-8", newline="") as f:
            for rec in csv.DictReader(f):
                rows.append(EpochStats(
                    int(rec["epoch"]), float(rec["lr"]), float(rec["L_c"]), float(rec["L_tri"]),
                    float(rec["L_all"]), float(rec["active_triplet_fraction"]),
                    float(rec["gamma_value"]),
                    None if rec["target_accuracy"] == "" else float(rec["target_accuracy"])))
        return cls(rows)


@dataclass(eq=False)
class Batch:
    """Resolved arrays for one optimization step; any group may be empty."""

    src_X: np.ndarray        # (ns, D)
    src_y: np.ndarray        # (ns,)
    tgt_hard_X: np.ndarray   # (nh, D)
    tgt_hard_y: np.ndarray   # (nh,)
    tgt_soft_X: np.ndarray   # (nk, D)
    tgt_soft_Y: np.ndarray   # (nk, C)
    tri_anchor_X: np.ndarray  # (nt, D)
    tri_pos_X: np.ndarray
    tri_neg_X: np.ndarray

    @classmethod
    def empty(cls, D: int, C: int) -> "Batch":
        z = np.zeros((0, D))
        return cls(z, np.zeros(0, dtype=np.int64), z.copy(), np.zeros(0, dtype=np.int64),
                   z.copy(), np.zeros((0, C)), z.copy(), z.copy(), z.copy())


@dataclass
class LossBreakdown:
    L_c: float
    L_tri: float
    L_all: float
    active_triplet_fraction: float


@dataclass(eq=False)
class ForwardResult:
    embedding: np.ndarray
    logits: np.ndarray
    probs: np.ndarray


@dataclass(eq=False)
class Metrics:
    accuracy: float
    per_class: np.ndarray
    confusion: np.ndarray


@dataclass(eq=False)
class _Fwd:
    X: np.ndarray
    Hpre: np.ndarray
    H: np.ndarray
    norms: np.ndarray
    Emb: np.ndarray
    logits: np.ndarray
    probs: np.ndarray


def init_head(dims: Dims, hidden_dim: int, seed: int, learnable_margin: bool = False,
              margin_init: float = 0.5) -> HeadParams:
    """Uniform init scaled by 1/sqrt(fan_in); biases zero; deterministic."""
    if dims.D < 1 or dims.C < 2 or hidden_dim < 1:
        raise ValueError(f"invalid head shape: D={dims.D}, H={hidden_dim}, C={dims.C}")
    rng = np.random.default_rng([seed, 101])
    lim1 = 1.0 / math.sqrt(dims.D)
    lim2 = 1.0 / math.sqrt(hidden_dim)
    return HeadParams(
        W1=rng.uniform(-lim1, lim1, size=(hidden_dim, dims.D)),
        b1=np.zeros(hidden_dim),
        W2=rng.uniform(-lim2, lim2, size=(dims.C, hidden_dim)),
        b2=np.zeros(dims.C),
        margin_raw=float(margin_init) if learnable_margin else None,
    )


def _forward_batch(params: HeadParams, X: np.ndarray) -> _Fwd:
    Hpre = X @ params.W1.T + params.b1
    H = np.maximum(Hpre, 0.0)
    norms = np.linalg.norm(H, axis=1)
    Emb = np.zeros_like(H)
    ok = norms >= NORM_EPS
    Emb[ok] = H[ok] / norms[ok, None]
    logits = H @ params.W2.T + params.b2
    Z = logits - logits.max(axis=1, keepdims=True)
    E = np.exp(Z)
    probs = E / E.sum(axis=1, keepdims=True)
    return _Fwd(X, Hpre, H, norms, Emb, logits, probs)


def forward(params: HeadParams, x: Sequence[float] | np.ndarray) -> ForwardResult:
    """Single-sample forward pass: unit embedding, logits, softmax probabilities."""
    arr = np.asarray(x, dtype=np.float64).reshape(1, -1)
    if arr.shape[1] != params.feature_dim:
        raise ValueError(f"feature length {arr.shape[1]} != D={params.feature_dim}")
    f = _forward_batch(params, arr)
    return ForwardResult(f.Emb[0], f.logits[0], f.probs[0])


def predict_probs(params: HeadParams, dataset: Dataset) -> np.ndarray:
    """Class probabilities for every sample, shape (N, C)."""
    X = np.stack([s.features for s in dataset.samples])
    return _forward_batch(params, X).probs


def ce_loss(probs: Sequence[float] | np.ndarray, label: int) -> float:
    p = np.asarray(probs, dtype=np.float64)
    if not 0 <= label < p.size:
        raise ValueError(f"label {label} out of range [0, {p.size})")
    return float(-np.log(max(float(p[label]), LOG_EPS)))


def kl_loss(soft_target: Sequence[float] | np.ndarray, probs: Sequence[float] | np.ndarray) -> float:
    """D_KL(soft_target || probs) with 0 log 0 = 0 and log arguments floored."""
    y = np.asarray(soft_target, dtype=np.float64)
    p = np.asarray(probs, dtype=np.float64)
    if y.shape != p.shape or y.ndim != 1:
        raise ValueError("soft_target and probs must be 1-d and share length")
    mask = y > 0.0
    if not mask.any():
        return 0.0
    ym = y[mask]
    return float(np.sum(ym * (np.log(ym) - np.log(np.maximum(p[mask], LOG_EPS)))))


def triplet_loss(f_a: Sequence[float] | np.ndarray, f_p: Sequence[float] | np.ndarray,
                 f_n: Sequence[float] | np.ndarray, gamma: float) -> float:
    """Hinge on the negative/positive distance gap: max(0, gamma - (d_an - d_ap))."""
    a = np.asarray(f_a, dtype=np.float64)
    dp = float(np.linalg.norm(a - np.asarray(f_p, dtype=np.float64)))
    dn = float(np.linalg.norm(a - np.asarray(f_n, dtype=np.float64)))
    return max(0.0, gamma - (dn - dp))


def lr_at(epoch: int, config: TrainConfig) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return config.lr * config.lr_decay ** epoch


def effective_margin(params: HeadParams, config: TrainConfig) -> float:
    if config.gamma_learnable and params.margin_raw is not None:
        return max(0.0, params.margin_raw)
    return config.gamma


def _loss_and_grads(batch: Batch, params: HeadParams, config: TrainConfig,
                    want_grads: bool = True) -> tuple[LossBreakdown, HeadGrads | None]:
    gamma = effective_margin(params, config)
    learnable = config.gamma_learnable and params.margin_raw is not None

    gW1 = np.zeros_like(params.W1) if want_grads else None
    gb1 = np.zeros_like(params.b1) if want_grads else None
    gW2 = np.zeros_like(params.W2) if want_grads else None
    gb2 = np.zeros_like(params.b2) if want_grads else None
    g_margin = 0.0

    def acc_class(f: _Fwd, G: np.ndarray) -> None:
        nonlocal gW1, gb1, gW2, gb2
        gW2 += G.T @ f.H
        gb2 += G.sum(axis=0)
        GH = G @ params.W2
        GHpre = np.where(f.Hpre > 0.0, GH, 0.0)
        gW1 += GHpre.T @ f.X
        gb1 += GHpre.sum(axis=0)

    def acc_embedding(f: _Fwd, G: np.ndarray) -> None:
        nonlocal gW1, gb1
        ok = f.norms >= NORM_EPS
        GH = np.zeros_like(G)
        if ok.any():
            dot = (G[ok] * f.Emb[ok]).sum(axis=1, keepdims=True)
            GH[ok] = (G[ok] - dot * f.Emb[ok]) / f.norms[ok, None]
        GHpre = np.where(f.Hpre > 0.0, GH, 0.0)
        gW1 += GHpre.T @ f.X
        gb1 += GHpre.sum(axis=0)

    def ce_term(X: np.ndarray, y: np.ndarray, weight: float) -> float:
        n = X.shape[0]
        f = _forward_batch(params, X)
        picked = f.probs[np.arange(n), y]
        losses = -np.log(np.maximum(picked, LOG_EPS))
        if want_grads:
            G = f.probs.copy()
            G[np.arange(n), y] -= 1.0
            G[picked <= LOG_EPS] = 0.0  # clamp active: loss locally flat
            acc_class(f, G * (weight / n))
        return float(losses.mean())

    def kl_term(X: np.ndarray, Y: np.ndarray, weight: float) -> float:
        n = X.shape[0]
        f = _forward_batch(params, X)
        P = f.probs
        logp = np.log(np.maximum(P, LOG_EPS))
        if config.kl_direction == "soft||pred":
            ylogy = np.where(Y > 0.0, Y * np.log(np.where(Y > 0.0, Y, 1.0)), 0.0)
            losses = (ylogy - Y * logp).sum(axis=1)
            g = np.where(P > LOG_EPS, -Y / np.maximum(P, LOG_EPS), 0.0)
        else:
            logy = np.log(np.maximum(Y, LOG_EPS))
            losses = (P * (logp - logy)).sum(axis=1)
            g = (logp - logy) + (P > LOG_EPS).astype(np.float64)
        if want_grads:
            G = P * g - P * (g * P).sum(axis=1, keepdims=True)
            acc_class(f, G * (weight / n))
        return float(losses.mean())

    src_term = ce_term(batch.src_X, batch.src_y, 1.0) if batch.src_X.shape[0] else 0.0
    hard_term = 0.0
    soft_term = 0.0
    if config.beta != 0.0:
        if batch.tgt_hard_X.shape[0]:
            hard_term = ce_term(batch.tgt_hard_X, batch.tgt_hard_y, config.beta)
        if batch.tgt_soft_X.shape[0]:
            soft_term = kl_term(batch.tgt_soft_X, batch.tgt_soft_Y, config.beta)
    L_c = src_term + config.beta * (hard_term + soft_term)

    L_tri = 0.0
    active_fraction = 0.0
    n_tri = batch.tri_anchor_X.shape[0]
    if config.epsilon != 0.0 and n_tri:
        fa = _forward_batch(params, batch.tri_anchor_X)
        fp = _forward_batch(params, batch.tri_pos_X)
        fn = _forward_batch(params, batch.tri_neg_X)
        AP = fa.Emb - fp.Emb
        AN = fa.Emb - fn.Emb
        dp = np.linalg.norm(AP, axis=1)
        dn = np.linalg.norm(AN, axis=1)
        hinge = gamma - (dn - dp)
        active = hinge > 0.0
        L_tri = float(np.maximum(hinge, 0.0).mean())
        active_fraction = float(active.mean())
        if want_grads:
            w = config.epsilon / n_tri
            cp = np.where(active & (dp > NORM_EPS), 1.0 / np.maximum(dp, NORM_EPS), 0.0)
            cn = np.where(active & (dn > NORM_EPS), 1.0 / np.maximum(dn, NORM_EPS), 0.0)
            acc_embedding(fa, (AP * cp[:, None] - AN * cn[:, None]) * w)
            acc_embedding(fp, -AP * cp[:, None] * w)
            acc_embedding(fn, AN * cn[:, None] * w)
            if learnable and params.margin_raw > 0.0:
                g_margin = config.epsilon * active_fraction

    L_all = L_c + config.epsilon * L_tri
    breakdown = LossBreakdown(L_c, L_tri, L_all, active_fraction)
    if not want_grads:
        return breakdown, None
    return breakdown, HeadGrads(gW1, gb1, gW2, gb2, g_margin if learnable else None)


def total_loss(batch: Batch, params: HeadParams, config: TrainConfig) -> LossBreakdown:
    breakdown, _ = _loss_and_grads(batch, params, config, want_grads=False)
    return breakdown


def backward(batch: Batch, params: HeadParams, config: TrainConfig) -> HeadGrads:
    """Exact analytic gradient of L_all w.r.t. every parameter."""
    _, grads = _loss_and_grads(batch, params, config, want_grads=True)
    assert grads is not None
    return grads


_TENSOR_NAMES = ("W1", "b1", "W2", "b2")


@dataclass(eq=False)
class AdamState:
    m: dict[str, np.ndarray | float]
    v: dict[str, np.ndarray | float]
    t: int = 0

    @classmethod
    def for_params(cls, params: HeadParams) -> "AdamState":
        m: dict[str, np.ndarray | float] = {k: np.zeros_like(getattr(params, k)) for k in _TENSOR_NAMES}
        v: dict[str, np.ndarray | float] = {k: np.zeros_like(getattr(params, k)) for k in _TENSOR_NAMES}
        if params.margin_raw is not None:
            m["margin_raw"] = 0.0
            v["margin_raw"] = 0.0
        return cls(m, v, 0)


def adam_step(params: HeadParams, grads: HeadGrads, state: AdamState,
              lr: float) -> tuple[HeadParams, AdamState]:
    """One Adam update with bias correction; a learnable margin is clamped to >= 0."""
    t = state.t + 1
    c1 = 1.0 - ADAM_BETA1 ** t
    c2 = 1.0 - ADAM_BETA2 ** t
    new_m: dict[str, np.ndarray | float] = {}
    new_v: dict[str, np.ndarray | float] = {}

    def update(p, g, key):
        m = ADAM_BETA1 * state.m[key] + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * state.v[key] + (1.0 - ADAM_BETA2) * g * g
        new_m[key] = m
        new_v[key] = v
        return p - lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)

    tensors = {k: update(getattr(params, k), getattr(grads, k), k) for k in _TENSOR_NAMES}
    margin = params.margin_raw
    if params.margin_raw is not None:
        g = grads.margin_raw if grads.margin_raw is not None else 0.0
        m = ADAM_BETA1 * state.m["margin_raw"] + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * state.v["margin_raw"] + (1.0 - ADAM_BETA2) * g * g
        new_m["margin_raw"] = m
        new_v["margin_raw"] = v
        margin = max(0.0, params.margin_raw - lr * (m / c1) / (math.sqrt(v / c2) + ADAM_EPS))
    return (HeadParams(tensors["W1"], tensors["b1"], tensors["W2"], tensors["b2"], margin),
            AdamState(new_m, new_v, t))


def _resolve_target_pool(target: Dataset, annotations: Sequence[Annotation],
                         strategy: str, n_classes: int):
    by_id = samples_by_id(target)
    rows, hards, softs, has_hard, has_soft = [], [], [], [], []
    for ann in sorted(annotations, key=lambda a: a.target_id):
        hard, soft = resolve_strategy_fields(ann, strategy)
        if hard is None and soft is None:
            continue
        sample = by_id.get(ann.target_id)
        if sample is None:
            raise ValueError(f"annotation for unknown target id {ann.target_id}")
        rows.append(sample.features)
        hards.append(-1 if hard is None else int(hard))
        softs.append(np.zeros(n_classes) if soft is None else np.asarray(soft, dtype=np.float64))
        has_hard.append(hard is not None)
        has_soft.append(soft is not None)
    if not rows:
        return None
    return (np.stack(rows), np.asarray(hards, dtype=np.int64), np.stack(softs),
            np.asarray(has_hard), np.asarray(has_soft))


def _resolve_triplet_pool(source: Dataset, target: Dataset, triplets: Sequence[Triplet]):
    if not triplets:
        return None
    src = samples_by_id(source)
    tgt = samples_by_id(target)
    a_rows, p_rows, n_rows = [], [], []
    for t in triplets:
        anchor_pool, other_pool = (src, tgt) if t.direction == SOURCE_ANCHORED else (tgt, src)
        try:
            a_rows.append(anchor_pool[t.anchor_id].features)
            p_rows.append(other_pool[t.positive_id].features)
            n_rows.append(other_pool[t.negative_id].features)
        except KeyError as e:
            raise ValueError(f"triplet references unknown sample id {e.args[0]}") from e
    return np.stack(a_rows), np.stack(p_rows), np.stack(n_rows)


def train(source: Dataset, target: Dataset | None, annotations: Sequence[Annotation],
          triplets: Sequence[Triplet], config: TrainConfig,
          eval_dataset: Dataset | None = None, init_params: HeadParams | None = None,
          remine: Callable[[int], Sequence[Triplet]] | None = None) -> tuple[HeadParams, TrainHistory]:
    """Run the full optimization schedule and return final params plus history.

    Each step draws batch_size source samples, batch_size annotated target
    samples, and batch_size triplets, cycling pools smaller than the batch.
    Target hidden labels are never read; ``eval_dataset`` (if given) is scored
    once per epoch for the history's accuracy column only. ``remine`` maps an
    epoch index to a fresh triplet list for per-epoch re-mining.
    """
    if not source.samples:
        raise ValueError("empty source dataset")
    if target is not None and target.dims != source.dims:
        raise ValueError(f"target dims {target.dims} do not match source dims {source.dims}")
    D, C = source.dims.D, source.dims.C

    if init_params is not None:
        params = init_params.copy()
        if params.feature_dim != D or params.n_classes != C:
            raise ValueError("init_params shapes do not match dataset dims")
        if config.gamma_learnable and params.margin_raw is None:
            params.margin_raw = float(config.gamma)
    else:
        params = init_head(source.dims, config.hidden_dim, config.seed,
                           learnable_margin=config.gamma_learnable, margin_init=config.gamma)

    X_src = np.stack([s.features for s in source.samples])
    y_src = np.asarray([s.label for s in source.samples], dtype=np.int64)
    n_src = len(source.samples)

    tgt_pool = None
    if target is not None and annotations and config.beta != 0.0:
        tgt_pool = _resolve_target_pool(target, annotations, config.assignment_strategy, C)

    tri_pool = None
    if target is not None and config.epsilon != 0.0:
        tri_pool = _resolve_triplet_pool(source, target, triplets)

    state = AdamState.for_params(params)
    history = TrainHistory()
    B = config.batch_size
    steps = math.ceil(n_src / B)
    offsets = np.arange(B)

    for epoch in range(config.epochs):
        lr = lr_at(epoch, config)
        if remine is not None and epoch > 0 and target is not None and config.epsilon != 0.0:
            tri_pool = _resolve_triplet_pool(source, target, remine(epoch))
        rng = np.random.default_rng([config.seed, 7211, epoch])
        perm_src = rng.permutation(n_src)
        perm_tgt = rng.permutation(tgt_pool[0].shape[0]) if tgt_pool is not None else None
        perm_tri = rng.permutation(tri_pool[0].shape[0]) if tri_pool is not None else None

        sums = np.zeros(4)
        for i in range(steps):
            idx = perm_src[(i * B + offsets) % n_src]
            batch = Batch.empty(D, C)
            batch.src_X = X_src[idx]
            batch.src_y = y_src[idx]
            if tgt_pool is not None:
                TX, thard, tsoft, has_hard, has_soft = tgt_pool
                sel = perm_tgt[(i * B + offsets) % perm_tgt.size]
                hm = has_hard[sel]
                sm = has_soft[sel]
                batch.tgt_hard_X = TX[sel][hm]
                batch.tgt_hard_y = thard[sel][hm]
                batch.tgt_soft_X = TX[sel][sm]
                batch.tgt_soft_Y = tsoft[sel][sm]
            if tri_pool is not None:
                A, P, N = tri_pool
                sel = perm_tri[(i * B + offsets) % perm_tri.size]
                batch.tri_anchor_X = A[sel]
                batch.tri_pos_X = P[sel]
                batch.tri_neg_X = N[sel]
            breakdown, grads = _loss_and_grads(batch, params, config)
            params, state = adam_step(params, grads, state, lr)
            sums += (breakdown.L_c, breakdown.L_tri, breakdown.L_all,
                     breakdown.active_triplet_fraction)

        acc = None
        if eval_dataset is not None:
            acc = evaluate(params, eval_dataset).accuracy
        history.rows.append(EpochStats(
            epoch, lr, sums[0] / steps, sums[1] / steps, sums[2] / steps, sums[3] / steps,
            effective_margin(params, config), acc))

    return params, history


def evaluate(params: HeadParams, dataset: Dataset) -> Metrics:
    """Accuracy, per-class accuracy and confusion matrix (rows = true class).

    Reads visible labels when present, hidden labels otherwise; this is the
    only place hidden labels may be consumed.
    """
    if not dataset.samples:
        raise ValueError("empty dataset")
    if params.n_classes != dataset.dims.C or params.feature_dim != dataset.dims.D:
        raise ValueError("params shapes do not match dataset dims")
    labels = []
    for s in dataset.samples:
        value = s.label if s.label is not None else s.hidden_label
        if value is None:
            raise ValueError(f"sample {s.id} has no label for evaluation")
        labels.append(value)
    y = np.asarray(labels, dtype=np.int64)
    probs = predict_probs(params, dataset)
    preds = probs.argmax(axis=1)  # argmax ties resolve to the lowest class index
    C = dataset.dims.C
    confusion = np.zeros((C, C), dtype=np.int64)
    np.add.at(confusion, (y, preds), 1)
    row_sums = confusion.sum(axis=1)
    per_class = np.full(C, np.nan)
    nonzero = row_sums > 0
    per_class[nonzero] = confusion.diagonal()[nonzero] / row_sums[nonzero]
    return Metrics(float((preds == y).mean()), per_class, confusion)


def save_params(params: HeadParams, path: str | Path) -> None:
    """Text serialization in the same 17-significant-digit decimal convention
    as datasets; load_params reproduces every float bit-exactly."""
    H, D = params.W1.shape
    C = params.W2.shape[0]
    margin = "null" if params.margin_raw is None else fmt17(params.margin_raw)
    lines = [f'{{"D":{D},"H":{H},"C":{C},"margin_raw":{margin}}}']
    for name in _TENSOR_NAMES:
        arr = getattr(params, name)
        values = ",".join(fmt17(v) for v in arr.ravel())
        shape = ",".join(str(d) for d in arr.shape)
        lines.append(f'{{"tensor":"{name}","shape":[{shape}],"values":[{values}]}}')
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_params(path: str | Path) -> HeadParams:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").split("\n") if ln.strip()]
    if len(lines) != 1 + len(_TENSOR_NAMES):
        raise ValueError(f"malformed params file: expected {1 + len(_TENSOR_NAMES)} lines")
    header = json.loads(lines[0])
    tensors: dict[str, np.ndarray] = {}
    for line in lines[1:]:
        rec = json.loads(line)
        tensors[rec["tensor"]] = np.asarray(rec["values"], dtype=np.float64).reshape(rec["shape"])
    margin = header.get("margin_raw")
    return HeadParams(tensors["W1"], tensors["b1"], tensors["W2"], tensors["b2"],
                      None if margin is None else float(margin))
