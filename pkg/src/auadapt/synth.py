"""Synthetic domain-shift benchmark with AU templates as the cross-domain bridge.

Each class owns a distinct AU template (2-4 active units) shared by both
domains, so AU codes stay informative across the shift. Features are
class-conditioned Gaussian blobs; target-domain class means are a rotated and
translated copy of the source means, both scaled by ``feature_shift``. AU
scores are drawn strictly on the template side of the 0.5 binarization
threshold except for explicit flips, which makes the empirical per-bit code
flip rate equal ``au_flip_rate``. Per-sample random streams are keyed by
(seed, domain, index) so generation order is irrelevant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import SOURCE, TARGET, Dataset, Dims, Sample, make_sample

# geometry of the benchmark (per unit of feature_shift where applicable);
# class structure is strong relative to feature noise so that metric alignment
# is learnable, while the shift is large enough to break a source-only model
_MEAN_NORM = 8.0
_ROT_ANGLE = 1.4
_SHIFT_NORM = 6.0
# AU score side means: active units score high, inactive units score low
_ACTIVE_MEAN = 0.8
_INACTIVE_MEAN = 0.1

_EXPRESSION_NAMES = ("neutral", "happy", "surprise", "sad", "anger", "disgust", "fear")


@dataclass(frozen=True)
class SynthConfig:
    n_classes: int = 7
    feature_dim: int = 32
    au_count: int = 17
    n_source: int = 2000
    n_target: int = 2000
    feature_shift: float = 1.0
    feature_noise: float = 0.7
    au_flip_rate: float = 0.05
    au_score_noise: float = 0.15
    label_prior_skew: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2 or self.feature_dim < 1 or self.au_count < 1:
            raise ValueError("need n_classes >= 2, feature_dim >= 1, au_count >= 1")
        if self.n_source < self.n_classes or self.n_target < self.n_classes:
            raise ValueError("sample counts must be at least n_classes")
        if self.feature_shift < 0 or self.feature_noise < 0 or self.label_prior_skew < 0:
            raise ValueError("feature_shift, feature_noise and label_prior_skew must be >= 0")
        if not 0.0 <= self.au_flip_rate <= 0.5:
            raise ValueError("au_flip_rate must lie in [0, 0.5]")
        if not 0.0 < self.au_score_noise < 0.2:
            raise ValueError("au_score_noise must lie in (0, 0.2)")
        if self.seed < 0:
            raise ValueError("seed must be a non-negative integer")
        n_codes = sum(math.comb(self.au_count, k) for k in (2, 3, 4) if k <= self.au_count)
        if n_codes < self.n_classes:
            raise ValueError(f"au_count {self.au_count} admits only {n_codes} distinct templates")


@dataclass(frozen=True, eq=False)
class SynthMeta:
    templates: np.ndarray      # (C, K) uint8
    source_means: np.ndarray   # (C, D)
    target_means: np.ndarray   # (C, D)
    target_prior: np.ndarray   # (C,)
    class_names: tuple[str, ...]


def _class_names(C: int) -> tuple[str, ...]:
    if C == len(_EXPRESSION_NAMES):
        return _EXPRESSION_NAMES
    return tuple(f"class_{c}" for c in range(C))


def _draw_templates(C: int, K: int, rng: np.random.Generator) -> np.ndarray:
    templates = np.zeros((C, K), dtype=np.uint8)
    seen: set[bytes] = set()
    for c in range(C):
        while True:
            n_active = int(rng.integers(2, min(4, K) + 1))
            code = np.zeros(K, dtype=np.uint8)
            code[rng.choice(K, size=n_active, replace=False)] = 1
            if code.tobytes() not in seen:
                seen.add(code.tobytes())
                templates[c] = code
                break
    return templates


def _rotation(D: int, angle_scale: float, rng: np.random.Generator) -> np.ndarray:
    """Random multi-plane rotation; exact identity at zero angle scale."""
    if angle_scale == 0.0 or D < 2:
        return np.eye(D)
    Q, R = np.linalg.qr(rng.standard_normal((D, D)))
    Q = Q * np.sign(np.diagonal(R))  # deterministic orientation
    block = np.eye(D)
    for j in range(D // 2):
        theta = angle_scale * rng.uniform(0.5, 1.0)
        c, s = math.cos(theta), math.sin(theta)
        i = 2 * j
        block[i, i] = c
        block[i, i + 1] = -s
        block[i + 1, i] = s
        block[i + 1, i + 1] = c
    return Q @ block @ Q.T


def _beta_params(mean: float, std: float) -> tuple[float, float]:
    var = std * std
    kappa = mean * (1.0 - mean) / var - 1.0
    if kappa <= 0.0:
        raise ValueError(f"score spread {std} too large for side mean {mean}")
    return mean * kappa, (1.0 - mean) * kappa


def _make_meta(config: SynthConfig) -> SynthMeta:
    C, D, K = config.n_classes, config.feature_dim, config.au_count
    rng = np.random.default_rng([config.seed, 11])
    templates = _draw_templates(C, K, rng)

    directions = rng.standard_normal((C, D))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    source_means = _MEAN_NORM * directions

    rng_geo = np.random.default_rng([config.seed, 13])
    if config.feature_shift == 0.0:
        target_means = source_means.copy()
    else:
        rot = _rotation(D, _ROT_ANGLE * config.feature_shift, rng_geo)
        shift_dir = rng_geo.standard_normal(D)
        shift_dir /= np.linalg.norm(shift_dir)
        translation = _SHIFT_NORM * config.feature_shift * shift_dir
        target_means = source_means @ rot.T + translation

    rng_prior = np.random.default_rng([config.seed, 17])
    z = rng_prior.standard_normal(C)
    weights = np.exp(config.label_prior_skew * z)
    target_prior = weights / weights.sum()

    return SynthMeta(templates, source_means, target_means, target_prior, _class_names(C))


def _sample_scores(template_row: np.ndarray, config: SynthConfig,
                   rng: np.random.Generator) -> np.ndarray:
    spread = 2.0 * config.au_score_noise
    a_hi, b_hi = _beta_params((_ACTIVE_MEAN - 0.5) / 0.5, spread)
    a_lo, b_lo = _beta_params((0.5 - _INACTIVE_MEAN) / 0.5, spread)
    flips = rng.random(template_row.size) < config.au_flip_rate
    side = template_row.astype(bool) ^ flips
    a = np.where(side, a_hi, a_lo)
    b = np.where(side, b_hi, b_lo)
    magnitude = rng.beta(a, b)
    return np.where(side, 0.5 + 0.5 * magnitude, 0.5 - 0.5 * magnitude)


def _generate_domain(domain: str, n: int, id_offset: int, prior: np.ndarray,
                     means: np.ndarray, meta: SynthMeta, config: SynthConfig) -> list[Sample]:
    cum = np.cumsum(prior)
    domain_idx = 0 if domain == SOURCE else 1
    samples: list[Sample] = []
    for i in range(n):
        rng = np.random.default_rng([config.seed, domain_idx, i])
        label = int(np.searchsorted(cum, rng.random(), side="right"))
        label = min(label, prior.size - 1)
        features = means[label] + config.feature_noise * rng.standard_normal(config.feature_dim)
        scores = _sample_scores(meta.templates[label], config, rng)
        if domain == SOURCE:
            samples.append(make_sample(id_offset + i, SOURCE, features, scores, label=label))
        else:
            samples.append(make_sample(id_offset + i, TARGET, features, scores, hidden_label=label))
    return samples


def generate(config: SynthConfig) -> tuple[Dataset, Dataset, SynthMeta]:
    """Deterministically generate a (source, target, meta) benchmark instance.

    Source labels are visible; target labels are hidden (evaluation only).
    Ids are globally unique across the pair.
    """
    meta = _make_meta(config)
    C = config.n_classes
    uniform = np.full(C, 1.0 / C)
    dims = Dims(config.feature_dim, config.au_count, C)
    src_samples = _generate_domain(SOURCE, config.n_source, 0, uniform,
                                   meta.source_means, meta, config)
    tgt_samples = _generate_domain(TARGET, config.n_target, config.n_source, meta.target_prior,
                                   meta.target_means, meta, config)
    source = Dataset(tuple(src_samples), dims, meta.class_names)
    target = Dataset(tuple(tgt_samples), dims, meta.class_names)
    return source, target, meta


def describe(meta: SynthMeta) -> str:
    """CSV-style dump of templates, mean norms, and target priors; one row per class."""
    lines = ["class,template,active_aus,source_mean_norm,target_mean_norm,target_prior"]
    for c, name in enumerate(meta.class_names):
        bits = "".join(str(int(b)) for b in meta.templates[c])
        active = ";".join(str(k) for k in np.flatnonzero(meta.templates[c]))
        lines.append(f"{name},{bits},{active},"
                     f"{np.linalg.norm(meta.source_means[c]):.6f},"
                     f"{np.linalg.norm(meta.target_means[c]):.6f},"
                     f"{meta.target_prior[c]:.6f}")
    return "\n".join(lines) + "\n"


def meta_to_dict(meta: SynthMeta) -> dict:
    return {
        "class_names": list(meta.class_names),
        "templates": meta.templates.tolist(),
        "source_means": meta.source_means.tolist(),
        "target_means": meta.target_means.tolist(),
        "target_prior": meta.target_prior.tolist(),
    }


def meta_from_dict(data: dict) -> SynthMeta:
    return SynthMeta(
        np.asarray(data["templates"], dtype=np.uint8),
        np.asarray(data["source_means"], dtype=np.float64),
        np.asarray(data["target_means"], dtype=np.float64),
        np.asarray(data["target_prior"], dtype=np.float64),
        tuple(data["class_names"]),
    )
