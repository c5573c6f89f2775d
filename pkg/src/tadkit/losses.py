"""Triplet, circle and cross-entropy losses with analytic gradients, plus PK sampling.

Losses act on similarities supplied by the caller; nothing here learns
embeddings.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import RangeError, TadError

CE_EPS = 1e-12


@dataclass(frozen=True)
class TripletParams:
    m: float = 0.3

    def __post_init__(self):
        if self.m < 0:
            raise RangeError(f"triplet margin must be >= 0, got {self.m}")


@dataclass(frozen=True)
class CircleParams:
    m: float = 0.25
    gamma: float = 32.0

    def __post_init__(self):
        if not 0 <= self.m <= 1:
            raise RangeError(f"circle margin must lie in [0, 1], got {self.m}")
        if self.gamma < 0:
            raise RangeError(f"gamma must be >= 0, got {self.gamma}")


@dataclass(frozen=True)
class SimilarityBatch:
    """Positive and negative similarities of one anchor."""

    s_p: np.ndarray
    s_n: np.ndarray

    def __post_init__(self):
        s_p = np.atleast_1d(np.asarray(self.s_p, dtype=np.float64))
        s_n = np.atleast_1d(np.asarray(self.s_n, dtype=np.float64))
        for s in (s_p, s_n):
            if s.ndim != 1 or np.any(np.abs(s) > 1) or not np.all(np.isfinite(s)):
                raise RangeError("similarities must be finite and lie in [-1, 1]")
        object.__setattr__(self, "s_p", s_p)
        object.__setattr__(self, "s_n", s_n)


def triplet_loss(s_p: float, s_n: float, params: TripletParams = TripletParams()):
    """``max(s_n - s_p + m, 0)`` with its (sub)gradient; 0 at the kink."""
    v = s_n - s_p + params.m
    if v > 0:
        return v, -1.0, 1.0
    return 0.0, 0.0, 0.0


def triplet_loss_batch(batch: SimilarityBatch, params: TripletParams = TripletParams()):
    """Mean triplet loss over every (positive, negative) pair of one anchor.

    Returns ``(value, grad_s_p, grad_s_n)``.
    """
    s_p, s_n = batch.s_p, batch.s_n
    if len(s_p) == 0 or len(s_n) == 0:
        return 0.0, np.zeros_like(s_p), np.zeros_like(s_n)
    v = s_n[None, :] - s_p[:, None] + params.m
    active = (v > 0).astype(np.float64)
    n_pairs = v.size
    value = float(np.sum(v * active) / n_pairs)
    return value, -active.sum(axis=1) / n_pairs, active.sum(axis=0) / n_pairs


def circle_weights(batch: SimilarityBatch, params: CircleParams):
    """Self-paced weights ``alpha_p = [1 + m - s_p]_+`` and ``alpha_n = [s_n + m]_+``."""
    alpha_p = np.maximum(1.0 + params.m - batch.s_p, 0.0)
    alpha_n = np.maximum(batch.s_n + params.m, 0.0)
    return alpha_p, alpha_n


def _logsumexp(x: np.ndarray):
    mx = np.max(x)
    e = np.exp(x - mx)
    total = e.sum()
    return mx + np.log(total), e / total


def circle_loss(batch: SimilarityBatch, params: CircleParams = CircleParams(), alphas=None):
    """Circle loss of one anchor and its gradient w.r.t. every similarity.

    The double sum over (negative, positive) pairs factorises, so the loss is
    ``softplus(lse(logit_n) + lse(logit_p))`` with
    ``logit_n = gamma * alpha_n * (s_n - m)`` and
    ``logit_p = -gamma * alpha_p * (s_p - (1 - m))``.
    The weights alpha are held constant when differentiating. Pass
    ``alphas=(alpha_p, alpha_n)`` to evaluate with frozen weights.

    Returns ``(value, grad_s_p, grad_s_n)``.
    """
    if len(batch.s_p) == 0 or len(batch.s_n) == 0:
        raise TadError("circle loss needs at least one positive and one negative similarity")
    alpha_p, alpha_n = circle_weights(batch, params) if alphas is None else alphas
    delta_p, delta_n = 1.0 - params.m, params.m
    gamma = params.gamma
    logit_p = -gamma * alpha_p * (batch.s_p - delta_p)
    logit_n = gamma * alpha_n * (batch.s_n - delta_n)
    lse_p, soft_p = _logsumexp(logit_p)
    lse_n, soft_n = _logsumexp(logit_n)
    z = lse_p + lse_n
    value = float(np.logaddexp(0.0, z))
    sig = np.exp(-np.logaddexp(0.0, -z))  # logistic(z) without overflow
    grad_p = sig * soft_p * (-gamma * alpha_p)
    grad_n = sig * soft_n * (gamma * alpha_n)
    return value, grad_p, grad_n


def cross_entropy(probabilities, true_class: int):
    p = np.asarray(probabilities, dtype=np.float64)
    if not 0 <= true_class < len(p):
        raise TadError(f"class index {true_class} out of range for {len(p)} classes")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise RangeError("probabilities must be non-negative and sum to 1")
    q = p[true_class] + CE_EPS
    grad = np.zeros_like(p)
    grad[true_class] = -1.0 / q
    return float(-np.log(q)), grad


def combined_loss(ce: float, metric: float, weight: float = 1.0) -> float:
    if weight < 0:
        raise RangeError(f"combination weight must be >= 0, got {weight}")
    return ce + weight * metric


def anchor_batches(similarity, labels: Sequence[int], mining: str = "all") -> list[SimilarityBatch]:
    """Split an N x N similarity matrix into per-anchor positive/negative lists.

    ``mining="all"`` keeps every pair; ``"hard"`` keeps only the least similar
    positive and the most similar negative. Anchors lacking either a positive
    or a negative are skipped.
    """
    sim = np.asarray(similarity, dtype=np.float64)
    labels = np.asarray(labels)
    if sim.shape != (len(labels), len(labels)):
        raise TadError(f"similarity matrix shape {sim.shape} does not match {len(labels)} labels")
    if mining not in ("all", "hard"):
        raise TadError(f"unknown mining mode {mining!r}")
    out = []
    idx = np.arange(len(labels))
    for i in idx:
        pos = (labels == labels[i]) & (idx != i)
        neg = labels != labels[i]
        if not pos.any() or not neg.any():
            continue
        s_p, s_n = sim[i, pos], sim[i, neg]
        if mining == "hard":
            s_p, s_n = s_p[[np.argmin(s_p)]], s_n[[np.argmax(s_n)]]
        out.append(SimilarityBatch(s_p, s_n))
    return out


@dataclass(frozen=True)
class SamplerConfig:
    p_categories: int
    k_samples: int
    seed: int = 0

    def __post_init__(self):
        if self.p_categories < 1 or self.k_samples < 1:
            raise RangeError("P and K must both be >= 1")


def pk_sample(labels: Sequence[int], cfg: SamplerConfig) -> list[int]:
    """Indices of a P x K mini-batch: P distinct categories, K samples each.

    ``labels[i]`` is the first category of sample ``i``; extra categories of
    multi-label samples are ignored by the caller. Classes with fewer than K
    members are drawn with replacement.
    """
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) < cfg.p_categories:
        raise TadError(f"need {cfg.p_categories} distinct labels, only {len(classes)} present")
    rng = np.random.default_rng(cfg.seed)
    chosen = rng.choice(classes, size=cfg.p_categories, replace=False)
    batch = []
    for c in chosen:
        members = np.flatnonzero(labels == c)
        replace = len(members) < cfg.k_samples
        batch.extend(int(i) for i in rng.choice(members, size=cfg.k_samples, replace=replace))
    return batch


def first_category(label_lists) -> list[int]:
    """Reduce multi-label samples to their first category for PK batching."""
    out = []
    for labels in label_lists:
        if isinstance(labels, (int, np.integer)):
            out.append(int(labels))
        elif len(labels) == 0:
            raise TadError("sample has no category")
        else:
            out.append(int(labels[0]))
    return out


def batch_metric_loss(similarity, labels, loss: str = "circle", mining: str = "all", params=None) -> float:
    """Mean per-anchor metric loss over a P x K mini-batch."""
    batches = anchor_batches(similarity, labels, mining)
    if not batches:
        return 0.0
    if loss == "circle":
        fn, params = circle_loss, params or CircleParams()
    elif loss == "triplet":
        fn, params = triplet_loss_batch, params or TripletParams()
    else:
        raise TadError(f"unknown metric loss {loss!r}")
    return float(np.mean([fn(b, params)[0] for b in batches]))
