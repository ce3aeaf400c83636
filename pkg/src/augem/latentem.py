"""EM core: policy posteriors, softmin weighting, expected loss, EM step.

Each iteration treats the identity of the augmentation policy as a latent
variable.  The E-step turns per-view likelihoods into a Bayes posterior
``h`` and then into softmin weights ``h_tilde`` that concentrate on the
views the model handles worst.  The M-step takes one SGD step on the
``h_tilde``-weighted loss (weights frozen) and refreshes the policy prior
``pi`` with the batch-mean weights.

Two reference objectives cover the temperature limits: ``ubs_objective``
(hardest view only) and ``advaa_objective`` (plain view average).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from . import nn
from .imgcore import cutout
from .policy import (PiState, PolicySet, SubsetDraw, apply_policy,
                     pi_entropy, sample_subset, update_pi)

LOG_LIKELIHOOD_FLOOR = -30.0

MODE_LATENT = "latent"
MODE_UBS = "ubs_limit"
MODE_UNIFORM = "uniform_limit"
_MODES = (MODE_LATENT, MODE_UBS, MODE_UNIFORM)


class DegenerateLikelihoodError(ValueError):
    """The likelihood collapsed: zero posterior mass everywhere, or a
    non-finite value produced by a diverging model."""


@dataclass(frozen=True)
class ViewBatch:
    """Per-sample log-likelihoods of the K augmented views."""

    log_p: np.ndarray
    subset: SubsetDraw

    def __post_init__(self):
        lp = np.asarray(self.log_p, dtype=np.float64)
        if lp.ndim != 2:
            raise ValueError(f"log_p must be (B, K), got shape {lp.shape}")
        if not np.all(np.isfinite(lp)):
            raise DegenerateLikelihoodError("log-likelihoods must be finite")
        if lp.max() > 1e-9:
            raise ValueError("log-likelihoods must be <= 0")
        if lp.shape[1] != len(self.subset):
            raise ValueError(
                f"log_p has {lp.shape[1]} views but subset has "
                f"{len(self.subset)}")
        object.__setattr__(self, "log_p", lp)

    @property
    def batch_size(self) -> int:
        return self.log_p.shape[0]

    @property
    def k(self) -> int:
        return self.log_p.shape[1]


@dataclass(frozen=True)
class LatentWeights:
    """Posterior ``h`` and softmin weights ``h_tilde``, rows summing to 1."""

    h: np.ndarray
    h_tilde: np.ndarray
    sigma: float


@dataclass(frozen=True)
class EmConfig:
    """Per-iteration EM settings.

    ``sigma`` may be 0 or ``inf``; both are routed to the closed-form limit
    weights instead of the softmin formula.  ``weight_decay`` and
    ``momentum`` parameterize the M-step optimizer; ``fixed_pi`` freezes
    the prior (ablation switch).
    """

    k: int = 6
    sigma: float = 1.0
    mode: str = MODE_LATENT
    window: int = 10
    fixed_pi: bool = False
    weight_decay: float = 0.0
    momentum: float = 0.0
    final_op: str = "none"
    final_side_frac: float = 0.5

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"need K >= 1, got {self.k}")
        if not (self.sigma >= 0.0):
            raise ValueError(f"need sigma >= 0, got {self.sigma}")
        if self.mode not in _MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.window < 1:
            raise ValueError(f"need window >= 1, got {self.window}")
        if self.final_op not in ("none", "cutout"):
            raise ValueError(f"unknown final op {self.final_op!r}")
        if not 0.0 <= self.final_side_frac <= 1.0:
            raise ValueError("final_side_frac must lie in [0, 1]")


@dataclass(frozen=True)
class StepMetrics:
    """One iteration's record for the metrics stream."""

    iteration: int
    expected_loss: float
    marginal_loss: float
    lr: float
    pi_entropy: float
    top_policies: tuple


@dataclass
class EmStepResult:
    params: nn.ModelParams
    pi_state: PiState
    metrics: StepMetrics
    velocity: Optional[list] = None


def _softmax_last(scores: np.ndarray) -> np.ndarray:
    shift = scores.max(axis=-1, keepdims=True)
    w = np.exp(scores - shift)
    return w / w.sum(axis=-1, keepdims=True)


def cond_prob_log(log_pi_k: np.ndarray, log_p: np.ndarray) -> np.ndarray:
    """Posterior rows from log-prior and log-likelihood, max-shifted.

    ``log_p`` may be one row or a (B, K) stack; ``log_pi_k`` broadcasts
    over rows.  Entries with zero prior (``-inf`` log) get zero posterior;
    a row with no support at all raises.
    """
    scores = np.asarray(log_pi_k, dtype=np.float64) \
        + np.asarray(log_p, dtype=np.float64)
    flat = np.atleast_2d(scores)
    if np.any(flat.max(axis=-1) == -np.inf):
        raise DegenerateLikelihoodError(
            "posterior has no support on the drawn subset")
    out = _softmax_last(flat)
    return out.reshape(scores.shape)


def cond_prob(pi_k, p_k) -> np.ndarray:
    """Bayes posterior h_z = pi_z p_z / sum_k pi_k p_k (log-space inside)."""
    pi = np.asarray(pi_k, dtype=np.float64)
    p = np.asarray(p_k, dtype=np.float64)
    if np.any(pi < 0.0) or np.any(p < 0.0):
        raise ValueError("probabilities must be non-negative")
    if float((pi * p).sum()) == 0.0:
        raise DegenerateLikelihoodError("sum of pi_z * p_z is zero")
    with np.errstate(divide="ignore"):
        return cond_prob_log(np.log(pi), np.log(p))


def softmin_weights(h: np.ndarray, sigma: float) -> np.ndarray:
    """Temperature-``sigma`` softmin over the last axis.

    Low entries of ``h`` get high weight; rows sum to one.  ``sigma`` must
    be a positive finite scalar — use :func:`limit_weights` for the 0 and
    infinity endpoints.
    """
    if not (sigma > 0.0) or math.isinf(sigma):
        raise ValueError(f"sigma must be finite and positive, got {sigma}")
    h = np.asarray(h, dtype=np.float64)
    if not np.all(np.isfinite(h)):
        raise ValueError("h must be finite")
    return _softmax_last(-h / sigma)


def limit_weights(h: np.ndarray, mode: str) -> np.ndarray:
    """Endpoint weights: indicator on the argmin set, or flat 1/K."""
    h = np.asarray(h, dtype=np.float64)
    if not np.all(np.isfinite(h)):
        raise ValueError("h must be finite")
    if mode == MODE_UNIFORM:
        return np.full_like(h, 1.0 / h.shape[-1])
    if mode == MODE_UBS:
        mins = h == h.min(axis=-1, keepdims=True)
        return mins / mins.sum(axis=-1, keepdims=True)
    raise ValueError(f"unknown limit mode {mode!r}")


def resolve_weights(h: np.ndarray, mode: str, sigma: float) -> np.ndarray:
    """Softmin weights, with sigma endpoints routed to their limits."""
    if mode == MODE_UBS or sigma == 0.0:
        return limit_weights(h, MODE_UBS)
    if mode == MODE_UNIFORM or math.isinf(sigma):
        return limit_weights(h, MODE_UNIFORM)
    if mode != MODE_LATENT:
        raise ValueError(f"unknown mode {mode!r}")
    return softmin_weights(h, sigma)


def expected_loss(views: ViewBatch, weights: LatentWeights,
                  log_pi_k) -> float:
    """-(1/B) sum_b sum_z h_tilde[b,z] * (log pi_z + log p[b,z])."""
    log_pi_k = np.asarray(log_pi_k, dtype=np.float64)
    if log_pi_k.shape != (views.k,):
        raise ValueError(
            f"log_pi_k shaped {log_pi_k.shape}, expected ({views.k},)")
    terms = log_pi_k[None, :] + views.log_p
    if not np.all(np.isfinite(terms)):
        raise FloatingPointError("non-finite terms in expected loss")
    return float(-(weights.h_tilde * terms).sum() / views.batch_size)


def marginal_loss(views: ViewBatch, pi_k) -> float:
    """-(1/B) sum_b log sum_z pi_z p[b,z]; the EM monitoring quantity."""
    pi_k = np.asarray(pi_k, dtype=np.float64)
    with np.errstate(divide="ignore"):
        log_pi = np.log(pi_k)
    return float(-logsumexp(views.log_p + log_pi[None, :], axis=1).mean())


def expected_loss_full(p_all, pi) -> float:
    """Full-set single-sample expected loss with plain posterior weights."""
    p = np.asarray(p_all, dtype=np.float64)
    pi = np.asarray(pi, dtype=np.float64)
    h = cond_prob(pi, p)
    joint = pi * p
    mask = h > 0.0
    return float(-(h[mask] * np.log(joint[mask])).sum())


def expected_loss_delta(p_all, pi, delta) -> float:
    """Subset-draw form of the single-sample loss.

    ``delta[z]`` is the inclusion probability of policy ``z``; the posterior
    denominator carries delta, and each summand is weighted by delta.  For
    constant delta this reduces algebraically to
    :func:`expected_loss_full`.
    """
    p = np.asarray(p_all, dtype=np.float64)
    pi = np.asarray(pi, dtype=np.float64)
    d = np.asarray(delta, dtype=np.float64)
    denom = float((d * pi * p).sum())
    if denom == 0.0:
        raise DegenerateLikelihoodError("delta-weighted denominator is zero")
    h_delta = pi * p / denom
    joint = pi * p
    w = d * h_delta
    mask = w > 0.0
    return float(-(w[mask] * np.log(joint[mask])).sum())


def ubs_objective(view_losses) -> float:
    """Batch mean of the per-sample worst (maximum) view loss."""
    losses = np.atleast_2d(np.asarray(view_losses, dtype=np.float64))
    return float(losses.max(axis=1).mean())


def advaa_objective(view_losses) -> float:
    """Batch mean of the per-sample average view loss."""
    losses = np.atleast_2d(np.asarray(view_losses, dtype=np.float64))
    return float(losses.mean(axis=1).mean())


def soft_log_likelihood(log_proba: np.ndarray, labels: np.ndarray):
    """Row-wise log-likelihood of a soft label: sum_c y_c log p_c."""
    return (np.asarray(labels, dtype=np.float64) * log_proba).sum(axis=-1)


def _partner_source(images, labels, b):
    """Uniform draw of a different in-batch sample (Mixup partner)."""
    n = len(images)

    def source(rng):
        if n == 1:
            return images[0], labels[0]
        j = int(rng.integers(n - 1))
        if j >= b:
            j += 1
        return images[j], labels[j]

    return source


def augment_batch(images, labels, subset: SubsetDraw, policy_set: PolicySet,
                  step_seed: int, final_op: str = "none",
                  final_side_frac: float = 0.5):
    """All K policy views for every sample, on per-sample random streams.

    Sample ``b`` uses the stream seeded ``[step_seed, b]``, so the result
    is independent of evaluation order across samples.  When ``final_op``
    is ``"cutout"`` each view gets a random cutout patch after its policy
    runs.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    b_size = images.shape[0]
    k = len(subset)
    views = np.empty((b_size, k, *images.shape[1:]))
    view_labels = np.empty((b_size, k, labels.shape[1]))
    for b in range(b_size):
        sample_rng = np.random.default_rng([step_seed, b])
        source = _partner_source(images, labels, b)
        for pos, z in enumerate(subset.indices):
            img, lab = apply_policy(images[b], labels[b],
                                    policy_set[int(z)], sample_rng,
                                    partner_source=source)
            if final_op == "cutout":
                img = cutout(img, final_side_frac, sample_rng)
            views[b, pos] = img
            view_labels[b, pos] = lab
    return views, view_labels


def em_step(params: nn.ModelParams, batch, pi_state: PiState,
            policy_set: PolicySet, cfg: EmConfig, rng: np.random.Generator,
            lr: float, velocity=None, iteration: int = 0) -> EmStepResult:
    """One full EM iteration on a mini-batch.

    Draws the policy subset, fans every sample into K augmented views,
    forms the posterior and softmin weights from the current model, takes
    one weighted SGD step (weights frozen), and pushes the batch-mean
    weights into the prior's moving-average window.
    """
    images, labels = batch
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if images.shape[0] == 0:
        raise ValueError("batch must be non-empty")

    subset = sample_subset(len(pi_state.pi), cfg.k, rng)
    step_seed = int(rng.integers(np.iinfo(np.int64).max))
    views, view_labels = augment_batch(images, labels, subset, policy_set,
                                       step_seed, cfg.final_op,
                                       cfg.final_side_frac)
    b_size, k = views.shape[:2]

    flat_logp = nn.predict_log_proba(params,
                                     views.reshape(b_size * k,
                                                   *views.shape[2:]))
    log_p = soft_log_likelihood(
        flat_logp, view_labels.reshape(b_size * k, -1)).reshape(b_size, k)
    view_batch = ViewBatch(log_p=log_p, subset=subset)

    pi_k = pi_state.pi[subset.indices]
    log_pi_k = np.log(pi_k)
    floored = np.maximum(log_p, LOG_LIKELIHOOD_FLOOR)
    h = cond_prob_log(log_pi_k, floored)
    h_tilde = resolve_weights(h, cfg.mode, cfg.sigma)
    weights = LatentWeights(h=h, h_tilde=h_tilde, sigma=cfg.sigma)

    e_loss = expected_loss(view_batch, weights, log_pi_k)
    m_loss = marginal_loss(view_batch, pi_k)

    _, grads = nn.weighted_loss_and_grad(params, views, view_labels, h_tilde)
    if cfg.momentum > 0.0:
        new_params, velocity = nn.sgd_momentum_update(
            params, grads, lr, cfg.weight_decay, cfg.momentum, velocity)
    else:
        new_params = nn.sgd_update(params, grads, lr, cfg.weight_decay)

    batch_mean = h_tilde.mean(axis=0)
    if cfg.fixed_pi:
        new_pi = pi_state
    else:
        new_pi = update_pi(pi_state, batch_mean, subset)

    order = np.argsort(batch_mean)[::-1][:5]
    top = tuple((int(subset.indices[i]), float(batch_mean[i]))
                for i in order)
    metrics = StepMetrics(iteration=iteration, expected_loss=e_loss,
                          marginal_loss=m_loss, lr=lr,
                          pi_entropy=pi_entropy(new_pi.pi),
                          top_policies=top)
    return EmStepResult(params=new_params, pi_state=new_pi, metrics=metrics,
                        velocity=velocity)
