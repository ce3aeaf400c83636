"""Policy space, subset sampling, and the moving-average prior over policies.

A policy is an ordered pair of image transforms.  With 16 transform kinds
there are 256 policies, indexed canonically as ``16 * first + second``.
Training maintains a probability vector ``pi`` over all policies; each
iteration pushes the batch-mean posterior weights of a sampled subset into
a fixed-length window, and ``pi`` is refreshed as the floored, renormalized
window mean.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .imgcore import TransformKind, apply_transform

N_KINDS = 16
POLICY_COUNT = N_KINDS * N_KINDS
MAGNITUDE_BINS = 10
PI_FLOOR = 1e-8
DEFAULT_WINDOW = 10


@dataclass(frozen=True)
class Policy:
    """Ordered pair of transforms applied first-then-second."""

    first: TransformKind
    second: TransformKind

    @property
    def index(self) -> int:
        return N_KINDS * int(self.first) + int(self.second)

    def __str__(self) -> str:
        return f"({self.first.name}, {self.second.name})"


class PolicySet:
    """The full collection of ordered transform pairs in canonical order."""

    def __init__(self, policies):
        self.policies = list(policies)
        if len(self.policies) != POLICY_COUNT:
            raise ValueError(
                f"expected {POLICY_COUNT} policies, got {len(self.policies)}")
        for i, pol in enumerate(self.policies):
            if pol.index != i:
                raise ValueError(f"policy at position {i} has index {pol.index}")

    def __len__(self) -> int:
        return len(self.policies)

    def __getitem__(self, i: int) -> Policy:
        return self.policies[i]

    def __iter__(self):
        return iter(self.policies)


def build_policy_set() -> PolicySet:
    """All 256 ordered pairs, position ``16 * first + second``."""
    kinds = list(TransformKind)
    return PolicySet(Policy(a, b) for a in kinds for b in kinds)


@dataclass(frozen=True)
class SubsetDraw:
    """Distinct policy indices drawn for one training iteration."""

    indices: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)


def sample_subset(s: int, k: int, rng: np.random.Generator) -> SubsetDraw:
    """Draw ``k`` distinct indices from ``range(s)`` without replacement."""
    if not 1 <= k <= s:
        raise ValueError(f"need 1 <= K <= S, got K={k}, S={s}")
    indices = np.sort(rng.choice(s, size=k, replace=False)).astype(np.int64)
    return SubsetDraw(indices=indices)


def apply_policy(img, label, policy: Policy, rng: np.random.Generator,
                 partner_source=None):
    """Apply both transforms of a policy at independently drawn strengths.

    Each transform gets a fresh magnitude bin ``b`` drawn uniformly from
    ``{0..9}`` and runs at level ``b / 9``.  ``partner_source`` is a callable
    ``partner_source(rng) -> (image, soft label)`` consulted only when a
    Mixup step needs a second sample; its label is folded into ``label``
    with the drawn mixing weight.
    """
    label = np.asarray(label, dtype=np.float64)
    out = img
    for kind in (policy.first, policy.second):
        bin_ = int(rng.integers(MAGNITUDE_BINS))
        level = bin_ / (MAGNITUDE_BINS - 1)
        partner = None
        if kind is TransformKind.MIXUP and partner_source is not None:
            partner = partner_source(rng)
        out, lam = apply_transform(out, kind, level, rng, partner=partner)
        if lam > 0.0:
            label = (1.0 - lam) * label + lam * np.asarray(partner[1],
                                                           dtype=np.float64)
    return out, label


@dataclass
class PiState:
    """Probability vector over policies plus its moving-average window.

    ``buffer`` holds the most recent raw pushes, oldest first; ``pi`` is
    always the floored, renormalized mean of the buffer (or uniform before
    the first push).
    """

    pi: np.ndarray
    buffer: list
    window: int


def init_pi(s: int, window: int = DEFAULT_WINDOW) -> PiState:
    if s < 1:
        raise ValueError(f"need S >= 1, got {s}")
    if window < 1:
        raise ValueError(f"need window >= 1, got {window}")
    return PiState(pi=np.full(s, 1.0 / s), buffer=[], window=window)


def update_pi(state: PiState, batch_mean_h_tilde,
              subset: SubsetDraw) -> PiState:
    """Push one iteration's batch-mean weights and refresh ``pi``.

    The weights cover only the drawn subset; all other policies contribute
    zero to this push.  ``pi`` becomes the entrywise-floored window mean,
    renormalized to sum to one.
    """
    h = np.asarray(batch_mean_h_tilde, dtype=np.float64)
    if h.shape != (len(subset),):
        raise ValueError(
            f"weight vector length {h.shape} does not match subset size "
            f"{len(subset)}")
    if np.any(h < 0.0):
        raise ValueError("weights must be non-negative")
    if abs(h.sum() - 1.0) > 1e-6:
        raise ValueError(f"weights must sum to 1, got {h.sum()!r}")
    s = len(state.pi)
    raw = np.zeros(s)
    raw[subset.indices] = h
    buffer = state.buffer + [raw]
    if len(buffer) > state.window:
        buffer = buffer[-state.window:]
    mean = np.mean(buffer, axis=0)
    floored = np.maximum(mean, PI_FLOOR)
    return PiState(pi=floored / floored.sum(), buffer=buffer,
                   window=state.window)


def pi_entropy(pi: np.ndarray) -> float:
    """Shannon entropy (nats) of a probability vector."""
    p = np.asarray(pi, dtype=np.float64)
    mask = p > 0.0
    return float(-(p[mask] * np.log(p[mask])).sum())


def save_pi(pi: np.ndarray, path) -> None:
    """Write one probability per line at full float64 precision.

    The write goes through a temporary file in the same directory and an
    atomic rename, so a crash never leaves a truncated snapshot behind.
    """
    pi = np.asarray(pi, dtype=np.float64)
    text = "".join(f"{v:.17g}\n" for v in pi)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_pi(path) -> np.ndarray:
    """Read a probability vector saved by :func:`save_pi` (bit-exact)."""
    with open(path) as fh:
        values = [float(line) for line in fh if line.strip()]
    pi = np.asarray(values, dtype=np.float64)
    if pi.size == 0:
        raise ValueError(f"{path} holds no probabilities")
    if not np.all(np.isfinite(pi)) or np.any(pi < 0.0):
        raise ValueError(f"{path} holds invalid probabilities")
    return pi
