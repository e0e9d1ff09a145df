"""Training objectives with analytic gradients with respect to candidate scores.

Every function returns a :class:`LossResult`; ``grad_pos`` is dL/ds for the
positive and ``grad_negs[k]`` is dL/ds for the k-th negative (for ``bce`` the
single score's gradient sits in ``grad_pos`` regardless of label, and for
``listwise`` the full gradient vector sits in ``grad_negs``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

DEFAULT_TAU = 0.02
DEFAULT_MARGIN = 1.0


@dataclass(frozen=True)
class LossResult:
    loss: float
    grad_pos: float
    grad_negs: np.ndarray


def _check_tau(tau: float) -> None:
    if not tau > 0:
        raise ValueError(f"temperature must be > 0, got {tau}")


def _logsumexp(x: np.ndarray) -> float:
    m = float(np.max(x))
    return m + math.log(float(np.sum(np.exp(x - m))))


def _neg_log_softmax_at(x: np.ndarray, i: int) -> float:
    """-log softmax(x)[i], keeping full relative precision when it is tiny."""
    d = x - x[i]
    rest = np.delete(d, i)
    m = float(np.max(rest))
    if m <= 0.0:
        return math.log1p(float(np.sum(np.exp(rest))))
    return m + math.log(math.exp(-m) + float(np.sum(np.exp(rest - m))))


def softmax(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - np.max(x))
    return e / e.sum()


def infonce(s_pos: float, s_negs: Sequence[float], tau: float = DEFAULT_TAU) -> LossResult:
    """Single-positive InfoNCE on raw similarity scores.

    ``loss = -log softmax(s / tau)[pos]``. The gradient on a negative is its
    softmax probability divided by ``tau``; the positive gets
    ``-(1 - P(pos)) / tau``, so the components sum to zero.
    """
    _check_tau(tau)
    negs = np.asarray(s_negs, dtype=np.float64).reshape(-1)
    if negs.size == 0:
        return LossResult(0.0, 0.0, negs.copy())
    logits = np.concatenate(([float(s_pos)], negs)) / tau
    lse = _logsumexp(logits)
    p = np.exp(logits - lse)
    loss = _neg_log_softmax_at(logits, 0)
    grad_negs = p[1:] / tau
    grad_pos = -float(grad_negs.sum())
    return LossResult(float(loss), grad_pos, grad_negs)


def _log_sigmoid(x: float) -> float:
    # log(sigmoid(x)) = -log1p(exp(-x)), evaluated on the non-overflowing side
    if x >= 0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def bce(score: float, label: bool) -> LossResult:
    """Binary cross-entropy on a logit. The gradient is ``sigmoid(s) - y``."""
    s = float(score)
    sig = sigmoid(s)
    if label:
        return LossResult(-_log_sigmoid(s), sig - 1.0, np.zeros(0))
    return LossResult(-_log_sigmoid(-s), sig, np.zeros(0))


def pairwise_hinge(s_pos: float, s_neg: float, margin: float = DEFAULT_MARGIN) -> LossResult:
    if not margin > 0:
        raise ValueError(f"margin must be > 0, got {margin}")
    slack = margin - float(s_pos) + float(s_neg)
    if slack > 0:
        return LossResult(slack, -1.0, np.array([1.0]))
    return LossResult(0.0, 0.0, np.array([0.0]))


def listwise(scores: Sequence[float], target: Sequence[float]) -> LossResult:
    """Softmax cross-entropy against a one-hot target.

    The reported gradient is over every entry: ``softmax(scores) - target``.
    ``grad_pos`` repeats the entry at the hot index.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    t = np.asarray(target, dtype=np.float64).reshape(-1)
    if t.shape != s.shape or not np.all((t == 0) | (t == 1)) or t.sum() != 1:
        raise ValueError("target must be one-hot over the score indices")
    hot = int(np.argmax(t))
    lse = _logsumexp(s)
    loss = _neg_log_softmax_at(s, hot) if s.size > 1 else 0.0
    grad = np.exp(s - lse) - t
    return LossResult(float(loss), float(grad[hot]), grad)
