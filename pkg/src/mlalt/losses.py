"""Training objectives: CTC, label-smoothed KL, language cross-entropy, and their mixes.

Reductions: CTC is summed over the frames of an utterance and averaged over the
batch; the KL loss is averaged over decoder steps and then over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, InfeasibleAlignmentError
from .tensor import Tensor, take_along_last
from . import tensor as T

NEG_INF = -np.inf


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.3
    beta: float = 0.1
    label_smoothing: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.beta < 0.0:
            raise ConfigError(f"beta must be nonnegative, got {self.beta}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError(f"label_smoothing must lie in [0, 1), got {self.label_smoothing}")


# -- CTC -------------------------------------------------------------------------------------

def ctc_min_frames(target: Sequence[int]) -> int:
    """Frames needed to emit ``target``: one per label plus a blank between repeats."""
    target = list(target)
    return len(target) + sum(1 for a, b in zip(target, target[1:]) if a == b)


def _logsumexp3(a, b, c):
    m = np.maximum(np.maximum(a, b), c)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return safe + np.log(np.exp(a - safe) + np.exp(b - safe) + np.exp(c - safe))


def ctc_forward_backward(log_probs: np.ndarray, target: Sequence[int], blank: int = 0):
    """Negative log-likelihood and its gradient w.r.t. ``log_probs`` (``T x N``).

    Log-space alpha/beta recursions over the blank-interleaved target.
    """
    lp = np.asarray(log_probs, dtype=np.float64)
    if lp.ndim != 2:
        raise DimensionError(f"ctc: expected T x N log-probabilities, got {lp.shape}")
    n_frames, n_tok = lp.shape
    target = [int(t) for t in target]
    if any(t == blank for t in target):
        raise ContractError("ctc: target must not contain the blank symbol")
    if any(not 0 <= t < n_tok for t in target):
        raise IndexError(f"ctc: target id out of range [0, {n_tok})")
    need = ctc_min_frames(target)
    if n_frames < need:
        raise InfeasibleAlignmentError(
            f"target of length {len(target)} needs {need} frames, only {n_frames} available")

    ext = np.full(2 * len(target) + 1, blank, dtype=np.int64)
    ext[1::2] = target
    n_states = ext.size
    skip = np.zeros(n_states, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    emit = lp[:, ext]  # T x S

    alpha = np.full((n_frames, n_states), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if n_states > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, n_frames):
        prev = alpha[t - 1]
        stay = prev
        step = np.concatenate(([NEG_INF], prev[:-1]))
        jump = np.where(skip, np.concatenate(([NEG_INF, NEG_INF], prev[:-2])), NEG_INF)
        alpha[t] = _logsumexp3(stay, step, jump) + emit[t]

    beta = np.full((n_frames, n_states), NEG_INF)
    beta[-1, -1] = 0.0
    if n_states > 1:
        beta[-1, -2] = 0.0
    for t in range(n_frames - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        stay = nxt
        step = np.concatenate((nxt[1:], [NEG_INF]))
        jump_src = np.concatenate((nxt[2:], [NEG_INF, NEG_INF]))
        skip_next = np.concatenate((skip[2:], [False, False]))
        jump = np.where(skip_next, jump_src, NEG_INF)
        beta[t] = _logsumexp3(stay, step, jump)

    ends = alpha[-1, -1] if n_states == 1 else np.logaddexp(alpha[-1, -1], alpha[-1, -2])
    log_like = float(ends)
    if not np.isfinite(log_like):
        raise FloatingPointError("ctc: total path probability underflowed")

    occupancy = np.exp(alpha + beta - log_like)  # T x S
    grad = np.zeros_like(lp)
    for s in range(n_states):
        grad[:, ext[s]] -= occupancy[:, s]
    return -log_like, grad


def ctc_loss(log_probs: Tensor, target: Sequence[int], blank: int = 0) -> Tensor:
    """CTC negative log-likelihood of one utterance, differentiable w.r.t. ``log_probs``."""
    nll, grad = ctc_forward_backward(log_probs.data, target, blank)
    return Tensor._result(np.array(nll), (log_probs,), lambda g: (g * grad,), "ctc_loss")


def ctc_loss_batch(log_probs: Tensor, lengths: Sequence[int], targets: Sequence[Sequence[int]],
                   blank: int = 0) -> Tensor:
    """Mean over the batch of per-utterance CTC sums; frames past ``lengths[b]`` are ignored."""
    b_size = log_probs.shape[0]
    if len(lengths) != b_size or len(targets) != b_size:
        raise DimensionError("ctc_loss_batch: lengths/targets do not match batch size")
    total = 0.0
    grad = np.zeros_like(log_probs.data)
    for b in range(b_size):
        n = int(lengths[b])
        nll, g = ctc_forward_backward(log_probs.data[b, :n], targets[b], blank)
        total += nll
        grad[b, :n] = g
    grad /= b_size
    return Tensor._result(np.array(total / b_size), (log_probs,), lambda g: (g * grad,), "ctc_loss_batch")


# -- seq2seq KL ----------------------------------------------------------------------------------

def smoothed_targets(target: Sequence[int], n_tok: int, smoothing: float) -> np.ndarray:
    """Rows of ``1 - s`` on the label and ``s / (N - 1)`` elsewhere."""
    target = np.asarray(target, dtype=np.int64)
    off = smoothing / (n_tok - 1) if n_tok > 1 else 0.0
    q = np.full((target.size, n_tok), off)
    q[np.arange(target.size), target] = 1.0 - smoothing
    return q


def _xlogx(q: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(q > 0, q * np.log(np.where(q > 0, q, 1.0)), 0.0)


def kl_s2s_loss(log_probs: Tensor, y_eos: Sequence[int], smoothing: float = 0.1) -> Tensor:
    """Mean over steps of KL(q || p) with ``q`` the label-smoothed one-hot target."""
    if log_probs.ndim != 2 or log_probs.shape[0] != len(y_eos):
        raise ContractError(f"kl_s2s_loss: {log_probs.shape} posteriorgram vs {len(y_eos)} targets")
    q = smoothed_targets(y_eos, log_probs.shape[1], smoothing)
    steps = len(y_eos)
    value = float((_xlogx(q) - q * log_probs.data).sum() / steps)
    grad = -q / steps
    return Tensor._result(np.array(value), (log_probs,), lambda g: (g * grad,), "kl_s2s_loss")


def kl_s2s_loss_batch(log_probs: Tensor, targets: Sequence[Sequence[int]],
                      smoothing: float = 0.1) -> Tensor:
    """Batched KL: ``targets[b]`` is ``y_eos`` of item b; steps past its length are ignored."""
    b_size, _, n_tok = log_probs.shape
    if len(targets) != b_size:
        raise DimensionError("kl_s2s_loss_batch: targets do not match batch size")
    total = 0.0
    grad = np.zeros_like(log_probs.data)
    for b, tgt in enumerate(targets):
        n = len(tgt)
        if n == 0 or n > log_probs.shape[1]:
            raise ContractError(f"kl_s2s_loss_batch: item {b} has {n} targets for {log_probs.shape[1]} steps")
        q = smoothed_targets(tgt, n_tok, smoothing)
        total += float((_xlogx(q) - q * log_probs.data[b, :n]).sum()) / n
        grad[b, :n] = -q / (n * b_size)
    return Tensor._result(np.array(total / b_size), (log_probs,), lambda g: (g * grad,), "kl_s2s_loss_batch")


# -- language identification --------------------------------------------------------------------

def lang_ce_loss(p_l, label, from_log: bool = False) -> Tensor:
    """``-log p_l[label]``, averaged when ``p_l`` is a ``B x M`` batch.

    ``p_l`` holds probabilities, or log-probabilities when ``from_log`` is set.
    """
    p_l = T.as_tensor(p_l)
    labels = np.atleast_1d(np.asarray(label, dtype=np.int64))
    m = p_l.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= m):
        raise IndexError(f"language label {labels.tolist()} out of range [0, {m})")
    if p_l.ndim == 1:
        picked = take_along_last(T.reshape(p_l, (1, m)), labels[:1])
    else:
        picked = take_along_last(p_l, labels)
    logs = picked if from_log else T.log(picked)
    return -T.mean(logs)


# -- mixtures ---------------------------------------------------------------------------------

def mix(l_ctc: Tensor, l_s2s: Tensor, weights: LossWeights, l_ce: Optional[Tensor] = None) -> Tensor:
    """alpha * CTC + (1 - alpha) * KL  [+ beta * CE]."""
    total = l_ctc * weights.alpha + l_s2s * (1.0 - weights.alpha)
    if l_ce is not None:
        total = total + l_ce * weights.beta
    return total


def combined_loss(p_ctc: Tensor, p_s2s: Tensor, y: Sequence[int], y_eos: Sequence[int],
                  weights: LossWeights = LossWeights()) -> Tensor:
    return mix(ctc_loss(p_ctc, y), kl_s2s_loss(p_s2s, y_eos, weights.label_smoothing), weights)


def combined_loss_selfcond(p_ctc: Tensor, p_s2s: Tensor, y: Sequence[int], y_eos: Sequence[int],
                           p_l, label: int, weights: LossWeights = LossWeights(),
                           from_log: bool = False) -> Tensor:
    return mix(ctc_loss(p_ctc, y), kl_s2s_loss(p_s2s, y_eos, weights.label_smoothing), weights,
               lang_ce_loss(p_l, label, from_log=from_log))
