"""Teacher-forced training with Adam, a Noam schedule and best-WER checkpoint selection.

Training log format: one tab-separated line per event, fields in fixed order::

    step   <step>  <lr>  <loss>  <ctc>  <s2s>  <ce or ->
    epoch  <epoch> <step> <valid WER %> <best WER %> <skipped>
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .datapipe import Utterance, make_batches
from .errors import ConfigError, ContractError, NonFiniteError
from .losses import LossWeights, ctc_loss_batch, kl_s2s_loss_batch, lang_ce_loss, mix
from .model import ALTModel, ConditioningMode
from .tensor import Tensor


@dataclass
class TrainConfig:
    lr_base: float = 0.001
    warmup_steps: int = 25000
    epochs: int = 50
    batch_size: int = 8
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-9
    clip_norm: float = 5.0
    max_steps: Optional[int] = None
    alpha: float = 0.3
    beta: float = 0.1
    label_smoothing: float = 0.1
    valid_every: int = 1            # epochs between validation passes
    valid_beam: int = 1             # 1 = greedy
    stop_wer: Optional[float] = None  # stop once validation WER <= this

    def __post_init__(self):
        if self.warmup_steps < 1:
            raise ConfigError("warmup_steps must be >= 1")
        if self.lr_base <= 0:
            raise ConfigError("lr_base must be positive")
        if self.epochs < 1 or self.batch_size < 1 or self.valid_every < 1 or self.valid_beam < 1:
            raise ConfigError("epochs, batch_size, valid_every and valid_beam must be positive")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be positive when set")

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.beta, self.label_smoothing)

    def to_dict(self) -> dict:
        return asdict(self)


def noam_lr(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to ``lr_base`` at ``warmup_steps``, then inverse-sqrt decay."""
    if step < 1:
        raise ContractError(f"learning-rate step must be >= 1, got {step}")
    w = cfg.warmup_steps
    return cfg.lr_base * min(step / w, math.sqrt(w / step))


class Adam:
    """Adam with bias correction and optional global-norm clipping."""

    def __init__(self, named_params, beta1: float = 0.9, beta2: float = 0.98, eps: float = 1e-9,
                 clip_norm: Optional[float] = None):
        self.params = dict(named_params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.clip_norm = clip_norm
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.t = 0

    def step(self, lr: float) -> float:
        """Apply one update from the parameters' ``.grad``; returns the pre-clip gradient norm."""
        grads = {}
        for name, p in self.params.items():
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            if g.shape != p.shape:
                raise ContractError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
            if not np.isfinite(g).all():
                raise NonFiniteError(f"non-finite gradient in parameter {name!r}; step aborted")
            grads[name] = g
        norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        scale = 1.0
        if self.clip_norm is not None and norm > self.clip_norm:
            scale = self.clip_norm / (norm + 1e-12)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = grads[name] * scale
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return norm


@dataclass
class TrainState:
    step: int = 0
    best_wer: float = math.inf
    best_step: int = 0
    best_state: Optional[dict] = None
    history: list = field(default_factory=list)     # (epoch, step, valid WER)
    skipped: int = 0
    losses: list = field(default_factory=list)


def batch_loss(model: ALTModel, batch, weights: LossWeights):
    """Forward a batch and return ``(total, ctc, s2s, ce-or-None)`` loss tensors."""
    lang = batch.langs if model.mode.needs_language else None
    out = model.forward_train(batch.mel, batch.y_bos, lang, batch.mel_lengths)
    l_ctc = ctc_loss_batch(out.ctc_log_probs, out.enc_lengths, batch.targets)
    l_s2s = kl_s2s_loss_batch(out.s2s_log_probs, batch.y_eos, weights.label_smoothing)
    l_ce = None
    if model.mode is ConditioningMode.SELF:
        l_ce = lang_ce_loss(out.lang_log_probs, batch.langs, from_log=True)
    return mix(l_ctc, l_s2s, weights, l_ce), l_ctc, l_s2s, l_ce


def validation_wer(model: ALTModel, vocab, utterances: Sequence[Utterance], beam: int = 1) -> float:
    from .decoder import beam_search, greedy_decode_batch
    from .evaluation import score_pairs
    from .vocab import decode

    langs = [u.lang_index for u in utterances] if model.mode.needs_language else None
    if beam == 1:
        hyps = greedy_decode_batch(model, [u.mel for u in utterances], langs)
    else:
        hyps = [beam_search(model, u.mel, None if langs is None else langs[i], beam).tokens
                for i, u in enumerate(utterances)]
    triples = [(u.entry.lang, u.entry.text, decode(h, vocab)) for u, h in zip(utterances, hyps)]
    return score_pairs(triples).overall_wer


def train(model: ALTModel, train_utts: Sequence[Utterance], vocab, cfg: TrainConfig,
          valid_utts: Optional[Sequence[Utterance]] = None,
          log: Optional[Callable[[str], None]] = None,
          on_improve: Optional[Callable[[TrainState], None]] = None) -> TrainState:
    """Train in place; the model ends up holding the lowest-validation-WER parameters.

    Without a validation set the training utterances are scored instead.
    """
    if not train_utts:
        raise ConfigError("empty training corpus")
    if vocab is not None and len(vocab) != model.config.vocab_size:
        raise ConfigError(f"vocabulary size {len(vocab)} != model vocab_size {model.config.vocab_size}")
    valid = list(valid_utts) if valid_utts else list(train_utts)
    weights = cfg.loss_weights
    opt = Adam(model.named_parameters(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.clip_norm)
    state = TrainState()
    emit = log or (lambda line: None)
    model.train()

    for epoch in range(1, cfg.epochs + 1):
        batches, skipped = make_batches(train_utts, cfg.batch_size, seed=cfg.seed * 100003 + epoch,
                                        output_length=model.output_length)
        state.skipped += len(skipped)
        if not batches:
            raise ConfigError("epoch contains no trainable batch (all utterances infeasible)")
        for batch in batches:
            state.step += 1
            lr = noam_lr(state.step, cfg)
            total, l_ctc, l_s2s, l_ce = batch_loss(model, batch, weights)
            model.zero_grad()
            total.backward()
            opt.step(lr)
            state.losses.append(total.item())
            emit(f"step\t{state.step}\t{lr:.6e}\t{total.item():.6f}\t{l_ctc.item():.6f}\t"
                 f"{l_s2s.item():.6f}\t{'-' if l_ce is None else f'{l_ce.item():.6f}'}")
            if cfg.max_steps is not None and state.step >= cfg.max_steps:
                break
        last = cfg.max_steps is not None and state.step >= cfg.max_steps
        if epoch % cfg.valid_every == 0 or epoch == cfg.epochs or last:
            wer = validation_wer(model, vocab, valid, cfg.valid_beam)
            model.train()
            state.history.append((epoch, state.step, wer))
            if wer < state.best_wer:
                state.best_wer, state.best_step = wer, state.step
                state.best_state = model.state_dict()
                if on_improve is not None:
                    on_improve(state)
            emit(f"epoch\t{epoch}\t{state.step}\t{wer:.4f}\t{state.best_wer:.4f}\t{state.skipped}")
            if cfg.stop_wer is not None and wer <= cfg.stop_wer:
                break
        if last:
            break

    if state.best_state is not None:
        model.load_state_dict(state.best_state)
    model.eval()
    return state
