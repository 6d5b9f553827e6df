"""Autoregressive beam search over the attention decoder.

Hypotheses are ranked by raw cumulative log-probability (no length
normalization, no CTC rescoring).  At equal scores the lexicographically
smaller token sequence wins.  Finished hypotheses stay in the beam and compete
with active ones; the search stops once no active hypothesis can beat the best
finished one, or after ``max_len`` tokens.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .features import AudioClip, compute_mel, resample
from .model import ALTModel, pad_batch
from .tensor import no_grad
from .vocab import BOS_ID, EOS_ID, Vocabulary, decode

VALID_BEAM = 10
TEST_BEAM = 66


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple       # generated ids after <bos>; ends with <eos> when finished
    score: float
    finished: bool = False


@dataclass
class DecodeConfig:
    beam_size: int = VALID_BEAM
    max_len: Optional[int] = None     # None: 2 + T'/2
    lang: Optional[int] = None


@contextmanager
def inference(model: ALTModel):
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            yield model
    finally:
        model.train(was_training)


def default_max_len(enc_frames: int) -> int:
    return 2 + enc_frames // 2


def _prepare(model: ALTModel, mel, lang):
    mel = np.asarray(mel, dtype=np.float64)
    memory, lengths, _, _ = model.prepare_memory(mel[None], None if lang is None else [lang])
    return memory, lengths


def beam_search(model: ALTModel, mel, lang: Optional[int] = None, beam_size: int = VALID_BEAM,
                max_len: Optional[int] = None, eos_id: int = EOS_ID, bos_id: int = BOS_ID) -> Hypothesis:
    if beam_size < 1:
        raise ValueError(f"beam_size must be >= 1, got {beam_size}")
    with inference(model):
        memory, lengths = _prepare(model, mel, lang)
        if max_len is None:
            max_len = default_max_len(int(lengths[0]))
        if max_len < 1:
            raise ValueError(f"max_len must be >= 1, got {max_len}")
        active = [Hypothesis((), 0.0)]
        finished: list[Hypothesis] = []
        for _ in range(max_len):
            prefixes = np.array([(bos_id,) + h.tokens for h in active], dtype=np.int64)
            lp = model.next_token_log_probs(memory, lengths, prefixes)
            pool = [(f.score, f.tokens, True) for f in finished]
            for a, hyp in enumerate(active):
                scores = hyp.score + lp[a]
                for k in range(lp.shape[1]):
                    pool.append((float(scores[k]), hyp.tokens + (k,), k == eos_id))
            pool.sort(key=lambda c: (-c[0], c[1]))
            top = pool[:beam_size]
            finished = [Hypothesis(t, s, True) for s, t, f in top if f]
            active = [Hypothesis(t, s, False) for s, t, f in top if not f]
            if not active or (finished and finished[0].score >= active[0].score):
                break
    return finished[0] if finished else active[0]


def greedy_decode(model: ALTModel, mel, lang: Optional[int] = None, max_len: Optional[int] = None,
                  eos_id: int = EOS_ID, bos_id: int = BOS_ID) -> Hypothesis:
    """Argmax decoding, one token at a time."""
    with inference(model):
        memory, lengths = _prepare(model, mel, lang)
        if max_len is None:
            max_len = default_max_len(int(lengths[0]))
        tokens: list = []
        score = 0.0
        for _ in range(max_len):
            lp = model.next_token_log_probs(memory, lengths, np.array([[bos_id] + tokens]))[0]
            k = int(np.argmax(lp))
            tokens.append(k)
            score += float(lp[k])
            if k == eos_id:
                return Hypothesis(tuple(tokens), score, True)
    return Hypothesis(tuple(tokens), score, False)


def rescore(model: ALTModel, mel, tokens, lang: Optional[int] = None, bos_id: int = BOS_ID) -> float:
    """Teacher-forced log-probability of ``tokens`` (as produced after <bos>)."""
    tokens = list(tokens)
    if not tokens:
        return 0.0
    with inference(model):
        memory, lengths = _prepare(model, mel, lang)
        y_bos = np.array([[bos_id] + tokens[:-1]], dtype=np.int64)
        lp = model.s2s_head(model.decode_teacher_forced(memory, lengths, y_bos)).data[0]
    return float(lp[np.arange(len(tokens)), tokens].sum())


def decode_mel(model: ALTModel, vocab: Vocabulary, mel, config: DecodeConfig = DecodeConfig()) -> str:
    hyp = beam_search(model, mel, config.lang, config.beam_size, config.max_len)
    return decode(hyp.tokens, vocab)


def transcribe(model: ALTModel, vocab: Vocabulary, audio: AudioClip,
               config: DecodeConfig = DecodeConfig()) -> str:
    mel = compute_mel(resample(audio)).frames
    return decode_mel(model, vocab, mel, config)


def greedy_decode_batch(model: ALTModel, mels, langs=None, max_len: Optional[int] = None,
                        eos_id: int = EOS_ID, bos_id: int = BOS_ID) -> list:
    """Greedy decoding of many utterances at once; returns token tuples (with <eos> if emitted)."""
    if not len(mels):
        return []
    mel, mel_lengths = pad_batch([np.asarray(m, dtype=np.float64) for m in mels])
    with inference(model):
        memory, lengths, _, _ = model.prepare_memory(mel, langs, mel_lengths)
        limits = [default_max_len(int(n)) if max_len is None else max_len for n in lengths]
        n = len(mels)
        tokens = np.full((n, 1), bos_id, dtype=np.int64)
        done = np.zeros(n, dtype=bool)
        out: list = [[] for _ in range(n)]
        for _ in range(max(limits)):
            o = model.decode_teacher_forced(memory, lengths, tokens)
            nxt = np.argmax(model.s2s_head(o).data[:, -1, :], axis=-1)
            for i in range(n):
                if not done[i]:
                    out[i].append(int(nxt[i]))
                    if nxt[i] == eos_id or len(out[i]) >= limits[i]:
                        done[i] = True
            if done.all():
                break
            tokens = np.concatenate([tokens, nxt[:, None]], axis=1)
    return [tuple(t) for t in out]
