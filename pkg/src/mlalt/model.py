"""Hybrid CTC/attention transformer with language conditioning.

Pipeline per utterance::

    feat  = CNNBlock(mel)                      3 conv layers + linear projection
    h     = TfmEnc(feat [+ language embedding])
    o     = TfmDec(h [+ conditioning vector], y_bos)
    p_ctc = log_softmax(FC_ctc(h)),  p_s2s = log_softmax(FC_s2s(o))
    p_l   = softmax(FC_lang(mean_t h))          self-conditioned mode only

Conditioning vectors are concatenated to every time step and mapped back to
``d_model`` by a bias-free linear layer: the encoder path acts on ``feat``, the
decoder path on the encoder output that the decoder attends to.  The
self-conditioned mode feeds ``p_l`` through a bias-free ``M -> lang_emb_dim``
map and uses the result as the decoder conditioning vector.

All batched entry points take padded ``B x T x 80`` mels plus true lengths;
padded frames never influence real positions.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError, InputError
from .nn import (Conv2d, DecoderLayer, Embedding, EncoderLayer, LayerNorm, Linear, Module,
                 sinusoidal_positions)
from .tensor import Tensor


class ConditioningMode(str, Enum):
    NONE = "none"
    ENC = "enc"
    DEC = "dec"
    ENCDEC = "encdec"
    SELF = "self"

    @classmethod
    def parse(cls, value) -> "ConditioningMode":
        if isinstance(value, cls):
            return value
        if value is None:
            return cls.NONE
        key = str(value).lower().replace("-", "").replace("_", "")
        if key.endswith("cond"):
            key = key[:-4]
        aliases = {"": "none", "no": "none", "multilingual": "none", "selfcondition": "self"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ConfigError(f"unknown conditioning mode {value!r}") from None

    @property
    def encoder_conditioned(self) -> bool:
        return self in (ConditioningMode.ENC, ConditioningMode.ENCDEC)

    @property
    def decoder_conditioned(self) -> bool:
        return self in (ConditioningMode.DEC, ConditioningMode.ENCDEC, ConditioningMode.SELF)

    @property
    def needs_language(self) -> bool:
        """True when a language id must be supplied as model input."""
        return self in (ConditioningMode.ENC, ConditioningMode.DEC, ConditioningMode.ENCDEC)


@dataclass
class ModelConfig:
    vocab_size: int
    n_languages: int = 6
    d_model: int = 512
    n_heads: int = 4
    ff_dim: int = 2048
    enc_layers: int = 12
    dec_layers: int = 6
    cnn_channels: int = 64
    cnn_specs: tuple = ((5, 2), (5, 2), (1, 1))
    lang_emb_dim: int = 5
    conditioning_mode: ConditioningMode = ConditioningMode.NONE
    dropout: float = 0.1
    n_mels: int = 80

    def __post_init__(self):
        self.conditioning_mode = ConditioningMode.parse(self.conditioning_mode)
        self.cnn_specs = tuple(tuple(int(v) for v in s) for s in self.cnn_specs)
        for name in ("vocab_size", "n_languages", "d_model", "n_heads", "ff_dim",
                     "enc_layers", "dec_layers", "cnn_channels", "n_mels"):
            if int(getattr(self, name)) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.conditioning_mode is not ConditioningMode.NONE and self.lang_emb_dim < 1:
            raise ConfigError("lang_emb_dim must be >= 1 when conditioning is active")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if not self.cnn_specs or any(k < 1 or s < 1 for k, s in self.cnn_specs):
            raise ConfigError(f"invalid cnn_specs {self.cnn_specs}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conditioning_mode"] = self.conditioning_mode.value
        d["cnn_specs"] = [list(s) for s in self.cnn_specs]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def cnn_output_length(n: int, specs: Sequence[tuple]) -> int:
    for k, s in specs:
        n = T.conv_output_size(n, k, s, k // 2)
    return n


@dataclass
class ModelOutput:
    ctc_log_probs: Tensor            # B x T' x N
    enc_lengths: np.ndarray          # B
    s2s_log_probs: Tensor            # B x L x N
    lang_log_probs: Optional[Tensor] = None   # B x M

    @property
    def lang_probs(self) -> Optional[np.ndarray]:
        return None if self.lang_log_probs is None else np.exp(self.lang_log_probs.data)


def _time_mask(lengths: np.ndarray, n: int) -> np.ndarray:
    """Boolean B x n, True on padding."""
    return np.arange(n)[None, :] >= np.asarray(lengths)[:, None]


def pad_batch(seqs: Sequence[np.ndarray], pad_value: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    first = np.asarray(seqs[0])
    out = np.full((len(seqs), int(lengths.max())) + first.shape[1:], pad_value, dtype=first.dtype)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out, lengths


class ALTModel(Module):
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = cfg = config
        rng = np.random.default_rng(seed)
        self.rng = np.random.default_rng([seed, 1])  # dropout stream
        mode = cfg.conditioning_mode

        convs, c_in, f = [], 1, cfg.n_mels
        for k, s in cfg.cnn_specs:
            convs.append(Conv2d(c_in, cfg.cnn_channels, k, s, k // 2, rng))
            c_in = cfg.cnn_channels
            f = T.conv_output_size(f, k, s, k // 2)
        self.convs = convs
        self.feat_proj = Linear(cfg.cnn_channels * f, cfg.d_model, rng)

        if mode.needs_language:
            self.lang_emb = Embedding(cfg.n_languages, cfg.lang_emb_dim, rng)
        if mode.encoder_conditioned:
            self.enc_cond_proj = Linear(cfg.d_model + cfg.lang_emb_dim, cfg.d_model, rng, bias=False)
        if mode.decoder_conditioned:
            self.dec_cond_proj = Linear(cfg.d_model + cfg.lang_emb_dim, cfg.d_model, rng, bias=False)
        if mode is ConditioningMode.SELF:
            self.lang_fc = Linear(cfg.d_model, cfg.n_languages, rng)
            self.selfcond_map = Linear(cfg.n_languages, cfg.lang_emb_dim, rng, bias=False)

        self.encoder = [EncoderLayer(cfg.d_model, cfg.n_heads, cfg.ff_dim, cfg.dropout, rng)
                        for _ in range(cfg.enc_layers)]
        self.enc_norm = LayerNorm(cfg.d_model)
        self.tok_emb = Embedding(cfg.vocab_size, cfg.d_model, rng)
        self.decoder = [DecoderLayer(cfg.d_model, cfg.n_heads, cfg.ff_dim, cfg.dropout, rng)
                        for _ in range(cfg.dec_layers)]
        self.dec_norm = LayerNorm(cfg.d_model)
        self.ctc_fc = Linear(cfg.d_model, cfg.vocab_size, rng)
        self.s2s_fc = Linear(cfg.d_model, cfg.vocab_size, rng)
        self._pe = sinusoidal_positions(64, cfg.d_model)

    # -- helpers -----------------------------------------------------------------------------------
    @property
    def mode(self) -> ConditioningMode:
        return self.config.conditioning_mode

    def output_length(self, n_frames: int) -> int:
        return cnn_output_length(n_frames, self.config.cnn_specs)

    def _positions(self, n: int) -> np.ndarray:
        if n > self._pe.shape[0]:
            self._pe = sinusoidal_positions(max(n, 2 * self._pe.shape[0]), self.config.d_model)
        return self._pe[:n]

    def _add_positions(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        return x + np.broadcast_to(self._positions(n), (b, n, d)).copy()

    def _dropout(self, x: Tensor) -> Tensor:
        return T.dropout(x, self.config.dropout, self.rng, self.training)

    def _lang_ids(self, lang, batch: int) -> Optional[np.ndarray]:
        if self.mode.needs_language:
            if lang is None:
                raise ContractError(f"conditioning mode {self.mode.value!r} requires a language id")
            ids = np.broadcast_to(np.asarray(lang, dtype=np.int64), (batch,)).copy()
            if ids.min() < 0 or ids.max() >= self.config.n_languages:
                raise IndexError(f"language id {ids.tolist()} out of range [0, {self.config.n_languages})")
            return ids
        if lang is not None:
            raise ContractError(f"conditioning mode {self.mode.value!r} takes no language id")
        return None

    @staticmethod
    def _concat_cond(x: Tensor, cond: Tensor, proj: Linear) -> Tensor:
        b, n, _ = x.shape
        e = cond.shape[-1]
        tiled = T.expand(T.reshape(cond, (b, 1, e)), (b, n, e))
        return proj(T.concat([x, tiled], axis=-1))

    # -- front end ---------------------------------------------------------------------------------
    def cnn_forward(self, mel, lengths=None) -> tuple[Tensor, np.ndarray]:
        mel = np.asarray(mel.data if isinstance(mel, Tensor) else mel, dtype=np.float64)
        if mel.ndim == 2:
            mel = mel[None]
        if mel.ndim != 3 or mel.shape[2] != self.config.n_mels:
            raise DimensionError(f"expected B x T x {self.config.n_mels} mel, got {mel.shape}")
        b, n, _ = mel.shape
        lengths = np.full(b, n, dtype=np.int64) if lengths is None else np.asarray(lengths, dtype=np.int64)
        if n < 1 or lengths.min() < 1:
            raise InputError("utterance too short: no mel frames")
        x = Tensor(np.where(_time_mask(lengths, n)[:, :, None], 0.0, mel)[:, None])
        for conv in self.convs:
            x = T.relu(conv(x))
            lengths = np.array([conv.output_size(int(v)) for v in lengths], dtype=np.int64)
            if lengths.min() < 1:
                raise InputError("utterance too short for the convolutional front end")
            pad = _time_mask(lengths, x.shape[2])
            if pad.any():
                x = T.masked_fill(x, pad[:, None, :, None], 0.0)
        _, c, t_out, f = x.shape
        x = T.reshape(T.transpose(x, (0, 2, 1, 3)), (b, t_out, c * f))
        return self.feat_proj(x), lengths

    # -- encoder -----------------------------------------------------------------------------------
    def encode(self, feat: Tensor, lengths: np.ndarray, lang=None) -> Tensor:
        b, n, _ = feat.shape
        # decoder-only conditioning leaves the encoder language-free
        ids = self._lang_ids(lang, b) if self.mode.encoder_conditioned or lang is not None else None
        x = feat
        if self.mode.encoder_conditioned:
            x = self._concat_cond(x, self.lang_emb(ids), self.enc_cond_proj)
        x = self._dropout(self._add_positions(x))
        mask = _time_mask(lengths, n)[:, None, None, :]
        for layer in self.encoder:
            x = layer(x, mask, self.rng)
        return self.enc_norm(x)

    # -- conditioning ------------------------------------------------------------------------------
    def language_head(self, h: Tensor, lengths: np.ndarray) -> Tensor:
        """Log-probabilities over languages from time-averaged encoder states (B x M)."""
        b, n, d = h.shape
        weights = (~_time_mask(lengths, n)).astype(np.float64) / np.asarray(lengths)[:, None]
        pooled = T.sum(h * np.broadcast_to(weights[:, :, None], (b, n, d)).copy(), axis=1)
        return T.log_softmax(self.lang_fc(pooled), axis=-1)

    def self_condition_vector(self, p_l: Tensor) -> Tensor:
        return self.selfcond_map(p_l)

    def decoder_condition(self, lang=None, p_l: Optional[Tensor] = None, batch: int = 1) -> Optional[Tensor]:
        if self.mode is ConditioningMode.SELF:
            if p_l is None:
                raise ContractError("self-conditioned decoding needs p_l")
            return self.self_condition_vector(p_l)
        if self.mode.decoder_conditioned:
            return self.lang_emb(self._lang_ids(lang, batch))
        return None

    def condition_memory(self, h: Tensor, cond: Optional[Tensor]) -> Tensor:
        if not self.mode.decoder_conditioned:
            if cond is not None:
                raise ContractError(f"conditioning mode {self.mode.value!r} takes no decoder conditioning")
            return h
        if cond is None:
            raise ContractError("decoder conditioning vector missing")
        return self._concat_cond(h, cond, self.dec_cond_proj)

    # -- decoder -----------------------------------------------------------------------------------
    def decode_teacher_forced(self, memory: Tensor, mem_lengths: np.ndarray, y_bos) -> Tensor:
        """Decoder states for token prefixes ``y_bos`` (B x L ids) attending to ``memory``."""
        y_bos = np.asarray(y_bos, dtype=np.int64)
        if y_bos.ndim == 1:
            y_bos = y_bos[None]
        if y_bos.shape[1] == 0:
            raise ContractError("decoder input y_bos is empty")
        b, n = y_bos.shape
        if memory.shape[0] != b:
            raise DimensionError(f"memory batch {memory.shape[0]} vs {b} token sequences")
        x = self.tok_emb(y_bos) * math.sqrt(self.config.d_model)
        x = self._dropout(self._add_positions(x))
        causal = np.triu(np.ones((n, n), dtype=bool), k=1)[None, None]
        mem_mask = _time_mask(mem_lengths, memory.shape[1])[:, None, None, :]
        for layer in self.decoder:
            x = layer(x, memory, causal, mem_mask, self.rng)
        return self.dec_norm(x)

    # -- output heads ------------------------------------------------------------------------------
    def ctc_head(self, h: Tensor) -> Tensor:
        return T.log_softmax(self.ctc_fc(h), axis=-1)

    def s2s_head(self, o: Tensor) -> Tensor:
        return T.log_softmax(self.s2s_fc(o), axis=-1)

    # -- full passes -------------------------------------------------------------------------------
    def forward_train(self, mel, y_bos, lang=None, mel_lengths=None) -> ModelOutput:
        """Teacher-forced pass; ``mel`` is ``T x 80`` or padded ``B x T x 80``."""
        feat, lengths = self.cnn_forward(mel, mel_lengths)
        h = self.encode(feat, lengths, lang)
        lang_lp = None
        p_l = None
        if self.mode is ConditioningMode.SELF:
            lang_lp = self.language_head(h, lengths)
            p_l = T.exp(lang_lp)
        cond = self.decoder_condition(lang, p_l, batch=h.shape[0])
        memory = self.condition_memory(h, cond)
        o = self.decode_teacher_forced(memory, lengths, y_bos)
        return ModelOutput(self.ctc_head(h), lengths, self.s2s_head(o), lang_lp)

    def prepare_memory(self, mel, lang=None, mel_lengths=None):
        """Encoder pass for inference: returns (memory, lengths, h, lang_log_probs)."""
        feat, lengths = self.cnn_forward(mel, mel_lengths)
        h = self.encode(feat, lengths, lang)
        lang_lp = None
        p_l = None
        if self.mode is ConditioningMode.SELF:
            lang_lp = self.language_head(h, lengths)
            p_l = T.exp(lang_lp)
        cond = self.decoder_condition(lang, p_l, batch=h.shape[0])
        return self.condition_memory(h, cond), lengths, h, lang_lp

    def next_token_log_probs(self, memory: Tensor, mem_lengths: np.ndarray, prefixes) -> np.ndarray:
        """Log-probabilities of the next token after each prefix (A x N).

        ``memory`` holds a single utterance (batch 1) and is shared by all prefixes.
        """
        prefixes = np.asarray(prefixes, dtype=np.int64)
        a = prefixes.shape[0]
        mem = Tensor(np.broadcast_to(memory.data, (a,) + memory.shape[1:]).copy())
        lengths = np.broadcast_to(np.asarray(mem_lengths)[:1], (a,))
        o = self.decode_teacher_forced(mem, lengths, prefixes)
        return self.s2s_head(o).data[:, -1, :]

    # -- parameter (de)serialization helpers -------------------------------------------------------
    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise ConfigError(f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise DimensionError(f"{name}: checkpoint shape {arr.shape} vs model {p.shape}")
            p.data = arr.copy()
