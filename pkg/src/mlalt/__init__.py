"""Multilingual lyrics transcription: hybrid CTC/attention transformers with language conditioning."""

__version__ = "0.1.0"

from .errors import (ALTError, ConfigError, ContractError, DimensionError, EmptyTargetError,
                     InfeasibleAlignmentError, InputError, NonFiniteError, UndefinedWERError)
from .tensor import Tensor, no_grad
from .features import AudioClip, MelSpectrogram, compute_mel, load_audio, resample
from .vocab import LanguageSet, Vocabulary, build_vocab, collapse_ctc, decode, encode, normalize_text
from .losses import LossWeights, combined_loss, ctc_loss, kl_s2s_loss, lang_ce_loss
from .model import ALTModel, ConditioningMode, ModelConfig
from .trainer import Adam, TrainConfig, noam_lr, train
from .decoder import DecodeConfig, beam_search, greedy_decode, transcribe
from .evaluation import EvalReport, evaluate_corpus, score_pairs, wer
from .checkpoint import load_checkpoint, save_checkpoint
