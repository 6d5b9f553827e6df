import numpy as np
import pytest

from mlalt.decoder import (DecodeConfig, beam_search, default_max_len, greedy_decode, greedy_decode_batch,
                           inference, rescore, transcribe)
from mlalt.features import AudioClip
from mlalt.model import ALTModel
from mlalt.vocab import BOS_ID, EOS_ID

from conftest import micro_config, tiny_model_config
from oracles import best_terminated_sequence


def toy_model(seed, mode="none"):
    # sharper distributions than the default init so the search has something to do
    model = ALTModel(micro_config(mode, vocab_size=4), seed=seed)
    model.s2s_fc.weight.data *= 8
    return model


def step_fn(model, mel, lang=None):
    with inference(model):
        memory, lengths, _, _ = model.prepare_memory(mel[None], None if lang is None else [lang])

    def fn(prefix):
        with inference(model):
            return model.next_token_log_probs(memory, lengths, [[BOS_ID, *prefix]])[0]
    return fn


@pytest.mark.parametrize("seed", range(8))
def test_exhaustive_beam_equals_enumeration(seed):
    model = toy_model(seed)
    mel = np.random.default_rng(seed).standard_normal((20, 80))
    hyp = beam_search(model, mel, beam_size=4 ** 4, max_len=4)
    tokens, score = best_terminated_sequence(step_fn(model, mel), 4, EOS_ID, 4)
    assert hyp.finished and hyp.tokens == tokens
    assert hyp.score == pytest.approx(score, abs=1e-9)


@pytest.mark.parametrize("seed", range(8))
def test_beam_one_is_greedy(seed):
    model = toy_model(seed, "dec")
    mel = np.random.default_rng(seed).standard_normal((20, 80))
    b, g = beam_search(model, mel, lang=1, beam_size=1), greedy_decode(model, mel, lang=1)
    assert b.tokens == g.tokens and b.score == pytest.approx(g.score, abs=1e-12)


@pytest.mark.parametrize("beam", [1, 3, 10])
def test_score_matches_rescoring(beam):
    model = toy_model(5, "self")
    mel = np.random.default_rng(0).standard_normal((30, 80))
    hyp = beam_search(model, mel, beam_size=beam)
    assert rescore(model, mel, hyp.tokens) == pytest.approx(hyp.score, abs=1e-6)
    assert EOS_ID not in hyp.tokens[:-1]


def test_max_len_default_and_validation():
    model = toy_model(0)
    mel = np.zeros((40, 80))
    hyp = beam_search(model, mel, beam_size=2)
    assert len(hyp.tokens) <= default_max_len(model.output_length(40))
    with pytest.raises(ValueError):
        beam_search(model, mel, beam_size=0)


def test_batched_greedy_matches_single():
    model = toy_model(2)
    rng = np.random.default_rng(1)
    mels = [rng.standard_normal((n, 80)) for n in (18, 30, 25)]
    batched = greedy_decode_batch(model, mels)
    assert batched == [greedy_decode(model, m).tokens for m in mels]


def test_transcribe_silence_is_deterministic(tiny_corpus):
    utts, vocab, langs, _ = tiny_corpus
    model = ALTModel(tiny_model_config(len(vocab), 2, "enc"))
    clip = AudioClip(np.zeros(8000), 16000)
    cfg = DecodeConfig(beam_size=3, lang=0)
    a, b = transcribe(model, vocab, clip, cfg), transcribe(model, vocab, clip, cfg)
    assert isinstance(a, str) and a == b
    assert model.training  # inference context restores the mode
