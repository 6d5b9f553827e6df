import numpy as np
import pytest

from mlalt.model import ModelConfig


def micro_config(mode="none", **kw) -> ModelConfig:
    base = dict(vocab_size=7, n_languages=2, d_model=8, n_heads=2, ff_dim=16, enc_layers=1, dec_layers=1,
                cnn_channels=2, cnn_specs=((3, 2), (3, 2)), lang_emb_dim=3, conditioning_mode=mode,
                dropout=0.0, n_mels=80)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_model_config(vocab_size, n_languages, mode="none", **kw) -> ModelConfig:
    base = dict(vocab_size=vocab_size, n_languages=n_languages, d_model=16, n_heads=2, ff_dim=32,
                enc_layers=1, dec_layers=1, cnn_channels=4, conditioning_mode=mode, dropout=0.1)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """8 separable synthetic utterances: ``(utterances, vocab, languages, corpus_dir)``."""
    from mlalt.datapipe import generate_synthetic_corpus, load_manifest, prepare_utterances, separable_spec
    from mlalt.vocab import build_vocab, load_charset_config

    out = tmp_path_factory.mktemp("corpus")
    generate_synthetic_corpus(separable_spec(8), out, seed=0)
    langs = load_charset_config(out / "charsets.txt")
    vocab = build_vocab(langs)
    entries, _ = load_manifest(out / "manifest.jsonl")
    utts, _ = prepare_utterances(entries, vocab, langs, out)
    return utts, vocab, langs, out
