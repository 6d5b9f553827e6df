"""Generate a small synthetic sung corpus, train an unconditioned model, decode it."""

import tempfile
from pathlib import Path

from mlalt import ALTModel, ModelConfig, TrainConfig, beam_search, build_vocab, decode, evaluate_corpus, train
from mlalt.datapipe import generate_synthetic_corpus, prepare_utterances, separable_spec
from mlalt.vocab import load_charset_config

root = Path(tempfile.mkdtemp())
entries = generate_synthetic_corpus(separable_spec(24), root, seed=0)
langs = load_charset_config(root / "charsets.txt")
vocab = build_vocab(langs)
utts, _ = prepare_utterances(entries, vocab, langs, root)
print(f"{len(utts)} utterances in {langs.languages}, vocabulary of {len(vocab)}")

cfg = ModelConfig(vocab_size=len(vocab), n_languages=langs.num_languages, d_model=64, n_heads=4, ff_dim=256,
                  enc_layers=2, dec_layers=2, cnn_channels=8)
model = ALTModel(cfg, seed=0)
state = train(model, utts, vocab,
              TrainConfig(lr_base=0.002, warmup_steps=200, epochs=10_000, max_steps=800, valid_every=10,
                          stop_wer=0.0),
              log=lambda line: print(line) if line.startswith("epoch") else None)
print(f"best greedy WER {state.best_wer:.2f}% at step {state.best_step}")

for u in utts[:4]:
    hyp = beam_search(model, u.mel, beam_size=10)
    print(f"  [{u.entry.lang}] ref {u.entry.text!r:28} hyp {decode(hyp.tokens, vocab)!r}")
print(evaluate_corpus(model, vocab, utts, list(langs.languages)).to_text())
