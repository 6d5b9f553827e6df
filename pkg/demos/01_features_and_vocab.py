"""Audio to log-mel frames, and lyrics to token ids, on a synthetic two-language set."""

import numpy as np

from mlalt import AudioClip, build_vocab, compute_mel, decode, encode, resample
from mlalt.vocab import LanguageSet

# a 44.1 kHz chirp is resampled to 16 kHz before feature extraction
rate = 44_100
t = np.arange(int(1.5 * rate)) / rate
clip = AudioClip(np.sin(2 * np.pi * (200 + 400 * t) * t), rate)
mel = compute_mel(resample(clip))
print(f"{clip.duration:.2f}s at {rate} Hz -> {mel.num_frames} frames x {mel.frames.shape[1]} mel bands "
      f"(hop {mel.hop_seconds * 1000:.0f} ms)")
print("loudest band per 20th frame:", mel.frames.argmax(axis=1)[::20])

langs = LanguageSet.from_pairs([("en", "abcdefghijklmnopqrstuvwxyz'"), ("de", "abcdefghijklmnopqrstuvwxyzäöüß")])
vocab = build_vocab(langs)
print(f"\nvocabulary: {len(vocab)} tokens, first ten {list(vocab.tokens[:10])}")
for text in ["Don't  Stop", "Grüße aus Köln"]:
    ids = encode(text, vocab)
    print(f"{text!r:>20} -> {list(ids.ids)} -> {decode(ids.ids, vocab)!r}")
