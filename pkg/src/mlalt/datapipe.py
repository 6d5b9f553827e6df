"""Manifests, utterance filtering, batching and a synthetic tone corpus.

Manifest format (version 1)
---------------------------
UTF-8 JSON Lines.  An optional first line ``{"manifest_version": 1}`` is a
header.  Every other non-blank line is one utterance object::

    {"id": "utt0001", "audio": "audio/utt0001.wav", "text": "la la",
     "lang": "fr", "duration": 2.31, "split": "train"}

``audio`` is resolved relative to the manifest's directory when not absolute.
``duration`` (seconds) may be missing or null; such lines load but are
rejected by :func:`filter_utterances`.  ``split`` defaults to ``train``.
"""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError, EmptyTargetError
from .features import SAMPLE_RATE, AudioClip, mel_center_frequencies, mel_from_file, write_raw_f32, write_wav
from .losses import ctc_min_frames
from .vocab import BLANK_ID, BOS_ID, EOS_ID, LanguageSet, TokenSequence, Vocabulary, encode, normalize_text

MANIFEST_VERSION = 1
MAX_DURATION = 30.0
MAX_CHAR_RATE = 37.5
SPLITS = ("train", "valid", "test")


@dataclass
class ManifestEntry:
    utt_id: str
    audio: str
    text: str
    lang: str
    duration: Optional[float]
    split: str = "train"

    def to_json(self) -> str:
        return json.dumps({"id": self.utt_id, "audio": self.audio, "text": self.text, "lang": self.lang,
                           "duration": self.duration, "split": self.split}, ensure_ascii=False)

    def audio_path(self, root) -> Path:
        p = Path(self.audio)
        return p if p.is_absolute() else Path(root) / p


def _parse_entry(obj: dict, languages: Optional[Sequence[str]]) -> ManifestEntry:
    if not isinstance(obj, dict):
        raise ValueError("line is not a JSON object")
    for key in ("id", "audio", "text", "lang"):
        if not isinstance(obj.get(key), str):
            raise ValueError(f"field {key!r} missing or not a string")
    dur = obj.get("duration")
    if dur is not None:
        if isinstance(dur, bool) or not isinstance(dur, (int, float)):
            raise ValueError("field 'duration' is not a number")
        dur = float(dur)
    split = obj.get("split", "train")
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    if languages is not None and obj["lang"] not in languages:
        raise ValueError(f"language {obj['lang']!r} not configured")
    return ManifestEntry(obj["id"], obj["audio"], obj["text"], obj["lang"], dur, split)


def load_manifest(path, languages: Optional[Sequence[str]] = None):
    """Parse a manifest; returns ``(entries, errors)`` with ``errors`` as ``(line_no, message)``.

    Raises ``OSError`` when unreadable and ``ConfigError`` when no valid entry remains.
    """
    entries, errors = [], []
    seen = set()
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            if isinstance(obj, dict) and "manifest_version" in obj and "id" not in obj:
                if obj["manifest_version"] != MANIFEST_VERSION:
                    raise ValueError(f"unsupported manifest version {obj['manifest_version']}")
                continue
            entry = _parse_entry(obj, languages)
            if entry.utt_id in seen:
                raise ValueError(f"duplicate utterance id {entry.utt_id!r}")
        except ValueError as exc:
            errors.append((lineno, str(exc)))
            continue
        seen.add(entry.utt_id)
        entries.append(entry)
    if not entries:
        raise ConfigError(f"{path}: no valid manifest entries")
    return entries, errors


def write_manifest(path, entries: Iterable[ManifestEntry]) -> None:
    lines = [json.dumps({"manifest_version": MANIFEST_VERSION})]
    lines += [e.to_json() for e in entries]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- filtering ---------------------------------------------------------------------------------

def char_rate(entry: ManifestEntry) -> float:
    """Normalized lyric characters (spaces included) per second."""
    return len(normalize_text(entry.text)) / entry.duration


def rejection_reason(entry: ManifestEntry, max_duration: float = MAX_DURATION,
                     max_char_rate: float = MAX_CHAR_RATE) -> Optional[str]:
    dur = entry.duration
    if dur is None or not math.isfinite(dur) or dur <= 0:
        return "bad_duration"
    if dur > max_duration:
        return "too_long"
    if not normalize_text(entry.text):
        return "empty_text"
    if char_rate(entry) > max_char_rate:
        return "char_rate"
    return None


def filter_utterances(entries: Sequence[ManifestEntry], max_duration: float = MAX_DURATION,
                      max_char_rate: float = MAX_CHAR_RATE):
    """Split into ``(kept, rejected)`` where ``rejected`` holds ``(entry, reason)`` pairs."""
    kept, rejected = [], []
    for e in entries:
        reason = rejection_reason(e, max_duration, max_char_rate)
        if reason is None:
            kept.append(e)
        else:
            rejected.append((e, reason))
    return kept, rejected


def rejection_counts(rejected) -> dict:
    return dict(sorted(Counter(reason for _, reason in rejected).items()))


def write_rejections(path, rejected) -> None:
    """Tab-separated ``id<TAB>reason`` lines."""
    Path(path).write_text("".join(f"{e.utt_id}\t{r}\n" for e, r in rejected), encoding="utf-8")


def language_counts(entries: Iterable[ManifestEntry]) -> dict:
    """``{lang: {split: count}}`` -- the per-language utterance statistics table."""
    table: dict = defaultdict(lambda: {s: 0 for s in SPLITS})
    for e in entries:
        table[e.lang][e.split] += 1
    return {k: table[k] for k in sorted(table)}


# -- prepared utterances and batches -----------------------------------------------------------------

@dataclass
class Utterance:
    entry: ManifestEntry
    mel: np.ndarray          # T x 80
    target: TokenSequence
    lang_index: int


def prepare_utterances(entries: Sequence[ManifestEntry], vocab: Vocabulary, languages: LanguageSet,
                       root, mel_fn: Callable = mel_from_file):
    """Compute features and targets; returns ``(utterances, skipped)``."""
    out, skipped = [], []
    cache: dict = {}
    for e in entries:
        try:
            target = encode(e.text, vocab)
        except EmptyTargetError:
            skipped.append((e, "empty_text"))
            continue
        path = e.audio_path(root)
        if path not in cache:
            cache[path] = mel_fn(path).frames
        out.append(Utterance(e, cache[path], target, languages.index(e.lang)))
    return out, skipped


@dataclass
class Batch:
    ids: list
    mel: np.ndarray            # B x T x 80, zero padded
    mel_lengths: np.ndarray    # B
    targets: list              # y per item
    y_bos: np.ndarray          # B x (Lmax + 1), padded with blank
    y_eos: list                # y + <eos> per item
    langs: np.ndarray          # B
    frame_mask: np.ndarray     # B x T, True on real frames
    token_mask: np.ndarray     # B x (Lmax + 1), True on real decoder steps

    def __len__(self) -> int:
        return len(self.ids)


def collate(utts: Sequence[Utterance]) -> Batch:
    lengths = np.array([u.mel.shape[0] for u in utts], dtype=np.int64)
    mel = np.zeros((len(utts), int(lengths.max()), utts[0].mel.shape[1]))
    for i, u in enumerate(utts):
        mel[i, : lengths[i]] = u.mel
    tlen = np.array([len(u.target) + 1 for u in utts], dtype=np.int64)
    y_bos = np.full((len(utts), int(tlen.max())), BLANK_ID, dtype=np.int64)
    for i, u in enumerate(utts):
        y_bos[i, : tlen[i]] = u.target.with_bos
    return Batch(
        ids=[u.entry.utt_id for u in utts],
        mel=mel,
        mel_lengths=lengths,
        targets=[u.target.ids for u in utts],
        y_bos=y_bos,
        y_eos=[u.target.with_eos for u in utts],
        langs=np.array([u.lang_index for u in utts], dtype=np.int64),
        frame_mask=np.arange(mel.shape[1])[None] < lengths[:, None],
        token_mask=np.arange(y_bos.shape[1])[None] < tlen[:, None],
    )


def make_batches(utts: Sequence[Utterance], batch_size: int, seed: int = 0,
                 output_length: Optional[Callable[[int], int]] = None, shuffle: bool = True):
    """Length-bucketed batches; returns ``(batches, skipped)``.

    Utterances are sorted by frame count (ties by id), cut into consecutive
    groups of ``batch_size``, and the group order is permuted by ``seed``.
    With ``output_length`` (frames -> encoder steps), utterances whose target
    cannot be CTC-aligned are skipped with reason ``ctc_infeasible``.
    """
    if batch_size < 1:
        raise ConfigError(f"batch size must be positive, got {batch_size}")
    usable, skipped = [], []
    for u in utts:
        if output_length is not None and output_length(u.mel.shape[0]) < ctc_min_frames(u.target.ids):
            skipped.append((u.entry, "ctc_infeasible"))
        else:
            usable.append(u)
    ordered = sorted(usable, key=lambda u: (u.mel.shape[0], u.entry.utt_id))
    groups = [ordered[i: i + batch_size] for i in range(0, len(ordered), batch_size)]
    if shuffle:
        order = np.random.default_rng(seed).permutation(len(groups))
        groups = [groups[i] for i in order]
    return [collate(g) for g in groups], skipped


# -- synthetic corpus ------------------------------------------------------------------------------------

@dataclass
class PseudoLanguage:
    name: str
    alphabet: str
    tones: list


@dataclass
class SyntheticSpec:
    """Pseudo-languages whose characters are rendered as fixed sine tones.

    With ``shared_audio`` every language must use the same tone inventory; each
    generated clip is then listed once per language, with that language's text.
    """

    languages: list
    utterances: int = 50
    shared_audio: bool = False
    words: tuple = (1, 3)
    word_length: tuple = (2, 4)
    tone_seconds: float = 0.12
    gap_seconds: float = 0.04
    space_seconds: float = 0.12
    edge_seconds: float = 0.05
    noise: float = 1e-3
    amplitude: float = 0.5
    valid_fraction: float = 0.0
    audio_format: str = "wav"

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        d = dict(d)
        langs = d.pop("languages", None)
        if not isinstance(langs, dict) or not langs:
            raise ConfigError("synthetic spec needs a non-empty 'languages' mapping")
        parsed = []
        for name, v in langs.items():
            if not isinstance(v, dict) or "alphabet" not in v:
                raise ConfigError(f"language {name!r}: expected an object with 'alphabet'")
            tones = v.get("tones", list(range(len(v["alphabet"]))))
            parsed.append(PseudoLanguage(name, v["alphabet"], list(tones)))
        known = set(cls.__dataclass_fields__) - {"languages"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synthetic spec keys {sorted(unknown)}")
        for key in ("words", "word_length"):
            if key in d:
                d[key] = tuple(d[key])
        spec = cls(parsed, **d)
        spec.validate()
        return spec

    @classmethod
    def load(cls, path) -> "SyntheticSpec":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None

    def to_dict(self) -> dict:
        return {
            "languages": {l.name: {"alphabet": l.alphabet, "tones": list(l.tones)} for l in self.languages},
            "utterances": self.utterances, "shared_audio": self.shared_audio,
            "words": list(self.words), "word_length": list(self.word_length),
            "tone_seconds": self.tone_seconds, "gap_seconds": self.gap_seconds,
            "space_seconds": self.space_seconds, "edge_seconds": self.edge_seconds,
            "noise": self.noise, "amplitude": self.amplitude,
            "valid_fraction": self.valid_fraction, "audio_format": self.audio_format,
        }

    def validate(self) -> None:
        if not self.languages:
            raise ConfigError("synthetic spec has no languages")
        names = [l.name for l in self.languages]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate pseudo-language name")
        n_tones = len(tone_frequencies())
        for l in self.languages:
            chars = list(l.alphabet)
            if not chars or len(set(chars)) != len(chars):
                raise ConfigError(f"{l.name}: alphabet must be non-empty with unique characters")
            if any(c.isspace() or normalize_text(c) != c for c in chars):
                raise ConfigError(f"{l.name}: alphabet characters must be normalized non-space characters")
            if len(l.tones) != len(chars):
                raise ConfigError(f"{l.name}: {len(chars)} characters but {len(l.tones)} tones")
            if len(set(l.tones)) != len(l.tones):
                raise ConfigError(f"{l.name}: two characters share a tone")
            if any(not (isinstance(t, int) and 0 <= t < n_tones) for t in l.tones):
                raise ConfigError(f"{l.name}: tone ids must be integers in [0, {n_tones})")
        if self.shared_audio:
            ref = sorted(self.languages[0].tones)
            if any(sorted(l.tones) != ref for l in self.languages[1:]):
                raise ConfigError("shared_audio requires identical tone inventories across languages")
        if self.utterances < 1:
            raise ConfigError("utterances must be positive")
        for key in ("words", "word_length"):
            lo, hi = getattr(self, key)
            if not 1 <= lo <= hi:
                raise ConfigError(f"{key} must be an increasing pair of positive integers")
        if min(self.tone_seconds, self.gap_seconds, self.space_seconds, self.edge_seconds) < 0 \
                or self.tone_seconds <= 0:
            raise ConfigError("segment durations must be nonnegative (tone duration positive)")
        if not 0.0 <= self.valid_fraction < 1.0:
            raise ConfigError("valid_fraction must lie in [0, 1)")
        if self.audio_format not in ("wav", "f32"):
            raise ConfigError("audio_format must be 'wav' or 'f32'")


def tone_frequencies() -> np.ndarray:
    """Tone id -> frequency (Hz): every fourth Mel band center from band 8 upward."""
    return mel_center_frequencies()[8:76:4]


def charsets_text(spec: SyntheticSpec) -> str:
    return "".join(f"{l.name}: {l.alphabet}\n" for l in spec.languages)


def _render(tone_words: Sequence[Sequence[int]], spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    freqs = tone_frequencies()
    sr = SAMPLE_RATE
    n_tone = int(round(spec.tone_seconds * sr))
    t = np.arange(n_tone) / sr
    ramp = min(n_tone // 2, int(0.01 * sr))
    env = np.ones(n_tone)
    if ramp:
        env[:ramp] = np.linspace(0.0, 1.0, ramp)
        env[-ramp:] = np.linspace(1.0, 0.0, ramp)
    silence = lambda sec: np.zeros(int(round(sec * sr)))  # noqa: E731
    parts = [silence(spec.edge_seconds)]
    for w, word in enumerate(tone_words):
        if w:
            parts.append(silence(spec.space_seconds))
        for c, tone in enumerate(word):
            if c:
                parts.append(silence(spec.gap_seconds))
            parts.append(spec.amplitude * env * np.sin(2 * np.pi * freqs[tone] * t))
    parts.append(silence(spec.edge_seconds))
    audio = np.concatenate(parts)
    if spec.noise:
        audio = audio + spec.noise * rng.standard_normal(audio.size)
    return np.clip(audio, -1.0, 1.0)


def _random_words(n_symbols: int, spec: SyntheticSpec, rng: np.random.Generator) -> list:
    words = []
    for _ in range(int(rng.integers(spec.words[0], spec.words[1] + 1))):
        length = int(rng.integers(spec.word_length[0], spec.word_length[1] + 1))
        word = [int(rng.integers(n_symbols))]
        while len(word) < length:
            nxt = int(rng.integers(n_symbols - 1)) if n_symbols > 1 else 0
            if n_symbols > 1 and nxt >= word[-1]:
                nxt += 1  # no immediate repeats
            word.append(nxt)
        words.append(word)
    return words


def generate_synthetic_corpus(spec: SyntheticSpec, out_dir, seed: int = 0) -> list:
    """Write audio files, ``manifest.jsonl`` and ``charsets.txt`` under ``out_dir``.

    Returns the manifest entries.  Output is byte-identical for identical
    ``(spec, seed)``.
    """
    spec.validate()
    out = Path(out_dir)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    n_lang = len(spec.languages)
    entries = []

    def emit(clip_id: str, tone_words, langs: Sequence[PseudoLanguage]):
        audio = AudioClip(_render(tone_words, spec, rng), SAMPLE_RATE)
        rel = f"audio/{clip_id}.{spec.audio_format}"
        if spec.audio_format == "wav":
            write_wav(out / rel, audio)
        else:
            write_raw_f32(out / rel, audio)
        split = "valid" if rng.random() < spec.valid_fraction else "train"
        for lang in langs:
            to_char = dict(zip(lang.tones, lang.alphabet))
            text = " ".join("".join(to_char[t] for t in word) for word in tone_words)
            uid = clip_id if len(langs) == 1 else f"{clip_id}_{lang.name}"
            entries.append(ManifestEntry(uid, rel, text, lang.name, round(audio.duration, 6), split))

    if spec.shared_audio:
        inventory = sorted(spec.languages[0].tones)
        for i in range(max(1, spec.utterances // n_lang)):
            words = _random_words(len(inventory), spec, rng)
            emit(f"clip{i:05d}", [[inventory[s] for s in w] for w in words], spec.languages)
    else:
        for i in range(spec.utterances):
            lang = spec.languages[i % n_lang]
            words = _random_words(len(lang.tones), spec, rng)
            emit(f"utt{i:05d}", [[lang.tones[s] for s in w] for w in words], [lang])

    write_manifest(out / "manifest.jsonl", entries)
    (out / "charsets.txt").write_text(charsets_text(spec), encoding="utf-8")
    (out / "synth_spec.json").write_text(json.dumps(spec.to_dict(), indent=2, ensure_ascii=False) + "\n",
                                         encoding="utf-8")
    return entries


def separable_spec(utterances: int = 50, **overrides) -> SyntheticSpec:
    """Two pseudo-languages with disjoint tone inventories (language audible from audio)."""
    spec = SyntheticSpec(
        languages=[PseudoLanguage("la", "abcdef", [0, 1, 2, 3, 4, 5]),
                   PseudoLanguage("lb", "ghijkl", [6, 7, 8, 9, 10, 11])],
        utterances=utterances, **overrides)
    spec.validate()
    return spec


def ambiguous_spec(utterances: int = 50, **overrides) -> SyntheticSpec:
    """Two pseudo-languages reading the same tones as different characters."""
    spec = SyntheticSpec(
        languages=[PseudoLanguage("la", "abcdef", [0, 1, 2, 3, 4, 5]),
                   PseudoLanguage("lb", "uvwxyz", [0, 1, 2, 3, 4, 5])],
        utterances=utterances, shared_audio=True, **overrides)
    spec.validate()
    return spec
