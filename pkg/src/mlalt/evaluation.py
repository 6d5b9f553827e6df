"""WER scoring, per-language aggregation and language confusion matrices.

Corpus WER is pooled: total (S + I + D) over total reference words, per
language and overall.  References and hypotheses pass through the same
normalizer used for training targets before scoring.

Structured report (``report.json``)
-----------------------------------
``languages``      ordered language ids
``per_language``   ``{lang: {utterances, ref_words, substitutions, insertions,
                   deletions, wer}}`` -- ``wer`` in percent, null when the
                   language has no scored words
``overall``        same fields pooled over all languages
``excluded``       utterances skipped for an empty reference
``aggregation``    always ``"pooled"``
``confusion``      optional ``{"matrix": M x M row percentages (null rows for
                   absent languages), "absent": [lang, ...]}``
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError, UndefinedWERError
from .vocab import normalize_text


@dataclass
class EditCounts:
    substitutions: int = 0
    insertions: int = 0
    deletions: int = 0
    ref_words: int = 0

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def wer(self) -> float:
        """Percent; may exceed 100."""
        if self.ref_words == 0:
            raise UndefinedWERError("WER undefined for zero reference words")
        return 100.0 * self.errors / self.ref_words

    def __add__(self, other: "EditCounts") -> "EditCounts":
        return EditCounts(self.substitutions + other.substitutions, self.insertions + other.insertions,
                          self.deletions + other.deletions, self.ref_words + other.ref_words)


def align_words(ref: Sequence[str], hyp: Sequence[str]) -> EditCounts:
    """Minimum edit alignment; among equal-cost alignments the one with fewest substitutions."""
    n, m = len(ref), len(hyp)
    # cost[i][j] = (edits, substitutions) aligning ref[:i] with hyp[:j]
    prev = [(j, 0) for j in range(m + 1)]
    for i in range(1, n + 1):
        cur = [(i, 0)] + [None] * m
        for j in range(1, m + 1):
            e, s = prev[j - 1]
            diag = (e, s) if ref[i - 1] == hyp[j - 1] else (e + 1, s + 1)
            up = (prev[j][0] + 1, prev[j][1])
            left = (cur[j - 1][0] + 1, cur[j - 1][1])
            cur[j] = min(diag, up, left)
        prev = cur
    edits, subs = prev[m]
    indel = edits - subs
    ins = (indel + m - n) // 2
    return EditCounts(subs, ins, indel - ins, n)


def wer(reference: str, hypothesis: str) -> EditCounts:
    ref = normalize_text(reference).split()
    if not ref:
        raise UndefinedWERError("empty reference")
    return align_words(ref, normalize_text(hypothesis).split())


@dataclass
class EvalReport:
    languages: list
    per_language: dict                        # lang -> EditCounts
    utterances: dict                          # lang -> count
    excluded: int = 0
    confusion: Optional[np.ndarray] = None    # M x M row percentages, NaN rows for absent languages
    absent: list = field(default_factory=list)

    @property
    def overall(self) -> EditCounts:
        total = EditCounts()
        for c in self.per_language.values():
            total = total + c
        return total

    def language_wer(self, lang: str) -> Optional[float]:
        c = self.per_language.get(lang)
        return None if c is None or c.ref_words == 0 else c.wer

    @property
    def overall_wer(self) -> float:
        return self.overall.wer

    def to_dict(self) -> dict:
        def row(c: EditCounts, n_utt: int) -> dict:
            return {"utterances": n_utt, "ref_words": c.ref_words, "substitutions": c.substitutions,
                    "insertions": c.insertions, "deletions": c.deletions,
                    "wer": None if c.ref_words == 0 else round(c.wer, 4)}

        out = {
            "languages": list(self.languages),
            "per_language": {l: row(self.per_language.get(l, EditCounts()), self.utterances.get(l, 0))
                             for l in self.languages},
            "overall": row(self.overall, sum(self.utterances.values())),
            "excluded": self.excluded,
            "aggregation": "pooled",
        }
        if self.confusion is not None:
            out["confusion"] = {
                "matrix": [None if np.isnan(r).any() else [round(float(v), 4) for v in r]
                           for r in self.confusion],
                "absent": list(self.absent),
            }
        return out

    def to_text(self) -> str:
        lines = [f"{'language':<12}{'utts':>7}{'words':>8}{'sub':>6}{'ins':>6}{'del':>6}{'WER (%)':>10}"]
        for l in self.languages:
            c = self.per_language.get(l, EditCounts())
            w = "n/a" if c.ref_words == 0 else f"{c.wer:.2f}"
            lines.append(f"{l:<12}{self.utterances.get(l, 0):>7}{c.ref_words:>8}{c.substitutions:>6}"
                         f"{c.insertions:>6}{c.deletions:>6}{w:>10}")
        c = self.overall
        w = "n/a" if c.ref_words == 0 else f"{c.wer:.2f}"
        lines.append(f"{'All':<12}{sum(self.utterances.values()):>7}{c.ref_words:>8}{c.substitutions:>6}"
                     f"{c.insertions:>6}{c.deletions:>6}{w:>10}")
        lines.append("(pooled WER: total edits / total reference words)")
        if self.confusion is not None:
            lines.append("")
            lines.append(confusion_table(self.confusion, self.languages))
        return "\n".join(lines) + "\n"

    def save(self, out_dir, stem: str = "report") -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{stem}.json").write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        (out / f"{stem}.txt").write_text(self.to_text(), encoding="utf-8")
        if self.confusion is not None:
            (out / f"{stem}_confusion.csv").write_text(confusion_grid(self.confusion, self.languages),
                                                       encoding="utf-8")


def score_pairs(triples: Iterable[tuple], languages: Optional[Sequence[str]] = None) -> EvalReport:
    """Pool ``(lang, reference, hypothesis)`` triples into a report."""
    per_lang: dict = {}
    counts: dict = {}
    excluded = 0
    seen = []
    for lang, ref, hyp in triples:
        if lang not in seen:
            seen.append(lang)
        try:
            c = wer(ref, hyp)
        except UndefinedWERError:
            excluded += 1
            continue
        per_lang[lang] = per_lang.get(lang, EditCounts()) + c
        counts[lang] = counts.get(lang, 0) + 1
    langs = list(languages) if languages is not None else sorted(seen)
    return EvalReport(langs, per_lang, counts, excluded)


def confusion_from_labels(true: Sequence[int], pred: Sequence[int], n_languages: int):
    """Row-percentage confusion matrix; rows of languages without samples are NaN."""
    mat = np.zeros((n_languages, n_languages))
    for t, p in zip(true, pred):
        mat[int(t), int(p)] += 1
    totals = mat.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        pct = np.where(totals > 0, 100.0 * mat / np.where(totals > 0, totals, 1), np.nan)
    absent = [i for i in range(n_languages) if totals[i, 0] == 0]
    return pct, absent


def confusion_table(matrix: np.ndarray, languages: Sequence[str]) -> str:
    width = max(8, max(len(l) for l in languages) + 2)
    lines = ["true \\ pred".ljust(width + 2) + "".join(l.rjust(width) for l in languages)]
    for l, row in zip(languages, matrix):
        cells = "absent".rjust(width * len(languages)) if np.isnan(row).any() else \
            "".join(f"{v:.1f}".rjust(width) for v in row)
        lines.append(l.ljust(width + 2) + cells)
    return "\n".join(lines)


def confusion_grid(matrix: np.ndarray, languages: Sequence[str]) -> str:
    """CSV grid (header row of predicted languages) for plotting."""
    lines = ["true," + ",".join(languages)]
    for l, row in zip(languages, matrix):
        lines.append(l + "," + ",".join("" if np.isnan(v) else f"{v:.4f}" for v in row))
    return "\n".join(lines) + "\n"


# -- model-driven evaluation ---------------------------------------------------------------------

def predict_languages(model, utterances) -> list:
    """Argmax of the language head for each prepared utterance."""
    from .decoder import inference
    from .model import ConditioningMode

    if model.mode is not ConditioningMode.SELF:
        raise ConfigError("language predictions need a self-conditioned model")
    preds = []
    with inference(model):
        for u in utterances:
            _, _, _, lang_lp = model.prepare_memory(u.mel[None])
            preds.append(int(np.argmax(lang_lp.data[0])))
    return preds


def confusion_matrix(model, utterances, languages: Sequence[str]):
    preds = predict_languages(model, utterances)
    return confusion_from_labels([u.lang_index for u in utterances], preds, len(languages))


def evaluate_corpus(model, vocab, utterances, languages: Sequence[str], beam_size: int = 10,
                    max_len: Optional[int] = None, with_confusion: Optional[bool] = None,
                    greedy: bool = False) -> EvalReport:
    """Decode every prepared utterance and pool WER per language.

    Conditioned models receive each utterance's manifest language.  The
    confusion matrix is attached for self-conditioned models.
    """
    from .decoder import beam_search, greedy_decode
    from .model import ConditioningMode
    from .vocab import decode

    if not utterances:
        raise ConfigError("nothing to evaluate: empty manifest")
    triples = []
    for u in utterances:
        lang = u.lang_index if model.mode.needs_language else None
        if greedy:
            hyp = greedy_decode(model, u.mel, lang, max_len)
        else:
            hyp = beam_search(model, u.mel, lang, beam_size, max_len)
        triples.append((u.entry.lang, u.entry.text, decode(hyp.tokens, vocab)))
    report = score_pairs(triples, languages)
    if with_confusion is None:
        with_confusion = model.mode is ConditioningMode.SELF
    if with_confusion:
        mat, absent = confusion_matrix(model, utterances, languages)
        report.confusion = mat
        report.absent = [languages[i] for i in absent]
    return report
