"""Independent reference implementations used as test oracles."""

import itertools

import numpy as np


def ctc_paths_logsum(log_probs: np.ndarray, target) -> float:
    """log sum over every length-T path whose collapse equals ``target`` (blank = 0)."""
    t_len, n_tok = log_probs.shape
    target = tuple(target)
    total = -np.inf
    for path in itertools.product(range(n_tok), repeat=t_len):
        merged = [k for k, _ in itertools.groupby(path)]
        if tuple(p for p in merged if p != 0) == target:
            total = np.logaddexp(total, log_probs[np.arange(t_len), path].sum())
    return float(total)


def all_path_scores(log_probs: np.ndarray, max_target: int = 4) -> dict:
    """Enumerate all N^T paths at once; returns ``{collapsed target: log path-sum}``.

    Collapsed sequences (digits 1..N-1) are packed into base-N integers so the
    grouping is a sort plus a segmented log-sum-exp.
    """
    t_len, n_tok = log_probs.shape
    paths = np.stack(np.meshgrid(*[np.arange(n_tok)] * t_len, indexing="ij"), -1).reshape(-1, t_len)
    scores = log_probs[np.arange(t_len)[None, :], paths].sum(axis=1)
    keep = paths != 0
    keep[:, 1:] &= paths[:, 1:] != paths[:, :-1]
    length = keep.sum(axis=1)
    rank = np.cumsum(keep, axis=1) - 1
    key = (np.where(keep, paths * n_tok ** np.maximum(rank, 0), 0)).sum(axis=1)
    sel = length <= max_target
    key, scores, length = key[sel], scores[sel], length[sel]
    order = np.argsort(key, kind="stable")
    key, scores, length = key[order], scores[order], length[order]
    starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
    sums = np.logaddexp.reduceat(scores, starts)
    out = {}
    for k, n, s in zip(key[starts], length[starts], sums):
        digits = []
        for _ in range(int(n)):
            digits.append(int(k % n_tok))
            k //= n_tok
        out[tuple(digits)] = float(s)
    return out


def levenshtein_counts(ref, hyp):
    """Plain edit distance by full-table DP (no tie-breaking): returns total edits."""
    n, m = len(ref), len(hyp)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d[i, j] = min(d[i - 1, j] + 1, d[i, j - 1] + 1, d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]))
    return int(d[n, m])


def min_subs_alignment(ref, hyp):
    """Recursive enumeration of all minimum-edit alignments, returning min (edits, subs, ins, dels)."""
    from functools import lru_cache

    @lru_cache(maxsize=None)
    def go(i, j):
        if i == len(ref) and j == len(hyp):
            return (0, 0, 0, 0)
        best = None
        if i < len(ref) and j < len(hyp):
            e, s, a, b = go(i + 1, j + 1)
            cand = (e, s, a, b) if ref[i] == hyp[j] else (e + 1, s + 1, a, b)
            best = cand
        if j < len(hyp):
            e, s, a, b = go(i, j + 1)
            cand = (e + 1, s, a + 1, b)
            best = cand if best is None or cand[:2] < best[:2] else best
        if i < len(ref):
            e, s, a, b = go(i + 1, j)
            cand = (e + 1, s, a, b + 1)
            best = cand if best is None or cand[:2] < best[:2] else best
        return best

    return go(0, 0)


def best_terminated_sequence(step_fn, n_tok: int, eos: int, max_len: int):
    """Brute-force argmax over all sequences ending in ``eos`` within ``max_len`` tokens.

    ``step_fn(prefix) -> log-probs`` over the vocabulary.  Ties go to the
    lexicographically smaller sequence.
    """
    done = []
    frontier = [((), 0.0)]
    for _ in range(max_len):
        nxt = []
        for prefix, score in frontier:
            lp = step_fn(prefix)
            for k in range(n_tok):
                item = (prefix + (k,), score + float(lp[k]))
                (done if k == eos else nxt).append(item)
        frontier = nxt
    return min(done, key=lambda c: (-c[1], c[0]))
