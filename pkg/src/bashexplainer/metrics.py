"""Text-generation quality measures: BLEU-1..4, METEOR (exact match), ROUGE-L.

All functions take pre-tokenized sequences (lists of tokens). Scores are in
[0, 1]; use score_tokens() for the lowercased whitespace tokenization applied
when scoring generated comments.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Hashable, Sequence

Tokens = Sequence[Hashable]


@dataclass(frozen=True)
class ScoreReport:
    """Corpus-level scores for one evaluation run."""

    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    meteor: float
    rouge_l: float

    def to_dict(self) -> dict:
        return {
            "bleu1": self.bleu1,
            "bleu2": self.bleu2,
            "bleu3": self.bleu3,
            "bleu4": self.bleu4,
            "meteor": self.meteor,
            "rouge_l": self.rouge_l,
        }


def score_tokens(text: str) -> list[str]:
    """Lowercased whitespace tokens used for metric computation."""
    return text.lower().split()


def _ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _clipped_matches(candidate: Tokens, reference: Tokens, n: int) -> tuple[int, int]:
    """(clipped matched n-grams, total candidate n-grams)."""
    cand = _ngrams(candidate, n)
    ref = _ngrams(reference, n)
    matched = sum(min(count, ref[gram]) for gram, count in cand.items())
    return matched, max(len(candidate) - n + 1, 0)


def brevity_penalty(candidate_len: int, reference_len: int) -> float:
    if candidate_len == 0:
        return 0.0
    if candidate_len >= reference_len:
        return 1.0
    return math.exp(1.0 - reference_len / candidate_len)


def corpus_bleu(candidates: Sequence[Tokens], references: Sequence[Tokens], n: int = 4) -> float:
    """BLEU-n over pooled corpus counts with brevity penalty.

    Geometric mean of clipped modified m-gram precisions for m = 1..n; returns
    0 if any pooled precision is 0.
    """
    if not 1 <= n <= 4:
        raise ValueError(f"n must be in 1..4, got {n}")
    if len(candidates) != len(references):
        raise ValueError("candidates and references differ in length")
    if not candidates:
        raise ValueError("empty evaluation lists")
    total_cand = sum(len(c) for c in candidates)
    total_ref = sum(len(r) for r in references)
    log_sum = 0.0
    for m in range(1, n + 1):
        matched = 0
        total = 0
        for cand, ref in zip(candidates, references):
            got, avail = _clipped_matches(cand, ref, m)
            matched += got
            total += avail
        if matched == 0 or total == 0:
            return 0.0
        log_sum += math.log(matched / total)
    return brevity_penalty(total_cand, total_ref) * math.exp(log_sum / n)


def sentence_bleu(candidate: Tokens, reference: Tokens, n: int = 4, smoothing: bool = False) -> float:
    """Per-sentence BLEU-n; with smoothing, zero m-gram counts take add-one
    numerator and denominator."""
    if not 1 <= n <= 4:
        raise ValueError(f"n must be in 1..4, got {n}")
    log_sum = 0.0
    for m in range(1, n + 1):
        matched, total = _clipped_matches(candidate, reference, m)
        if matched == 0:
            if not smoothing:
                return 0.0
            precision = (matched + 1) / (total + 1)
        else:
            precision = matched / total
        log_sum += math.log(precision)
    return brevity_penalty(len(candidate), len(reference)) * math.exp(log_sum / n)


def _min_chunks(candidate: Tokens, reference: Tokens, node_budget: int = 200_000) -> tuple[int, int]:
    """(match count, minimum chunk count over all maximum matchings).

    The match count per token type is min(candidate count, reference count);
    chunk minimization is a bounded backtracking search over which occurrences
    pair up. The budget caps pathological inputs (many repeated tokens); within
    budget the result is exact.
    """
    ref_positions: dict[Hashable, list[int]] = {}
    for j, tok in enumerate(reference):
        ref_positions.setdefault(tok, []).append(j)
    cand_count = Counter(candidate)
    ref_count = Counter(reference)
    quota = {tok: min(c, ref_count[tok]) for tok, c in cand_count.items() if tok in ref_count}
    m = sum(quota.values())
    if m == 0:
        return 0, 0

    # Remaining candidate occurrences of each token after position i, used to
    # decide whether skipping an occurrence still allows a maximum matching.
    remaining_after = [Counter() for _ in range(len(candidate) + 1)]
    for i in range(len(candidate) - 1, -1, -1):
        remaining_after[i] = remaining_after[i + 1].copy()
        remaining_after[i][candidate[i]] += 1

    best = m + 1
    nodes = 0

    def search(i: int, need: dict, used_ref: set, last: tuple[int, int] | None, chunks: int) -> None:
        nonlocal best, nodes
        if chunks >= best:
            return
        nodes += 1
        if nodes > node_budget:
            return
        if sum(need.values()) == 0:
            best = min(best, chunks)
            return
        if i >= len(candidate):
            return
        tok = candidate[i]
        required = need.get(tok, 0)
        if required:
            continuing = None
            if last is not None and last[0] == i - 1:
                continuing = last[1] + 1
            ordered = ref_positions[tok]
            # Prefer the chunk-continuing reference position first.
            trial = [j for j in ordered if continuing is not None and j == continuing and j not in used_ref]
            trial += [j for j in ordered if j not in used_ref and j != continuing]
            for j in trial:
                extends = last is not None and last[0] == i - 1 and j == last[1] + 1
                need[tok] = required - 1
                used_ref.add(j)
                search(i + 1, need, used_ref, (i, j), chunks if extends else chunks + 1)
                used_ref.discard(j)
                need[tok] = required
        # Skipping this occurrence is allowed only if later occurrences can
        # still fill the quota.
        if remaining_after[i + 1][tok] >= required:
            search(i + 1, need, used_ref, last, chunks)

    search(0, dict(quota), set(), None, 0)
    if best > m:
        best = m
    return m, best


def meteor(candidate: Tokens, reference: Tokens) -> float:
    """Exact-surface unigram METEOR: recall-weighted F-mean with a
    fragmentation penalty of 0.5 * (chunks / matches)^3."""
    if not candidate or not reference:
        return 0.0
    m, chunks = _min_chunks(candidate, reference)
    if m == 0:
        return 0.0
    precision = m / len(candidate)
    recall = m / len(reference)
    f_mean = 10.0 * precision * recall / (recall + 9.0 * precision)
    penalty = 0.5 * (chunks / m) ** 3
    return f_mean * (1.0 - penalty)


def lcs_length(a: Tokens, b: Tokens) -> int:
    """Longest common subsequence length via the standard two-row DP."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for i in range(1, len(a) + 1):
        cur = [0] * (len(b) + 1)
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    return prev[len(b)]


def rouge_l(candidate: Tokens, reference: Tokens, beta: float = 1.2) -> float:
    """LCS-based F-measure: (1 + beta^2) P R / (R + beta^2 P)."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    if not candidate or not reference:
        return 0.0
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    precision = lcs / len(candidate)
    recall = lcs / len(reference)
    return (1.0 + beta * beta) * precision * recall / (recall + beta * beta * precision)


def evaluate_pairs(candidates: Sequence[str], references: Sequence[str]) -> ScoreReport:
    """ScoreReport over raw strings: corpus-level BLEU, averaged METEOR/ROUGE-L."""
    if len(candidates) != len(references):
        raise ValueError("candidates and references differ in length")
    if not candidates:
        raise ValueError("empty evaluation lists")
    cand_tokens = [score_tokens(c) for c in candidates]
    ref_tokens = [score_tokens(r) for r in references]
    n_pairs = len(cand_tokens)
    return ScoreReport(
        bleu1=corpus_bleu(cand_tokens, ref_tokens, 1),
        bleu2=corpus_bleu(cand_tokens, ref_tokens, 2),
        bleu3=corpus_bleu(cand_tokens, ref_tokens, 3),
        bleu4=corpus_bleu(cand_tokens, ref_tokens, 4),
        meteor=sum(meteor(c, r) for c, r in zip(cand_tokens, ref_tokens)) / n_pairs,
        rouge_l=sum(rouge_l(c, r) for c, r in zip(cand_tokens, ref_tokens)) / n_pairs,
    )
