"""ROUGE-1/2/L precision, recall and F1 over token sequences.

Text is lowercased and punctuation is split off before whitespace
tokenisation; there is no stemming or stopword removal, so scores are
self-consistent within this package rather than comparable to other
ROUGE toolkits.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from typing import Iterable, NamedTuple, Sequence, Union

_TOKEN = re.compile(r"\w+|[^\w\s]")

Tokens = Union[str, Sequence[str]]


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


class RougeScore(NamedTuple):
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_pr(cls, p: float, r: float) -> "RougeScore":
        return cls(p, r, 2 * p * r / (p + r) if p + r > 0 else 0.0)


def _tokens(x: Tokens) -> list[str]:
    return tokenize(x) if isinstance(x, str) else list(x)


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: Tokens, reference: Tokens, n: int = 1) -> RougeScore:
    if n not in (1, 2):
        raise ValueError("n must be 1 or 2")
    cand, ref = _ngrams(_tokens(candidate), n), _ngrams(_tokens(reference), n)
    c_total, r_total = sum(cand.values()), sum(ref.values())
    if c_total == 0 or r_total == 0:
        return RougeScore(0.0, 0.0, 0.0)
    overlap = sum((cand & ref).values())
    return RougeScore.from_pr(overlap / c_total, overlap / r_total)


def lcs_length(a: Sequence, b: Sequence) -> int:
    """Longest common subsequence length.

    Bit-parallel form of the standard dynamic program (Allison-Dix /
    Hyyro): bit i of ``v`` tracks one DP column of the shorter sequence,
    so each element of the longer one costs a few integer operations.
    """
    if len(a) < len(b):
        a, b = b, a
    m = len(b)
    if m == 0:
        return 0
    match: dict = {}
    for i, y in enumerate(b):
        match[y] = match.get(y, 0) | (1 << i)
    full = (1 << m) - 1
    v = full
    for x in a:
        u = v & match.get(x, 0)
        v = ((v + u) | (v - u)) & full
    return m - bin(v).count("1")


def rouge_l(candidate: Tokens, reference: Tokens) -> RougeScore:
    cand, ref = _tokens(candidate), _tokens(reference)
    if not cand or not ref:
        return RougeScore(0.0, 0.0, 0.0)
    lcs = lcs_length(cand, ref)
    return RougeScore.from_pr(lcs / len(cand), lcs / len(ref))


VARIANTS = ("rouge1", "rouge2", "rougeL")


def score_pair(candidate: Tokens, reference: Tokens) -> dict[str, RougeScore]:
    cand, ref = _tokens(candidate), _tokens(reference)
    return {"rouge1": rouge_n(cand, ref, 1), "rouge2": rouge_n(cand, ref, 2),
            "rougeL": rouge_l(cand, ref)}


def corpus_rouge(pairs: Iterable[tuple[Tokens, Tokens]]) -> dict[str, RougeScore]:
    """Arithmetic mean of per-pair precision, recall and F1 for each variant."""
    scores = [score_pair(c, r) for c, r in pairs]
    if not scores:
        raise ValueError("corpus_rouge needs at least one pair")
    out = {}
    for v in VARIANTS:
        k = len(scores)
        # fsum keeps the mean independent of pair order
        out[v] = RougeScore(math.fsum(s[v].precision for s in scores) / k,
                            math.fsum(s[v].recall for s in scores) / k,
                            math.fsum(s[v].f1 for s in scores) / k)
    return out
