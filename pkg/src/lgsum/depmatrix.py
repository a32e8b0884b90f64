"""Binary dependency matrices over token sequences.

A position pair is marked 1 when a dependency edge joins the two words, in
either direction.  The diagonal stays 0 and pairs from different sentences
are never linked; sequences made of several sentences or documents are
composed block-diagonally.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .conllu import DependencyTree, validate_tree

Span = tuple[int, int]


@dataclass(frozen=True, eq=False)
class DepMatrix:
    bits: np.ndarray
    sentence_spans: tuple[Span, ...] = ()
    doc_spans: tuple[Span, ...] = ()

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits, dtype=np.uint8)
        if bits.ndim != 2 or bits.shape[0] != bits.shape[1]:
            raise ValueError(f"dependency matrix must be square, got {bits.shape}")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "sentence_spans", tuple(map(tuple, self.sentence_spans)))
        object.__setattr__(self, "doc_spans", tuple(map(tuple, self.doc_spans)))

    @property
    def n(self) -> int:
        return self.bits.shape[0]

    def __eq__(self, other) -> bool:
        return (isinstance(other, DepMatrix)
                and np.array_equal(self.bits, other.bits)
                and self.sentence_spans == other.sentence_spans
                and self.doc_spans == other.doc_spans)

    def block(self, start: int, end: int) -> np.ndarray:
        return self.bits[start:end, start:end]

    def truncate(self, n: int) -> "DepMatrix":
        """Keep the leading ``n`` positions; spans past the cut are dropped."""
        if n >= self.n:
            return self

        def clip(spans):
            return tuple((s, min(e, n)) for s, e in spans if s < n)

        return DepMatrix(self.bits[:n, :n], clip(self.sentence_spans), clip(self.doc_spans))

    def padded(self, n: int) -> np.ndarray:
        out = np.zeros((n, n), dtype=np.uint8)
        out[:self.n, :self.n] = self.bits
        return out


def build_sentence_matrix(tree: DependencyTree) -> DepMatrix:
    problem = validate_tree(tree)
    if problem is not None:
        raise ValueError(f"invalid dependency tree {tree.sentence_id}: {problem}")
    n = len(tree)
    bits = np.zeros((n, n), dtype=np.uint8)
    for i, head in enumerate(tree.heads):
        if head > 0:
            bits[i, head - 1] = bits[head - 1, i] = 1
    return DepMatrix(bits, ((0, n),), ((0, n),))


def assemble_sequence_matrix(trees: Sequence[DependencyTree],
                             doc_boundaries: Sequence[int] = (0,),
                             doc_separator: bool = False) -> DepMatrix:
    """Place per-sentence matrices block-diagonally along the concatenation.

    ``doc_boundaries`` lists the index in ``trees`` at which each document
    starts.  With ``doc_separator`` one unlinked position is inserted between
    consecutive documents (the separator token).
    """
    if not trees:
        raise ValueError("no sentences to assemble")
    bounds = list(doc_boundaries) or [0]
    if bounds[0] != 0 or any(b > c for b, c in zip(bounds, bounds[1:])) or bounds[-1] > len(trees):
        raise ValueError(f"bad document boundaries {bounds} for {len(trees)} sentences")
    ends = bounds[1:] + [len(trees)]

    blocks: list[tuple[int, np.ndarray]] = []
    sent_spans: list[Span] = []
    doc_spans: list[Span] = []
    pos = 0
    for d, (lo, hi) in enumerate(zip(bounds, ends)):
        if d > 0 and doc_separator:
            pos += 1
        doc_start = pos
        for tree in trees[lo:hi]:
            m = build_sentence_matrix(tree).bits
            blocks.append((pos, m))
            sent_spans.append((pos, pos + len(tree)))
            pos += len(tree)
        doc_spans.append((doc_start, pos))

    bits = np.zeros((pos, pos), dtype=np.uint8)
    for start, m in blocks:
        bits[start:start + len(m), start:start + len(m)] = m
    return DepMatrix(bits, tuple(sent_spans), tuple(doc_spans))


def expand_to_pieces(m: DepMatrix, counts: Sequence[int]) -> DepMatrix:
    """Lift a word-level matrix to subword pieces.

    Pieces inherit their word's edges, and distinct pieces of one word are
    linked to each other.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if counts.shape != (m.n,):
        raise ValueError(f"alignment has {counts.size} words, matrix has {m.n}")
    if (counts < 1).any():
        raise ValueError("every word needs at least one piece")
    word_of = np.repeat(np.arange(m.n), counts)
    same_word = word_of[:, None] == word_of[None, :]
    bits = m.bits[np.ix_(word_of, word_of)] | same_word.astype(np.uint8)
    np.fill_diagonal(bits, 0)
    offsets = np.concatenate([[0], np.cumsum(counts)])

    def lift(spans):
        return tuple((int(offsets[s]), int(offsets[e])) for s, e in spans)

    return DepMatrix(bits, lift(m.sentence_spans), lift(m.doc_spans))


# ---------------------------------------------------------------------------
# DEPMAT v1 text format
# ---------------------------------------------------------------------------

def _fmt_spans(spans) -> str:
    return " ".join(f"{s}:{e}" for s, e in spans)


def _parse_spans(line: str) -> tuple[Span, ...]:
    out = []
    for item in line.split():
        s, _, e = item.partition(":")
        out.append((int(s), int(e)))
    return tuple(out)


def dumps_matrix(m: DepMatrix) -> str:
    lines = [f"DEPMAT v1 n={m.n} sents={len(m.sentence_spans)} docs={len(m.doc_spans)}",
             _fmt_spans(m.sentence_spans), _fmt_spans(m.doc_spans)]
    lines.extend(" ".join(str(int(b)) for b in row) for row in m.bits)
    return "\n".join(lines) + "\n"


def loads_matrix(text: str) -> DepMatrix:
    lines = text.split("\n")
    header = lines[0].split()
    if len(header) != 5 or header[:2] != ["DEPMAT", "v1"]:
        raise ValueError(f"malformed DEPMAT header: {lines[0]!r}")
    try:
        fields = dict(item.split("=", 1) for item in header[2:])
        n, k, d = int(fields["n"]), int(fields["sents"]), int(fields["docs"])
    except (KeyError, ValueError):
        raise ValueError(f"malformed DEPMAT header: {lines[0]!r}") from None
    if len(lines) < 3:
        raise ValueError("unexpected end of matrix data")
    sents, docs = _parse_spans(lines[1]), _parse_spans(lines[2])
    if len(sents) != k or len(docs) != d:
        raise ValueError("span count does not match header")
    rows = [ln for ln in lines[3:3 + n]]
    if len(rows) < n or any(not r.strip() for r in rows):
        raise ValueError("unexpected end of matrix data")
    bits = np.zeros((n, n), dtype=np.uint8)
    for i, row in enumerate(rows):
        vals = row.split()
        if len(vals) != n:
            raise ValueError("unexpected end of matrix data" if len(vals) < n
                             else f"row {i} has {len(vals)} entries, expected {n}")
        if any(v not in ("0", "1") for v in vals):
            raise ValueError(f"row {i} contains a non-binary entry")
        bits[i] = [int(v) for v in vals]
    return DepMatrix(bits, sents, docs)


def save_matrix(m: DepMatrix, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="ascii") as f:
        f.write(dumps_matrix(m))


def load_matrix(path: str | os.PathLike) -> DepMatrix:
    with open(path, encoding="ascii") as f:
        return loads_matrix(f.read())
