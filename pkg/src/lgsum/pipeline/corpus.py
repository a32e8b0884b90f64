"""Corpus loading, preprocessing and token-count batching.

Data files hold one record per line: the source documents joined by
``|||||``, a tab, then the reference summary.  The parse file is CoNLL-U
with one ``# newdoc`` block per source document, in record order.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..conllu import ParsedDocument, read_conllu
from ..depmatrix import DepMatrix, assemble_sequence_matrix
from ..model import DOC, SENT, ModelConfig, Vocabulary
from ..rouge import tokenize

DOC_SEPARATOR = "|||||"


class AlignmentError(ValueError):
    pass


@dataclass
class CorpusExample:
    documents: list[str]
    summary: str
    parses: list[ParsedDocument]
    example_id: int = 0


def split_sentences(text: str) -> list[str]:
    return [s for s in re.split(r"(?<=[.!?])\s+", text.strip()) if s]


def _check_alignment(ex_id: int, doc_no: int, text: str, doc: ParsedDocument) -> None:
    words = tokenize(text)
    forms = [f.lower() for f in doc.forms]
    for k in range(max(len(words), len(forms))):
        a = words[k] if k < len(words) else "<end>"
        b = forms[k] if k < len(forms) else "<end>"
        if a != b:
            raise AlignmentError(f"example {ex_id} document {doc_no}: token {k} differs "
                                 f"(text {a!r}, parse {b!r})")


def read_records(data_path, separator: str = DOC_SEPARATOR) -> list[tuple[list[str], str]]:
    records = []
    with open(data_path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            src, tab, summary = line.partition("\t")
            if not tab:
                raise ValueError(f"{data_path}:{lineno}: missing tab before the summary")
            docs = [d.strip() for d in src.split(separator) if d.strip()]
            if not docs:
                raise ValueError(f"{data_path}:{lineno}: record has no documents")
            records.append((docs, summary.strip()))
    return records


def load_corpus(data_path, parse_path, separator: str = DOC_SEPARATOR,
                permissive_parses: bool = False) -> list[CorpusExample]:
    records = read_records(data_path, separator)
    parsed = read_conllu(parse_path, permissive=permissive_parses)
    n_docs = sum(len(docs) for docs, _ in records)
    if n_docs != len(parsed):
        raise AlignmentError(f"data has {n_docs} documents in {len(records)} records, "
                             f"parse file has {len(parsed)} documents")
    out, cursor = [], 0
    for i, (docs, summary) in enumerate(records):
        parses = parsed[cursor:cursor + len(docs)]
        cursor += len(docs)
        for j, (text, doc) in enumerate(zip(docs, parses)):
            _check_alignment(i, j, text, doc)
        out.append(CorpusExample(docs, summary, list(parses), i))
    return out


def source_tokens(example: CorpusExample) -> list[str]:
    toks: list[str] = []
    for j, doc in enumerate(example.parses):
        if j:
            toks.append(DOC)
        toks.extend(f.lower() for f in doc.forms)
    return toks


def target_tokens(summary: str, max_tokens: int | None = None) -> list[str]:
    """Summary tokens with a delimiter before and after every sentence."""
    toks: list[str] = []
    for sent in split_sentences(summary):
        toks += [SENT, *tokenize(sent), SENT]
    return toks if max_tokens is None else toks[:max_tokens]


def build_vocab(corpus: Sequence[CorpusExample], min_freq: int = 1) -> Vocabulary:
    return Vocabulary.build(
        [source_tokens(ex) for ex in corpus] + [tokenize(ex.summary) for ex in corpus],
        min_freq=min_freq)


@dataclass
class Encoded:
    src: list[int]
    tgt: list[int]
    dep: DepMatrix
    example_id: int = 0

    def __len__(self) -> int:
        return len(self.src) + len(self.tgt)


def preprocess(example: CorpusExample, vocab: Vocabulary, config: ModelConfig) -> Encoded:
    """Token ids for source and target plus the truncation-consistent dependency matrix."""
    trees, bounds = [], []
    for doc in example.parses:
        bounds.append(len(trees))
        trees.extend(doc.sentences)
    if not trees:
        raise ValueError(f"example {example.example_id} has no parsed sentences")
    dep = assemble_sequence_matrix(trees, bounds, doc_separator=True)
    src = vocab.encode(source_tokens(example))
    limit = config.max_src_tokens
    src, dep = src[:limit], dep.truncate(limit)
    if not src:
        raise ValueError(f"example {example.example_id}: empty source after truncation")
    tgt = [vocab.bos] + vocab.encode(target_tokens(example.summary, config.max_tgt_tokens)) + [vocab.eos]
    return Encoded(src, tgt, dep, example.example_id)


@dataclass
class Batch:
    src: np.ndarray        # (B, S) token ids
    src_valid: np.ndarray  # (B, S) True at real tokens
    bits: np.ndarray       # (B, S, S) dependency matrices, zero padded
    tgt_in: np.ndarray     # (B, T)
    tgt_out: np.ndarray    # (B, T)
    ids: list[int]

    @property
    def ntokens(self) -> int:
        return int((self.tgt_out != 0).sum())

    @classmethod
    def collate(cls, items: Sequence[Encoded], pad: int = 0) -> "Batch":
        b = len(items)
        s = max(len(e.src) for e in items)
        t = max(len(e.tgt) for e in items) - 1
        src = np.full((b, s), pad, dtype=np.int64)
        tgt_in = np.full((b, t), pad, dtype=np.int64)
        tgt_out = np.full((b, t), pad, dtype=np.int64)
        bits = np.zeros((b, s, s), dtype=np.uint8)
        for i, e in enumerate(items):
            src[i, :len(e.src)] = e.src
            tgt_in[i, :len(e.tgt) - 1] = e.tgt[:-1]
            tgt_out[i, :len(e.tgt) - 1] = e.tgt[1:]
            bits[i] = e.dep.padded(s)
        valid = np.zeros((b, s), dtype=bool)
        for i, e in enumerate(items):
            valid[i, :len(e.src)] = True
        return cls(src, valid, bits, tgt_in, tgt_out, [e.example_id for e in items])


def make_batches(examples: Sequence[Encoded], batch_tokens: int, seed: int = 0,
                 pad: int = 0) -> list[Batch]:
    """Shuffle by ``seed`` and greedily pack while source+target tokens fit."""
    for e in examples:
        if len(e) > batch_tokens:
            raise ValueError(f"example {e.example_id} has {len(e)} tokens, "
                             f"more than batch_tokens={batch_tokens}")
    order = np.random.default_rng(seed).permutation(len(examples))
    groups: list[list[Encoded]] = []
    used = 0
    for i in order:
        e = examples[i]
        if not groups or used + len(e) > batch_tokens:
            groups.append([])
            used = 0
        groups[-1].append(e)
        used += len(e)
    return [Batch.collate(g, pad) for g in groups]
