"""CoNLL-U ingestion: ID, FORM, HEAD and DEPREL of basic dependency trees."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable

log = logging.getLogger(__name__)

ID, FORM, LEMMA, UPOS, XPOS, FEATS, HEAD, DEPREL, DEPS, MISC = range(10)


class ConlluError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class Token:
    form: str
    head: int
    deprel: str


@dataclass(frozen=True)
class DependencyTree:
    sentence_id: str
    tokens: tuple[Token, ...]

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def heads(self) -> list[int]:
        return [t.head for t in self.tokens]

    @property
    def forms(self) -> list[str]:
        return [t.form for t in self.tokens]

    @classmethod
    def from_heads(cls, heads: Iterable[int], forms: Iterable[str] | None = None,
                   sentence_id: str = "s") -> "DependencyTree":
        heads = list(heads)
        forms = list(forms) if forms is not None else [f"w{i + 1}" for i in range(len(heads))]
        return cls(sentence_id, tuple(Token(f, h, "dep") for f, h in zip(forms, heads)))


@dataclass(frozen=True)
class ParsedDocument:
    doc_id: str
    sentences: tuple[DependencyTree, ...]

    @property
    def forms(self) -> list[str]:
        return [form for tree in self.sentences for form in tree.forms]


def validate_tree(tree: DependencyTree) -> str | None:
    """Return None for a well-formed tree, else a one-line diagnostic."""
    heads = tree.heads
    n = len(heads)
    for i, h in enumerate(heads, start=1):
        if h < 0 or h > n:
            return f"head out of range at token {i}"
    if sum(1 for h in heads if h == 0) > 1:
        return "multiple roots"
    for i in range(1, n + 1):
        node = i
        for _ in range(n):
            node = heads[node - 1]
            if node == 0:
                break
        else:
            return f"cycle at token {i}"
    return None


def _parse_sentence(rows: list[tuple[int, list[str]]], sentence_id: str) -> DependencyTree:
    tokens = []
    seen: set[str] = set()
    for lineno, cols in rows:
        tid = cols[ID]
        if "-" in tid or "." in tid:
            continue
        if tid in seen:
            raise ConlluError(f"duplicate ID {tid!r}", lineno)
        seen.add(tid)
        if not tid.isdigit() or int(tid) != len(tokens) + 1:
            raise ConlluError(f"non-sequential ID {tid!r}", lineno)
        try:
            head = int(cols[HEAD])
        except ValueError:
            raise ConlluError(f"non-integer HEAD {cols[HEAD]!r}", lineno) from None
        tokens.append(Token(cols[FORM], head, cols[DEPREL]))
    return DependencyTree(sentence_id, tuple(tokens))


def parse_conllu(text: str, permissive: bool = False) -> list[ParsedDocument]:
    """Parse CoNLL-U text into documents of dependency trees.

    Documents are delimited by ``# newdoc`` comments; without any, the whole
    input is one document.  An invalid tree raises :class:`ConlluError`
    unless ``permissive`` is set, in which case it is dropped and counted in
    a warning.
    """
    docs: list[tuple[str, list[DependencyTree]]] = []
    rows: list[tuple[int, list[str]]] = []
    sent_id: str | None = None
    sent_start = 0
    skipped = 0

    def current_doc() -> list[DependencyTree]:
        if not docs:
            docs.append(("doc0", []))
        return docs[-1][1]

    def flush() -> None:
        nonlocal rows, sent_id, skipped
        if not rows:
            return
        sentences = current_doc()
        sid = sent_id or f"{docs[-1][0]}-s{len(sentences)}"
        tree = _parse_sentence(rows, sid)
        problem = validate_tree(tree) if tree.tokens else "empty sentence"
        rows, sent_id = [], None
        if problem is None:
            sentences.append(tree)
        elif permissive:
            skipped += 1
        else:
            raise ConlluError(f"sentence {sid}: {problem}", sent_start)

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            flush()
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("newdoc"):
                flush()
                _, _, rest = body.partition("=")
                docs.append((rest.strip() or f"doc{len(docs)}", []))
            elif body.startswith("sent_id") and "=" in body:
                sent_id = body.partition("=")[2].strip()
            continue
        cols = line.split("\t")
        if len(cols) != 10:
            raise ConlluError(f"expected 10 columns, found {len(cols)}", lineno)
        if not rows:
            sent_start = lineno
        rows.append((lineno, cols))
    flush()
    if skipped:
        log.warning("skipped %d invalid sentence(s)", skipped)
    return [ParsedDocument(doc_id, tuple(sents)) for doc_id, sents in docs]


def read_conllu(path, permissive: bool = False) -> list[ParsedDocument]:
    with open(path, encoding="utf-8") as f:
        return parse_conllu(f.read(), permissive=permissive)


def to_conllu(docs: Iterable[ParsedDocument]) -> str:
    """Serialise ID/FORM/HEAD/DEPREL back to CoNLL-U; other columns are ``_``."""
    out = []
    for doc in docs:
        out.append(f"# newdoc id = {doc.doc_id}")
        for tree in doc.sentences:
            out.append(f"# sent_id = {tree.sentence_id}")
            for i, tok in enumerate(tree.tokens, start=1):
                out.append("\t".join([str(i), tok.form, "_", "_", "_", "_",
                                      str(tok.head), tok.deprel, "_", "_"]))
            out.append("")
    return "\n".join(out) + ("\n" if out else "")
