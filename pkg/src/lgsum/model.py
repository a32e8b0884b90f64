"""Flat Transformer encoder-decoder with dependency-guided encoder attention."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Sequence

import numpy as np

from .attention import FusionSpec, attention_t
from .depmatrix import DepMatrix
from .numerics import Node, Tape, ffn

PAD, UNK, BOS, EOS, SENT, DOC = "<pad>", "<unk>", "<s>", "</s>", "<q>", "|||||"
SPECIALS = (PAD, UNK, BOS, EOS, SENT, DOC)


@dataclass
class ModelConfig:
    vocab_size: int = 0
    width: int = 64
    heads: int = 8
    enc_layers: int = 4
    dec_layers: int = 4
    ffn_width: int = 256
    dropout: float = 0.1
    fusion: FusionSpec = field(default_factory=FusionSpec)
    max_src_tokens: int = 512
    max_tgt_tokens: int = 400
    min_gen: int = 20
    max_gen: int = 250
    label_smoothing: float = 0.0
    share_embeddings: bool = False
    ln_eps: float = 1e-5

    def validate(self) -> "ModelConfig":
        if self.width % self.heads:
            raise ValueError(f"width {self.width} is not divisible by {self.heads} heads")
        if self.enc_layers < 1 or self.dec_layers < 1:
            raise ValueError("encoder and decoder need at least one layer each")
        if not 1 <= self.min_gen <= self.max_gen:
            raise ValueError(f"need 1 <= min_gen <= max_gen, got {self.min_gen}, {self.max_gen}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fusion"] = asdict(self.fusion)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["fusion"] = FusionSpec(**d.get("fusion", {}))
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


class Vocabulary:
    """Token/index bijection with reserved entries at the front."""

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:len(SPECIALS)]) != SPECIALS:
            raise ValueError("vocabulary must start with the reserved tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        self.pad, self.unk, self.bos, self.eos, self.sent, self.doc = range(len(SPECIALS))

    @classmethod
    def build(cls, token_lists: Iterable[Sequence[str]], min_freq: int = 1) -> "Vocabulary":
        counts = Counter(t for toks in token_lists for t in toks)
        kept = sorted((t for t, c in counts.items() if c >= min_freq and t not in SPECIALS),
                      key=lambda t: (-counts[t], t))
        return cls(list(SPECIALS) + kept)

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.index.get(t, self.unk) for t in tokens]

    def decode(self, ids: Iterable[int], strip: bool = True) -> list[str]:
        special = set(range(len(SPECIALS)))
        return [self.tokens[i] for i in ids if not (strip and i in special)]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(self.tokens) + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            return cls([line.rstrip("\n") for line in f if line.rstrip("\n")])


def positional_encoding(length: int, width: int) -> np.ndarray:
    """Sinusoids: sin at even columns, cos at odd columns."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    rate = np.power(10000.0, -np.arange(0, width, 2, dtype=np.float64) / width)
    pe = np.zeros((length, width))
    pe[:, 0::2] = np.sin(pos * rate)
    pe[:, 1::2] = np.cos(pos * rate[: width // 2])
    return pe


def init_params(config: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    config.validate()
    if config.vocab_size <= 0:
        raise ValueError("vocab_size must be set before initialising parameters")
    d, f, v = config.width, config.ffn_width, config.vocab_size
    params: dict[str, np.ndarray] = {}

    def xavier(name, fan_in, fan_out):
        a = math.sqrt(6.0 / (fan_in + fan_out))
        params[name] = rng.uniform(-a, a, size=(fan_in, fan_out))

    def norm(prefix):
        params[prefix + ".g"] = np.ones(d)
        params[prefix + ".b"] = np.zeros(d)

    def attn(prefix):
        for m in ("wq", "wk", "wv", "wo"):
            xavier(f"{prefix}.{m}", d, d)

    def feed_forward(prefix):
        xavier(prefix + ".w1", d, f)
        params[prefix + ".b1"] = np.zeros(f)
        xavier(prefix + ".w2", f, d)
        params[prefix + ".b2"] = np.zeros(d)

    params["src_embed"] = rng.normal(0.0, d ** -0.5, size=(v, d))
    if not config.share_embeddings:
        params["tgt_embed"] = rng.normal(0.0, d ** -0.5, size=(v, d))
    for i in range(config.enc_layers):
        attn(f"enc.{i}.attn")
        norm(f"enc.{i}.ln1")
        feed_forward(f"enc.{i}.ffn")
        norm(f"enc.{i}.ln2")
    for i in range(config.dec_layers):
        attn(f"dec.{i}.self")
        norm(f"dec.{i}.ln1")
        attn(f"dec.{i}.cross")
        norm(f"dec.{i}.ln2")
        feed_forward(f"dec.{i}.ffn")
        norm(f"dec.{i}.ln3")
    xavier("out.w", d, v)
    params["out.b"] = np.zeros(v)
    return params


def _sub(w: dict[str, Node], prefix: str) -> dict[str, Node]:
    cut = len(prefix) + 1
    return {k[cut:]: n for k, n in w.items() if k.startswith(prefix + ".")}


def _as_bits(p, n: int) -> np.ndarray:
    if p is None:
        return np.zeros((n, n), dtype=np.uint8)
    bits = p.bits if isinstance(p, DepMatrix) else np.asarray(p)
    if bits.shape != (n, n):
        raise ValueError(f"dependency matrix of side {bits.shape[0]} does not match sequence length {n}")
    return bits


class Transformer:
    """Encoder-decoder whose encoder self-attention is fused with a dependency matrix.

    The ``*_t`` methods run on a :class:`Tape` over a batch and are what
    training differentiates; the plain methods are single-sequence inference
    wrappers around the same code.
    """

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray] | None = None,
                 seed: int = 0, vocab_specials: tuple[int, int, int] = (0, 2, 3)):
        self.config = config.validate()
        self.params = params if params is not None else init_params(config, np.random.default_rng(seed))
        self.pad, self.bos, self.eos = vocab_specials

    # -- tape forms -------------------------------------------------------
    def embed_t(self, tape: Tape, w: dict[str, Node], ids: np.ndarray, side: str = "src") -> Node:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None]
        table = w["src_embed"] if side == "src" or self.config.share_embeddings else w["tgt_embed"]
        d = self.config.width
        x = tape.scale(tape.take_rows(table, ids), math.sqrt(d))
        return tape.add(x, tape.const(positional_encoding(ids.shape[1], d)[None]))

    def encoder_layer_t(self, tape, w, layer, x, valid, bits, rng=None, capture=None) -> Node:
        cfg = self.config
        lw = _sub(w, f"enc.{layer}")
        ctx = attention_t(tape, x, x, _sub(lw, "attn"), cfg.heads, valid=valid,
                          fusion=cfg.fusion, p=bits, dropout=cfg.dropout, rng=rng,
                          capture=capture)
        k = tape.layer_norm(tape.add(x, tape.dropout(ctx, cfg.dropout, rng)),
                            lw["ln1.g"], lw["ln1.b"], cfg.ln_eps)
        h = ffn(tape, k, lw["ffn.w1"], lw["ffn.b1"], lw["ffn.w2"], lw["ffn.b2"])
        return tape.layer_norm(tape.add(k, tape.dropout(h, cfg.dropout, rng)),
                               lw["ln2.g"], lw["ln2.b"], cfg.ln_eps)

    def encode_t(self, tape, w, src, valid, bits, rng=None, captures=None) -> Node:
        x = tape.dropout(self.embed_t(tape, w, src, "src"), self.config.dropout, rng)
        for i in range(self.config.enc_layers):
            cap = None
            if captures is not None:
                cap = {}
                captures.append(cap)
            x = self.encoder_layer_t(tape, w, i, x, valid, bits, rng, cap)
        return x

    def decode_t(self, tape, w, tgt_in, memory: Node, src_valid, rng=None) -> Node:
        cfg = self.config
        y = tape.dropout(self.embed_t(tape, w, tgt_in, "tgt"), cfg.dropout, rng)
        for i in range(cfg.dec_layers):
            lw = _sub(w, f"dec.{i}")
            a = attention_t(tape, y, y, _sub(lw, "self"), cfg.heads, causal=True,
                            dropout=cfg.dropout, rng=rng)
            y = tape.layer_norm(tape.add(y, tape.dropout(a, cfg.dropout, rng)),
                                lw["ln1.g"], lw["ln1.b"], cfg.ln_eps)
            c = attention_t(tape, y, memory, _sub(lw, "cross"), cfg.heads, valid=src_valid,
                            dropout=cfg.dropout, rng=rng)
            y = tape.layer_norm(tape.add(y, tape.dropout(c, cfg.dropout, rng)),
                                lw["ln2.g"], lw["ln2.b"], cfg.ln_eps)
            h = ffn(tape, y, lw["ffn.w1"], lw["ffn.b1"], lw["ffn.w2"], lw["ffn.b2"])
            y = tape.layer_norm(tape.add(y, tape.dropout(h, cfg.dropout, rng)),
                                lw["ln3.g"], lw["ln3.b"], cfg.ln_eps)
        return tape.add(tape.matmul(y, w["out.w"]), w["out.b"])

    def loss_t(self, tape: Tape, w: dict[str, Node], batch, normalizer: float | None = None,
               rng: np.random.Generator | None = None) -> tuple[Node, int]:
        """Summed target NLL divided by ``normalizer`` (default: this batch's token count)."""
        memory = self.encode_t(tape, w, batch.src, batch.src_valid, batch.bits, rng)
        logits = self.decode_t(tape, w, batch.tgt_in, memory, batch.src_valid, rng)
        total, count = tape.cross_entropy_sum(logits, batch.tgt_out, self.pad,
                                              self.config.label_smoothing)
        if count == 0:
            raise ValueError("all target positions are padding")
        return tape.scale(total, 1.0 / (normalizer or count)), count

    # -- single-sequence inference ---------------------------------------
    def _eval(self) -> tuple[Tape, dict[str, Node]]:
        tape = Tape(record=False)
        return tape, tape.params(self.params)

    def embed(self, tokens: Sequence[int], side: str = "src") -> np.ndarray:
        d = self.config.width
        if len(tokens) == 0:
            return np.zeros((0, d))
        tape, w = self._eval()
        return self.embed_t(tape, w, np.asarray(tokens)[None], side).value[0]

    def encoder_layer(self, x, p=None, layer: int = 0) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.config.width:
            raise ValueError(f"expected (n, {self.config.width}) input, got {x.shape}")
        bits = _as_bits(p, x.shape[0])
        tape, w = self._eval()
        out = self.encoder_layer_t(tape, w, layer, tape.const(x[None]),
                                   np.ones((1, x.shape[0]), dtype=bool), bits[None])
        return out.value[0]

    def encode(self, tokens: Sequence[int], p=None, captures: list | None = None) -> np.ndarray:
        n = len(tokens)
        if n == 0:
            raise ValueError("empty source sequence")
        if n > self.config.max_src_tokens:
            raise ValueError(f"source has {n} tokens, limit is {self.config.max_src_tokens}")
        bits = _as_bits(p, n)
        tape, w = self._eval()
        mem = self.encode_t(tape, w, np.asarray(tokens)[None], np.ones((1, n), dtype=bool),
                            bits[None], captures=captures)
        return mem.value[0]

    def _next_logits(self, prefixes: np.ndarray, memory: np.ndarray) -> np.ndarray:
        tape, w = self._eval()
        k = prefixes.shape[0]
        mem = tape.const(np.broadcast_to(memory, (k,) + memory.shape))
        valid = np.ones((k, memory.shape[0]), dtype=bool)
        return self.decode_t(tape, w, prefixes, mem, valid).value[:, -1]

    def decode_step(self, prefix: Sequence[int], memory: np.ndarray) -> np.ndarray:
        """Logits for the token following ``prefix`` (which starts with BOS)."""
        if len(prefix) == 0:
            raise ValueError("prefix must contain at least the begin token")
        if len(prefix) > self.config.max_gen:
            raise ValueError(f"prefix of length {len(prefix)} exceeds max_gen={self.config.max_gen}")
        return self._next_logits(np.asarray(prefix)[None], memory)[0]

    def generate(self, tokens: Sequence[int], p=None, beam: int = 1) -> list[int]:
        """Beam search (greedy when ``beam == 1``) under the min/max length limits.

        Returns generated ids without the begin and end tokens.  Finished
        hypotheses are ranked by log-probability divided by length.
        """
        if beam < 1:
            raise ValueError("beam must be >= 1")
        cfg = self.config
        memory = self.encode(tokens, p)
        alive: list[tuple[list[int], float]] = [([self.bos], 0.0)]
        finished: list[tuple[list[int], float]] = []
        for step in range(cfg.max_gen):
            logits = self._next_logits(np.array([seq for seq, _ in alive]), memory)
            logp = logits - logits.max(axis=-1, keepdims=True)
            logp = logp - np.log(np.exp(logp).sum(axis=-1, keepdims=True))
            if step < cfg.min_gen:
                logp[:, self.eos] = -np.inf
            cands = []
            for i, (_, score) in enumerate(alive):
                for tok in np.argsort(-logp[i], kind="stable")[:beam]:
                    cands.append((score + float(logp[i, tok]), i, int(tok)))
            cands.sort(key=lambda c: -c[0])
            nxt = []
            for score, i, tok in cands:
                seq = alive[i][0] + [tok]
                if tok == self.eos:
                    finished.append((seq, score))
                else:
                    nxt.append((seq, score))
                if len(nxt) == beam:
                    break
            alive = nxt
            if not alive or len(finished) >= beam:
                break
        else:
            # max_gen reached: unfinished hypotheses are cut here
            finished.extend(alive)
        best, _ = max(finished, key=lambda h: h[1] / (len(h[0]) - 1))
        return [t for t in best[1:] if t != self.eos]
