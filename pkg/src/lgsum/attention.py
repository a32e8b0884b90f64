"""Multi-head scaled dot-product attention with dependency-matrix fusion.

Weights use the row-vector convention: a width-``d`` input row ``x`` is
projected as ``x @ wq`` and columns ``h*d_head:(h+1)*d_head`` of ``wq`` form
head ``h``.  The public functions below work on plain arrays for a single
sequence; the ``*_t`` tape variants are the batched forms the model uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import Node, Tape

FUSION_MODES = ("none", "soft", "direct", "gaussian")


@dataclass(frozen=True)
class FusionSpec:
    """How the dependency matrix is merged into attention probabilities.

    soft:     (weight * P + 1) * att, or (weight * P + I) * att when
              ``identity_literal`` is set
    direct:   weight * P + att
    gaussian: (1 - att * P)**2 / weight + att
    """

    mode: str = "soft"
    weight: float = 1.0
    identity_literal: bool = False
    renormalize: bool = False

    def __post_init__(self):
        if self.mode not in FUSION_MODES:
            raise ValueError(f"unknown fusion mode {self.mode!r}; expected one of {FUSION_MODES}")
        if self.mode in ("direct", "gaussian") and not self.weight > 0:
            raise ValueError(f"{self.mode} fusion needs a positive weight")
        if self.mode == "soft" and not self.weight >= 0:
            raise ValueError("soft fusion weight (alpha) must be non-negative")

    @property
    def label(self) -> str:
        if self.mode == "none":
            return "none"
        if self.mode == "soft":
            return f"alpha={self.weight:g}"
        return f"{'P' if self.mode == 'direct' else 'G'}{self.weight:g}"

    @classmethod
    def soft(cls, alpha: float, **kw) -> "FusionSpec":
        return cls("soft", alpha, **kw)

    @classmethod
    def direct(cls, weight: float = 0.25, **kw) -> "FusionSpec":
        return cls("direct", weight, **kw)

    @classmethod
    def gaussian(cls, weight: float, **kw) -> "FusionSpec":
        return cls("gaussian", weight, **kw)


@dataclass
class AttentionHeads:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    z: int

    def __post_init__(self):
        d = self.wq.shape[0]
        if d % self.z:
            raise ValueError(f"width {d} is not divisible by {self.z} heads")
        for w in (self.wq, self.wk, self.wv, self.wo):
            if w.shape != (d, d):
                raise ValueError(f"projection shape {w.shape}, expected {(d, d)}")
            if not np.isfinite(w).all():
                raise ValueError("non-finite projection weights")

    @property
    def width(self) -> int:
        return self.wq.shape[0]

    @property
    def d_head(self) -> int:
        return self.width // self.z

    @classmethod
    def from_heads(cls, wq_heads, wk_heads, wv_heads, wo: np.ndarray) -> "AttentionHeads":
        """Build from per-head (width, d_head) blocks."""
        return cls(np.concatenate(wq_heads, axis=1), np.concatenate(wk_heads, axis=1),
                   np.concatenate(wv_heads, axis=1), wo, len(wq_heads))


# ---------------------------------------------------------------------------
# Tape forms (batched: x is (B, n, d), per-head tensors are (B, z, n, d_head))
# ---------------------------------------------------------------------------

def split_heads_t(tape: Tape, x: Node, z: int) -> Node:
    b, n, d = x.shape
    return tape.transpose(tape.reshape(x, (b, n, z, d // z)), (0, 2, 1, 3))


def merge_heads_t(tape: Tape, x: Node) -> Node:
    b, z, n, dh = x.shape
    return tape.reshape(tape.transpose(x, (0, 2, 1, 3)), (b, n, z * dh))


def scores_t(tape: Tape, q: Node, k: Node, valid: np.ndarray | None,
             causal: bool = False) -> Node:
    """softmax(q k^T / sqrt(d_head)) with invalid keys (and future keys) masked."""
    d_head = q.shape[-1]
    s = tape.scale(tape.matmul(q, tape.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(d_head))
    mask = None
    if valid is not None:
        mask = np.asarray(valid, dtype=bool)[:, None, None, :]
    if causal:
        n_q, n_k = q.shape[2], k.shape[2]
        tri = np.tril(np.ones((n_q, n_k), dtype=bool))[None, None]
        mask = tri if mask is None else mask & tri
    return tape.softmax(s, mask)


def fuse_t(tape: Tape, att: Node, p: np.ndarray | None, spec: FusionSpec,
           valid: np.ndarray | None = None) -> Node:
    """Merge a dependency matrix ``p`` into attention ``att``.

    ``p`` broadcasts against ``att``'s trailing (n, n); one matrix serves
    every head.  Keys marked invalid get zero mass in every mode.
    """
    if spec.mode == "none" or p is None:
        return att
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-2:] != att.shape[-2:]:
        raise ValueError(f"dependency matrix {p.shape[-2:]} does not match attention {att.shape[-2:]}")
    w = float(spec.weight)
    if spec.mode == "soft":
        ones = np.eye(p.shape[-1]) if spec.identity_literal else 1.0
        out = tape.mul(att, tape.const(w * p + ones))
    elif spec.mode == "direct":
        out = tape.add(att, tape.const(w * p))
    else:
        gap = tape.affine(tape.mul(att, tape.const(p)), -1.0, 1.0)
        out = tape.add(tape.scale(tape.square(gap), 1.0 / w), att)
    if valid is not None and spec.mode != "soft":
        # additive modes put mass on padded keys
        keep = np.asarray(valid, dtype=np.float64)[:, None, None, :]
        out = tape.mul(out, tape.const(keep))
    if spec.renormalize:
        out = tape.normalize_last(out)
    return out


def attention_t(tape: Tape, xq: Node, xkv: Node, w: dict[str, Node], z: int,
                valid: np.ndarray | None = None, causal: bool = False,
                fusion: FusionSpec | None = None, p: np.ndarray | None = None,
                dropout: float = 0.0, rng: np.random.Generator | None = None,
                capture: dict | None = None) -> Node:
    """Full block: projections, attention, optional fusion, context, output projection."""
    q = split_heads_t(tape, tape.matmul(xq, w["wq"]), z)
    k = split_heads_t(tape, tape.matmul(xkv, w["wk"]), z)
    v = split_heads_t(tape, tape.matmul(xkv, w["wv"]), z)
    att = scores_t(tape, q, k, valid, causal)
    if capture is not None:
        capture["base"] = att.value
    att = tape.dropout(att, dropout, rng)
    if fusion is not None:
        pb = None if p is None else np.asarray(p, dtype=np.float64)[:, None]
        att = fuse_t(tape, att, pb, fusion, valid)
    if capture is not None:
        capture["fused"] = att.value
    ctx = merge_heads_t(tape, tape.matmul(att, v))
    return tape.matmul(ctx, w["wo"])


# ---------------------------------------------------------------------------
# Single-sequence array API
# ---------------------------------------------------------------------------

def _eval() -> Tape:
    return Tape(record=False)


def project_qkv(x, heads: AttentionHeads) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-head q, k, v of shape (z, n, d_head) for a (n, width) input."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("x must be a non-empty (n, width) array")
    if x.shape[1] != heads.width:
        raise ValueError(f"input width {x.shape[1]} != attention width {heads.width}")
    t = _eval()
    xb = t.const(x[None])
    out = []
    for w in (heads.wq, heads.wk, heads.wv):
        out.append(split_heads_t(t, t.matmul(xb, t.const(w)), heads.z).value[0])
    return tuple(out)


def base_attention(q, k, valid=None) -> np.ndarray:
    """Row-stochastic (z, n, n) attention; ``valid`` is False at padded keys."""
    q, k = np.asarray(q, dtype=np.float64), np.asarray(k, dtype=np.float64)
    if q.shape != k.shape:
        raise ValueError(f"q {q.shape} and k {k.shape} differ")
    t = _eval()
    v = None if valid is None else np.asarray(valid, dtype=bool)[None]
    return scores_t(t, t.const(q[None]), t.const(k[None]), v).value[0]


def apply_fusion(att, p, spec: FusionSpec, valid=None) -> np.ndarray:
    """Fuse a dependency matrix into (z, n, n) or (n, n) attention."""
    att = np.asarray(att, dtype=np.float64)
    bits = p.bits if hasattr(p, "bits") else np.asarray(p)
    if bits.shape != att.shape[-2:]:
        raise ValueError(f"dependency matrix {bits.shape} does not match attention {att.shape[-2:]}")
    t = _eval()
    a = att[None] if att.ndim == 3 else att[None, None]
    v = None if valid is None else np.asarray(valid, dtype=bool)[None]
    out = fuse_t(t, t.const(a), bits, spec, v).value
    return out[0] if att.ndim == 3 else out[0, 0]


def lga_context(lgatt, v, heads: AttentionHeads | None = None) -> np.ndarray:
    """Context rows: per-head weighted sums of v, concatenated, then projected.

    Without ``heads`` the concatenated pre-projection context is returned.
    """
    lgatt, v = np.asarray(lgatt, dtype=np.float64), np.asarray(v, dtype=np.float64)
    if lgatt.shape[:2] != v.shape[:2] or lgatt.shape[2] != v.shape[1]:
        raise ValueError(f"attention {lgatt.shape} incompatible with values {v.shape}")
    t = _eval()
    ctx = merge_heads_t(t, t.matmul(t.const(lgatt[None]), t.const(v[None])))
    if heads is not None:
        if ctx.shape[-1] != heads.width:
            raise ValueError("context width does not match the output projection")
        ctx = t.matmul(ctx, t.const(heads.wo))
    return ctx.value[0]
