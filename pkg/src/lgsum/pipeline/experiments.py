"""Fusion-weight sweep, fusion-method comparison and attention-map export."""

from __future__ import annotations

import csv
import io
from dataclasses import replace
from typing import Sequence

import numpy as np

from ..attention import FusionSpec
from ..checkpoint import load_checkpoint
from ..model import ModelConfig
from .corpus import CorpusExample, preprocess
from .training import TrainConfig, evaluate, train

DEFAULT_COMPARISON = (
    FusionSpec.direct(0.25),
    FusionSpec.gaussian(0.25),
    FusionSpec.gaussian(8.0),
    FusionSpec.soft(3.0),
)

SCORE_COLUMNS = ["rouge1_f", "rouge2_f", "rougeL_f", "final_loss"]


def run_config(corpus: Sequence[CorpusExample], model_config: ModelConfig,
               train_config: TrainConfig, fusion: FusionSpec, beam: int = 1) -> dict:
    """Train with ``fusion`` and score the model on the same corpus."""
    result = train(corpus, replace(model_config, fusion=fusion), train_config)
    scores = evaluate(result.model, result.vocab, corpus, beam=beam).means
    return {"rouge1_f": scores["rouge1"].f1, "rouge2_f": scores["rouge2"].f1,
            "rougeL_f": scores["rougeL"].f1, "final_loss": result.final_loss}


def _table(columns: list[str], rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def _write(path, text: str) -> None:
    if path is not None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)


def alpha_sweep(corpus, model_config: ModelConfig, train_config: TrainConfig,
                alphas: Sequence[float] = (0, 1, 2, 3), beam: int = 1,
                out_path=None) -> list[dict]:
    """One soft-fusion model per alpha; alpha 0 is the plain Transformer."""
    if not alphas:
        raise ValueError("alpha_sweep needs at least one alpha")
    base = model_config.fusion
    rows = []
    for a in alphas:
        spec = FusionSpec.soft(float(a), identity_literal=base.identity_literal,
                               renormalize=base.renormalize)
        rows.append({"alpha": float(a), **run_config(corpus, model_config, train_config, spec, beam)})
    _write(out_path, _table(["alpha"] + SCORE_COLUMNS, rows))
    return rows


def fusion_compare(corpus, model_config: ModelConfig, train_config: TrainConfig,
                   specs: Sequence[FusionSpec] = DEFAULT_COMPARISON, beam: int = 1,
                   out_path=None) -> list[dict]:
    rows = []
    for spec in specs:
        rows.append({"label": spec.label, "mode": spec.mode, "weight": float(spec.weight),
                     **run_config(corpus, model_config, train_config, spec, beam)})
    _write(out_path, _table(["label", "mode", "weight"] + SCORE_COLUMNS, rows))
    return rows


# ---------------------------------------------------------------------------
# Attention maps
# ---------------------------------------------------------------------------

def write_pgm(path, matrix: np.ndarray) -> None:
    """Binary greyscale PGM, values mapped linearly from [min, max] to [0, 255]."""
    m = np.asarray(matrix, dtype=np.float64)
    lo, hi = float(m.min()), float(m.max())
    if hi > lo:
        pixels = np.rint((m - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        pixels = np.zeros(m.shape, dtype=np.uint8)
    rows, cols = m.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read back a PGM written by :func:`write_pgm` (no header comments)."""
    with open(path, "rb") as f:
        if f.readline().strip() != b"P5":
            raise ValueError("not a binary PGM file")
        cols, rows = map(int, f.readline().split())
        f.readline()
        return np.frombuffer(f.read(rows * cols), dtype=np.uint8).reshape(rows, cols)


def export_attention_map(checkpoint, example: CorpusExample, layer: int = 0,
                         head: int | str = 0, stage: str = "fused",
                         out_prefix: str = "attn") -> dict[str, str]:
    """Write the chosen encoder attention matrix (CSV + PGM) and the dependency matrix (CSV).

    ``checkpoint`` is a path or a ``(model, vocab)`` pair; ``head`` is an
    index or ``"mean"`` (average over heads).  Dropout is off.
    """
    model, vocab = checkpoint if isinstance(checkpoint, tuple) else load_checkpoint(checkpoint)
    if stage not in ("base", "fused"):
        raise ValueError(f"stage must be 'base' or 'fused', got {stage!r}")
    cfg = model.config
    if not 0 <= layer < cfg.enc_layers:
        raise ValueError(f"layer {layer} out of range (model has {cfg.enc_layers})")
    if head != "mean" and not (isinstance(head, (int, np.integer)) and 0 <= head < cfg.heads):
        raise ValueError(f"head {head!r} out of range (model has {cfg.heads})")

    enc = preprocess(example, vocab, cfg)
    captures: list[dict] = []
    model.encode(enc.src, enc.dep, captures=captures)
    maps = captures[layer][stage][0]
    matrix = maps.mean(axis=0) if head == "mean" else maps[int(head)]

    paths = {"matrix": f"{out_prefix}.{stage}.csv", "heatmap": f"{out_prefix}.{stage}.pgm",
             "dependency": f"{out_prefix}.dep.csv"}
    np.savetxt(paths["matrix"], matrix, fmt="%.17g", delimiter=",")
    write_pgm(paths["heatmap"], matrix)
    np.savetxt(paths["dependency"], enc.dep.bits, fmt="%d", delimiter=",")
    return paths

