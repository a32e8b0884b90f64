"""Checkpoint files: text header (config, vocabulary, parameter table) + raw float64 data."""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .model import ModelConfig, Transformer, Vocabulary, init_params

MAGIC = "LGSUM-CHECKPOINT v1"


class CheckpointError(ValueError):
    pass


def _digest(config_json: str, tokens: list[str]) -> str:
    h = hashlib.sha256()
    h.update(config_json.encode("utf-8"))
    h.update(b"\n")
    h.update("\n".join(tokens).encode("utf-8"))
    return h.hexdigest()


def save_checkpoint(path, model: Transformer, vocab: Vocabulary) -> None:
    if model.config.vocab_size != len(vocab):
        raise CheckpointError("model vocab_size does not match the vocabulary")
    config_json = json.dumps(model.config.to_dict(), sort_keys=True)
    lines = [MAGIC, f"config {config_json}", f"hash {_digest(config_json, vocab.tokens)}",
             f"vocab {len(vocab)}", *vocab.tokens, f"params {len(model.params)}"]
    for name, arr in model.params.items():
        lines.append(f"{name} {','.join(map(str, arr.shape))}")
    lines.append("data")
    with open(path, "wb") as f:
        f.write(("\n".join(lines) + "\n").encode("utf-8"))
        for arr in model.params.values():
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[Transformer, Vocabulary]:
    with open(path, "rb") as f:
        raw = f.read()

    pos = 0

    def line() -> str:
        nonlocal pos
        end = raw.find(b"\n", pos)
        if end < 0:
            raise CheckpointError("truncated checkpoint header")
        text = raw[pos:end].decode("utf-8")
        pos = end + 1
        return text

    if line() != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic line)")
    key, _, config_json = line().partition(" ")
    if key != "config":
        raise CheckpointError("missing config line")
    key, _, digest = line().partition(" ")
    key2, _, count = line().partition(" ")
    if key != "hash" or key2 != "vocab":
        raise CheckpointError("malformed checkpoint header")
    tokens = [line() for _ in range(int(count))]
    if _digest(config_json, tokens) != digest:
        raise CheckpointError("config/vocabulary hash mismatch")
    config = ModelConfig.from_dict(json.loads(config_json))
    vocab = Vocabulary(tokens)
    if config.vocab_size != len(vocab):
        raise CheckpointError("vocabulary size does not match config")

    key, _, count = line().partition(" ")
    if key != "params":
        raise CheckpointError("missing parameter table")
    table = []
    for _ in range(int(count)):
        name, _, shape = line().rpartition(" ")
        table.append((name, tuple(int(s) for s in shape.split(",") if s)))
    if line() != "data":
        raise CheckpointError("missing data marker")
    params = {}
    for name, shape in table:
        size = int(np.prod(shape)) * 8
        if pos + size > len(raw):
            raise CheckpointError(f"truncated data for parameter {name}")
        params[name] = np.frombuffer(raw, dtype="<f8", count=size // 8, offset=pos) \
            .astype(np.float64).reshape(shape)
        pos += size
    if pos != len(raw):
        raise CheckpointError("trailing bytes after parameter data")
    layout = {k: v.shape for k, v in init_params(config, np.random.default_rng(0)).items()}
    if layout != {k: v.shape for k, v in params.items()}:
        raise CheckpointError("parameter table does not match the config")
    return Transformer(config, params), vocab
