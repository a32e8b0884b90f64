"""Flat ``key=value`` settings mapped onto ModelConfig and TrainConfig.

Later sources override earlier ones: defaults, then a config file, then
command-line flags.  Full-size values (batch 13000 tokens, 8000 warmup
steps) are reachable by setting ``batch_tokens`` and ``warmup_steps``.
"""

from __future__ import annotations

from ..attention import FusionSpec
from ..model import ModelConfig
from ..numerics import LrSchedule
from .training import TrainConfig

DEFAULTS: dict[str, object] = {
    # model
    "width": 64, "heads": 8, "enc_layers": 4, "dec_layers": 4, "ffn_width": 256,
    "dropout": 0.1, "max_src_tokens": 512, "max_tgt_tokens": 400,
    "min_gen": 20, "max_gen": 250, "label_smoothing": 0.0,
    "share_embeddings": False, "ln_eps": 1e-5,
    # fusion
    "fusion_mode": "soft", "alpha": 1.0, "fusion_weight": 0.25,
    "identity_literal": False, "renormalize": False,
    # training
    "batch_tokens": 2000, "accum_steps": 4, "max_steps": 1000, "seed": 0,
    "base_lr": 1e-3, "warmup_steps": 8000, "milestones": "", "checkpoint_every": 0,
    "min_freq": 1,
    # generation
    "beam": 1,
}


def _coerce(key: str, raw) -> object:
    if key not in DEFAULTS:
        raise KeyError(f"unknown setting {key!r}")
    kind = type(DEFAULTS[key])
    if not isinstance(raw, str):
        return kind(raw)
    if kind is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    return kind(raw.strip())


def parse_config_text(text: str) -> dict[str, object]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise ValueError(f"config line {lineno}: expected key=value")
        key = key.strip().replace("-", "_")
        try:
            out[key] = _coerce(key, value)
        except (KeyError, ValueError) as exc:
            raise ValueError(f"config line {lineno}: {exc}") from None
    return out


def load_config_file(path) -> dict[str, object]:
    with open(path, encoding="utf-8") as f:
        return parse_config_text(f.read())


def parse_milestones(text: str) -> list[tuple[int, float]]:
    """``"1000:0.5,2000:0.5"`` -> [(1000, 0.5), (2000, 0.5)]."""
    out = []
    for item in filter(None, (s.strip() for s in text.split(","))):
        step, _, factor = item.partition(":")
        out.append((int(step), float(factor)))
    return out


def resolve(*layers: dict) -> dict[str, object]:
    settings = dict(DEFAULTS)
    for layer in layers:
        for k, v in layer.items():
            if v is not None:
                settings[k] = _coerce(k, v)
    return settings


def fusion_from(s: dict) -> FusionSpec:
    mode = s["fusion_mode"]
    weight = s["alpha"] if mode == "soft" else s["fusion_weight"]
    return FusionSpec(mode, float(weight), bool(s["identity_literal"]), bool(s["renormalize"]))


def build_configs(s: dict) -> tuple[ModelConfig, TrainConfig]:
    model = ModelConfig(
        width=s["width"], heads=s["heads"], enc_layers=s["enc_layers"],
        dec_layers=s["dec_layers"], ffn_width=s["ffn_width"], dropout=s["dropout"],
        fusion=fusion_from(s), max_src_tokens=s["max_src_tokens"],
        max_tgt_tokens=s["max_tgt_tokens"], min_gen=s["min_gen"], max_gen=s["max_gen"],
        label_smoothing=s["label_smoothing"], share_embeddings=s["share_embeddings"],
        ln_eps=s["ln_eps"])
    schedule = LrSchedule(s["base_lr"], s["warmup_steps"], parse_milestones(s["milestones"]))
    train = TrainConfig(batch_tokens=s["batch_tokens"], accum_steps=s["accum_steps"],
                        max_steps=s["max_steps"], seed=s["seed"], schedule=schedule,
                        checkpoint_every=s["checkpoint_every"], min_freq=s["min_freq"])
    return model.validate(), train.validate()
