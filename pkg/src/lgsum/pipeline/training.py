"""Training with gradient accumulation, and ROUGE evaluation of generated summaries."""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np

from ..checkpoint import save_checkpoint
from ..model import ModelConfig, Transformer, Vocabulary
from ..numerics import AdamState, LrSchedule, Tape, adam_step, lr_at_step
from ..rouge import VARIANTS, corpus_rouge, score_pair, tokenize
from .corpus import Batch, CorpusExample, Encoded, build_vocab, make_batches, preprocess

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_tokens: int = 2000
    accum_steps: int = 4
    max_steps: int = 1000
    seed: int = 0
    schedule: LrSchedule = field(default_factory=LrSchedule)
    checkpoint_every: int = 0
    min_freq: int = 1

    def validate(self) -> "TrainConfig":
        if self.accum_steps < 1:
            raise ValueError("accum_steps must be >= 1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        return self


class Trainer:
    """Accumulates microbatch gradients and applies one Adam update per window."""

    def __init__(self, model: Transformer, config: TrainConfig):
        self.model = model
        self.config = config.validate()
        self.state = AdamState()
        self.rng = np.random.default_rng([config.seed, 1])
        self.grads: dict[str, np.ndarray] | None = None

    def accumulate(self, batch: Batch, normalizer: float) -> float:
        tape = Tape()
        w = tape.params(self.model.params)
        loss, _ = self.model.loss_t(tape, w, batch, normalizer, self.rng)
        grads = tape.backward(loss)
        if self.grads is None:
            self.grads = grads
        else:
            for k, g in grads.items():
                self.grads[k] += g
        return float(loss.value)

    def update(self) -> float:
        lr = lr_at_step(self.config.schedule, self.state.step + 1)
        if self.grads is not None:
            adam_step(self.model.params, self.grads, self.state, lr)
        self.grads = None
        return lr

    def step(self, window: Sequence[Batch]) -> tuple[float, float]:
        """One optimizer step over ``window``; loss is per target token of the window."""
        normalizer = sum(b.ntokens for b in window)
        loss = sum(self.accumulate(b, normalizer) for b in window)
        if not math.isfinite(loss):
            ids = [i for b in window for i in b.ids]
            raise TrainingError(f"non-finite loss at step {self.state.step + 1} (examples {ids})")
        return self.update(), loss


def batch_stream(encoded: Sequence[Encoded], config: TrainConfig, pad: int = 0) -> Iterator[Batch]:
    epoch = 0
    while True:
        yield from make_batches(encoded, config.batch_tokens, config.seed + epoch, pad)
        epoch += 1


@dataclass
class TrainResult:
    model: Transformer
    vocab: Vocabulary
    log: list[tuple[int, float, float]]

    @property
    def final_loss(self) -> float:
        return self.log[-1][2]

    def metrics_tsv(self) -> str:
        return "".join(f"{s}\t{lr!r}\t{loss!r}\n" for s, lr, loss in self.log)


def train(corpus: Sequence[CorpusExample], model_config: ModelConfig, train_config: TrainConfig,
          out_dir=None, vocab: Vocabulary | None = None) -> TrainResult:
    if not corpus:
        raise ValueError("cannot train on an empty corpus")
    train_config.validate()
    vocab = vocab or build_vocab(corpus, train_config.min_freq)
    config = replace(model_config, vocab_size=len(vocab))
    model = Transformer(config, seed=train_config.seed)
    encoded = [preprocess(ex, vocab, config) for ex in corpus]
    trainer = Trainer(model, train_config)
    stream = batch_stream(encoded, train_config, vocab.pad)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)

    history = []
    for step in range(1, train_config.max_steps + 1):
        window = [next(stream) for _ in range(train_config.accum_steps)]
        lr, loss = trainer.step(window)
        history.append((step, lr, loss))
        log.debug("step %d lr %.3g loss %.4f", step, lr, loss)
        every = train_config.checkpoint_every
        if out_dir is not None and every and step % every == 0 and step < train_config.max_steps:
            save_checkpoint(os.path.join(out_dir, f"checkpoint-{step}.bin"), model, vocab)

    result = TrainResult(model, vocab, history)
    if out_dir is not None:
        save_checkpoint(os.path.join(out_dir, "checkpoint.bin"), model, vocab)
        vocab.save(os.path.join(out_dir, "vocab.txt"))
        with open(os.path.join(out_dir, "metrics.tsv"), "w", encoding="utf-8") as f:
            f.write(result.metrics_tsv())
    return result


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def with_generation(model: Transformer, min_gen: int | None = None,
                    max_gen: int | None = None) -> Transformer:
    """Same parameters, different length limits."""
    cfg = model.config
    cfg = replace(cfg, min_gen=cfg.min_gen if min_gen is None else min_gen,
                  max_gen=cfg.max_gen if max_gen is None else max_gen)
    return Transformer(cfg, model.params, vocab_specials=(model.pad, model.bos, model.eos))


def summarize(model: Transformer, vocab: Vocabulary, example: CorpusExample, beam: int = 1) -> str:
    enc = preprocess(example, vocab, model.config)
    return " ".join(vocab.decode(model.generate(enc.src, enc.dep, beam)))


class EvalResult:
    """Per-example and mean ROUGE for a set of generated summaries."""

    def __init__(self, ids: list[int], summaries: list[list[str]], references: list[list[str]]):
        self.ids = ids
        self.summaries = summaries
        self.references = references
        self.scores = [score_pair(c, r) for c, r in zip(summaries, references)]
        self.means = corpus_rouge(zip(summaries, references))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["example"] + [f"{v}_{m}" for v in VARIANTS for m in ("p", "r", "f")])

        def cells(scores):
            return [repr(x) for v in VARIANTS
                    for x in (scores[v].precision, scores[v].recall, scores[v].f1)]

        for ex_id, scores in zip(self.ids, self.scores):
            w.writerow([ex_id] + cells(scores))
        w.writerow(["mean"] + cells(self.means))
        return buf.getvalue()


def evaluate(model: Transformer, vocab: Vocabulary, corpus: Sequence[CorpusExample],
             beam: int = 1, min_gen: int | None = None, max_gen: int | None = None,
             out_path=None) -> EvalResult:
    if model.config.vocab_size != len(vocab):
        raise ValueError("checkpoint vocabulary does not match the model")
    model = with_generation(model, min_gen, max_gen)
    cands = [summarize(model, vocab, ex, beam).split() for ex in corpus]
    result = EvalResult([ex.example_id for ex in corpus], cands,
                        [tokenize(ex.summary) for ex in corpus])
    if out_path is not None:
        with open(out_path, "w", encoding="utf-8") as f:
            f.write(result.to_csv())
    return result
