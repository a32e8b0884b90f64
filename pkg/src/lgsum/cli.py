"""Command-line entry point: ``lgsum <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .checkpoint import load_checkpoint
from .conllu import read_conllu
from .depmatrix import assemble_sequence_matrix, save_matrix
from .model import Vocabulary
from .pipeline.config import build_configs, load_config_file, resolve
from .pipeline.corpus import build_vocab, load_corpus
from .pipeline.experiments import alpha_sweep, export_attention_map, fusion_compare
from .pipeline.training import evaluate, summarize, train, with_generation


def _shared() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--data", help="records: documents joined by ||||| <TAB> summary")
    p.add_argument("--parses", help="CoNLL-U file, one # newdoc block per document")
    p.add_argument("--out", help="output file or directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="key=value settings file")
    p.add_argument("--fusion-mode", choices=["none", "soft", "direct", "gaussian"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--fusion-weight", type=float)
    p.add_argument("--renormalize", action="store_true", default=None)
    p.add_argument("--identity-literal", action="store_true", default=None)
    p.add_argument("--beam", type=int)
    p.add_argument("--min-gen", type=int)
    p.add_argument("--max-gen", type=int)
    p.add_argument("--checkpoint")
    p.add_argument("--vocab", help="vocabulary file from build-vocab")
    p.add_argument("--max-steps", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lgsum", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    shared = _shared()
    for name, help_ in [
        ("build-vocab", "build the word vocabulary from a corpus"),
        ("train", "train a model; writes checkpoint.bin, metrics.tsv, vocab.txt"),
        ("generate", "generate summaries, one per line"),
        ("evaluate", "generate and score with ROUGE-1/2/L, CSV output"),
        ("alpha-sweep", "train and score one model per soft-fusion alpha"),
        ("fusion-compare", "train and score direct, gaussian and soft fusion"),
        ("export-attn", "export an encoder attention map and the dependency matrix"),
        ("build-depmat", "write DEPMAT v1 files for every document in a CoNLL-U file"),
    ]:
        sp = sub.add_parser(name, parents=[shared], help=help_)
        if name == "alpha-sweep":
            sp.add_argument("--alphas", default="0,1,2,3")
        if name == "export-attn":
            sp.add_argument("--example", type=int, default=0)
            sp.add_argument("--layer", type=int, default=0)
            sp.add_argument("--head", default="0", help="head index or 'mean'")
            sp.add_argument("--stage", choices=["base", "fused"], default="fused")
        if name == "build-vocab":
            sp.add_argument("--min-freq", type=int)
    return parser


def _settings(args) -> dict:
    file_layer = load_config_file(args.config) if args.config else {}
    flags = {"seed": args.seed, "fusion_mode": args.fusion_mode, "alpha": args.alpha,
             "fusion_weight": args.fusion_weight, "renormalize": args.renormalize,
             "identity_literal": args.identity_literal, "beam": args.beam,
             "min_gen": args.min_gen, "max_gen": args.max_gen, "max_steps": args.max_steps}
    if getattr(args, "min_freq", None) is not None:
        flags["min_freq"] = args.min_freq
    return resolve(file_layer, flags)


def _need(args, *names):
    for n in names:
        if getattr(args, n) is None:
            raise ValueError(f"--{n.replace('_', '-')} is required")


def _corpus(args):
    _need(args, "data", "parses")
    return load_corpus(args.data, args.parses)


def run(args) -> None:
    s = _settings(args)
    cmd = args.command
    if cmd == "build-depmat":
        _need(args, "parses", "out")
        os.makedirs(args.out, exist_ok=True)
        for k, doc in enumerate(read_conllu(args.parses)):
            if not doc.sentences:
                continue
            m = assemble_sequence_matrix(doc.sentences)
            save_matrix(m, os.path.join(args.out, f"{k:04d}_{doc.doc_id}.depmat"))
        return
    if cmd == "build-vocab":
        _need(args, "out")
        build_vocab(_corpus(args), s["min_freq"]).save(args.out)
        return

    model_config, train_config = build_configs(s)
    if cmd == "train":
        _need(args, "out")
        vocab = Vocabulary.load(args.vocab) if args.vocab else None
        result = train(_corpus(args), model_config, train_config, out_dir=args.out, vocab=vocab)
        print(f"final loss {result.final_loss:.6f} after {len(result.log)} steps")
    elif cmd in ("generate", "evaluate", "export-attn"):
        _need(args, "checkpoint")
        model, vocab = load_checkpoint(args.checkpoint)
        corpus = _corpus(args)
        if cmd == "generate":
            model = with_generation(model, args.min_gen, args.max_gen)
            lines = [summarize(model, vocab, ex, s["beam"]) for ex in corpus]
            text = "\n".join(lines) + "\n"
            if args.out:
                with open(args.out, "w", encoding="utf-8") as f:
                    f.write(text)
            else:
                sys.stdout.write(text)
        elif cmd == "evaluate":
            res = evaluate(model, vocab, corpus, s["beam"], args.min_gen, args.max_gen, args.out)
            if not args.out:
                sys.stdout.write(res.to_csv())
        else:
            if not 0 <= args.example < len(corpus):
                raise ValueError(f"example {args.example} out of range ({len(corpus)} examples)")
            head = "mean" if args.head == "mean" else int(args.head)
            paths = export_attention_map((model, vocab), corpus[args.example], args.layer,
                                         head, args.stage, args.out or "attn")
            for p in paths.values():
                print(p)
    elif cmd == "alpha-sweep":
        alphas = [float(a) for a in args.alphas.split(",") if a.strip()]
        alpha_sweep(_corpus(args), model_config, train_config, alphas, s["beam"], args.out)
    elif cmd == "fusion-compare":
        fusion_compare(_corpus(args), model_config, train_config, beam=s["beam"],
                       out_path=args.out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"lgsum {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
