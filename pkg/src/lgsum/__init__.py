"""Dependency-guided attention for abstractive multi-document summarization."""

from .attention import FusionSpec, apply_fusion
from .conllu import DependencyTree, ParsedDocument, parse_conllu, validate_tree
from .depmatrix import DepMatrix, assemble_sequence_matrix, build_sentence_matrix
from .model import ModelConfig, Transformer, Vocabulary
from .rouge import RougeScore, corpus_rouge, rouge_l, rouge_n

__version__ = "0.1.0"
