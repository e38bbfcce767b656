"""Context-aware review helpfulness regression on a small numpy autodiff engine."""

from .data import LabeledExample, RawReview, admit, label, load_annotated, parse_reviews, split
from .evaluation import EvalReport, compare_variants, cross_domain, evaluate, pearson, spearman
from .model import (HelpfulnessModel, ModelConfig, conv_encode, embed_with_position, load_checkpoint,
                    positional_encoding, predict, save_checkpoint, self_attention, train_epoch)
from .tensor import Tensor, backward, rng_stream
from .text import Vocabulary, build_vocab, encode, load_pretrained, tokenize

__version__ = "0.1.0"
