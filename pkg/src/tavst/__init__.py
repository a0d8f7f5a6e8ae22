"""Topic-aware visual storytelling at desk scale.

Two communicating agents: a topic-description generator and a story
generator fused through co-attention, refined by iterative message passing,
trained with MLE plus policy-gradient fine-tuning, and evaluated with
caption metrics and lexicon sentiment tooling. All gradients are
hand-written and certified by finite differences.
"""

from .data import Album, Corpus, Vocabulary, load_corpus, synth_corpus, tokenize
from .gradcheck import grad_check
from .metrics import EvalPair, MetricReport, bleu, cider_d, meteor_lite, rouge_l, score_corpus
from .params import ModelDims, ModelParams, init_params
from .sentiment import Lexicon, in_story_divergence, sentence_score
from .tensor import Precision, Tensor
from .trainer import TrainConfig, forward_pass, generate_album, train

__all__ = [
    "Album", "Corpus", "EvalPair", "Lexicon", "MetricReport", "ModelDims",
    "ModelParams", "Precision", "Tensor", "TrainConfig", "Vocabulary",
    "bleu", "cider_d", "forward_pass", "generate_album", "grad_check",
    "in_story_divergence", "init_params", "load_corpus", "meteor_lite",
    "rouge_l", "score_corpus", "sentence_score", "synth_corpus", "tokenize",
    "train",
]
