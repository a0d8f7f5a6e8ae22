"""Story decoder: one sub-story sentence per image.

Every decoding step feeds the concatenation of the previous word embedding
and the image's joint context vector into a shared GRU; the initial hidden
state is tanh(W_init j_i). Teacher forcing sums per-step cross-entropies;
sampling records the per-step negative log-likelihood nodes needed for the
policy-gradient loss. Beam search keeps the top hypotheses by summed
log-probability with no length normalization; ties break toward shorter,
then lexicographically smaller, token sequences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .coattn import JointContext
from .data import BOS, EOS
from .params import ModelParams
from .tensor import (Tensor, add_n, concat, cross_entropy, linear,
                     log_softmax_values, no_grad, row, stack_rows, tanh)
from .visual import gru_cell

MAX_STORY_LEN = 25


@dataclass
class SubstoryResult:
    tokens: list[int]
    step_nll: list[Tensor]       # per-step -log p(emitted token), graph scalars
    step_logprobs: list[float]   # detached log p per emitted token
    last_hidden: Tensor
    loss: Tensor | None = None   # summed cross-entropy when teacher-forced


@dataclass
class StoryOutput:
    sub_stories: list[list[int]]
    last_hidden_rows: list[Tensor]
    s_iter: Tensor                      # (N, H) last hidden state per image
    step_logprobs: list[list[float]]
    step_nll: list[list[Tensor]]
    mle_loss: Tensor | None = None


@dataclass
class BeamHypothesis:
    tokens: list[int] = field(default_factory=list)
    logprob: float = 0.0
    hidden: Tensor | None = None
    finished: bool = False


def _decoder_step(prev_token: int, hidden: Tensor, j_i: Tensor,
                  params: ModelParams, gru_w) -> tuple[Tensor, Tensor]:
    inp = concat([row(params["story.embed"], prev_token), j_i])
    h = gru_cell(inp, hidden, gru_w)
    logits = linear(params["story.w_out"], h, params["story.b_out"])
    return h, logits


def decode_substory(j_i: Tensor, params: ModelParams,
                    mode: Literal["teacher_forced", "greedy", "sample"],
                    target: list[int] | None = None,
                    rng: np.random.Generator | None = None,
                    max_len: int = MAX_STORY_LEN) -> SubstoryResult:
    gru_w = params.gru("story.gru")
    h = tanh(linear(params["story.w_init"], j_i))

    if mode == "teacher_forced":
        if target is None or len(target) < 2:
            raise ValueError("decode_substory: empty target in teacher-forced mode")
        step_nll = []
        logprobs = []
        for t in range(1, len(target)):
            h, logits = _decoder_step(target[t - 1], h, j_i, params, gru_w)
            nll = cross_entropy(logits, target[t])
            step_nll.append(nll)
            logprobs.append(-nll.item())
        loss = add_n(step_nll)
        return SubstoryResult(tokens=list(target[1:]), step_nll=step_nll,
                              step_logprobs=logprobs, last_hidden=h, loss=loss)

    if mode == "sample" and rng is None:
        raise ValueError("decode_substory: sample mode needs an rng")
    tokens: list[int] = []
    step_nll = []
    logprobs = []
    prev = BOS
    for _ in range(max_len):
        h, logits = _decoder_step(prev, h, j_i, params, gru_w)
        if mode == "greedy":
            tok = int(np.argmax(logits.data))
        else:
            p = np.exp(log_softmax_values(logits.data))
            tok = int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))
            tok = min(tok, len(p) - 1)
        nll = cross_entropy(logits, tok)
        tokens.append(tok)
        step_nll.append(nll)
        logprobs.append(-nll.item())
        prev = tok
        if tok == EOS:
            break
    return SubstoryResult(tokens=tokens, step_nll=step_nll,
                          step_logprobs=logprobs, last_hidden=h, loss=None)


def decode_story(joint: JointContext, params: ModelParams,
                 mode: Literal["teacher_forced", "greedy", "sample"],
                 targets: list[list[int]] | None = None,
                 rng: np.random.Generator | None = None,
                 max_len: int = MAX_STORY_LEN) -> StoryOutput:
    """Decode all N sub-stories with the shared decoder weights."""
    n = len(joint.rows)
    if mode == "teacher_forced":
        if targets is None or len(targets) != n:
            raise ValueError(
                f"decode_story: need {n} teacher-forcing targets, got "
                f"{0 if targets is None else len(targets)}"
            )
    subs = []
    for i in range(n):
        subs.append(decode_substory(
            joint.rows[i], params, mode,
            target=targets[i] if targets is not None else None,
            rng=rng, max_len=max_len,
        ))
    mle = add_n([s.loss for s in subs]) if mode == "teacher_forced" else None
    return StoryOutput(
        sub_stories=[s.tokens for s in subs],
        last_hidden_rows=[s.last_hidden for s in subs],
        s_iter=stack_rows([s.last_hidden for s in subs]),
        step_logprobs=[s.step_logprobs for s in subs],
        step_nll=[s.step_nll for s in subs],
        mle_loss=mle,
    )


def _hyp_order(h: BeamHypothesis):
    # best first: higher logprob, then shorter, then lexicographically smaller
    return (-h.logprob, len(h.tokens), h.tokens)


def beam_search(j_i: Tensor, params: ModelParams, beam_size: int = 3,
                max_len: int = MAX_STORY_LEN) -> BeamHypothesis:
    """Length-wise beam expansion over summed log-probabilities.

    At each step every live hypothesis expands over the whole vocabulary and
    the top beam_size expansions survive; those ending in EOS are frozen as
    finished. Scores are raw log-probability sums (no length normalization).
    """
    if beam_size < 1:
        raise ValueError(f"beam_search: beam_size must be >= 1, got {beam_size}")
    gru_w = params.gru("story.gru")
    with no_grad():
        h0 = tanh(linear(params["story.w_init"], j_i))
        live = [BeamHypothesis(tokens=[], logprob=0.0, hidden=h0)]
        finished: list[BeamHypothesis] = []
        for _ in range(max_len):
            candidates = []
            for hyp in live:
                prev = hyp.tokens[-1] if hyp.tokens else BOS
                h, logits = _decoder_step(prev, hyp.hidden, j_i, params, gru_w)
                lsm = log_softmax_values(logits.data)
                for tok in range(len(lsm)):
                    candidates.append(BeamHypothesis(
                        tokens=hyp.tokens + [tok],
                        logprob=hyp.logprob + float(lsm[tok]),
                        hidden=h,
                        finished=tok == EOS,
                    ))
            candidates.sort(key=_hyp_order)
            live = []
            for cand in candidates[:beam_size]:
                if cand.finished:
                    finished.append(cand)
                else:
                    live.append(cand)
            if not live:
                break
        for hyp in live:
            hyp.finished = True
            finished.append(hyp)
    return min(finished, key=_hyp_order)
