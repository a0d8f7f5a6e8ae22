"""Topic description decoder.

One GRU decoder generates a short topic phrase and records every hidden
state as the topic memory consumed by the story side. It runs in two input
modes that share all decoder weights and differ only in the learned bridge
that maps the seeding matrix (visual contexts, or the story decoder's last
hidden states) to the initial hidden state.

Decoding always takes at least two steps before the end token is allowed,
so the memory has at least two rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .data import BOS, EOS
from .params import ModelParams
from .tensor import (Tensor, add_n, cross_entropy, flatten, linear,
                     log_softmax_values, row, scale, stack_rows,
                     suppress_index, tanh)
from .visual import gru_cell

MIN_TOPIC_STEPS = 2


@dataclass
class TopicInput:
    mode: Literal["initial", "iterative"]
    payload: Tensor  # (N, H): visual contexts, or story last-hidden rows


@dataclass
class TopicMemory:
    rows: list[Tensor]          # M hidden states of (H,)
    matrix: Tensor              # (M, H)
    tokens: list[int]           # emitted / target ids, end token included
    logprobs: list[np.ndarray]  # per-step log-distribution over the topic vocabulary
    loss: Tensor | None = None  # mean step cross-entropy when teacher-forced


def init_state(topic_input: TopicInput, params: ModelParams) -> Tensor:
    """tanh(W_bridge flatten(payload) + b); one bridge per input mode."""
    if topic_input.mode == "initial":
        w, b = params["topic.bridge_init.w"], params["topic.bridge_init.b"]
    elif topic_input.mode == "iterative":
        w, b = params["topic.bridge_iter.w"], params["topic.bridge_iter.b"]
    else:
        raise ValueError(f"unknown topic input mode {topic_input.mode!r}")
    flat = flatten(topic_input.payload)
    if flat.data.shape[0] != w.data.shape[1]:
        raise ValueError(
            f"topic bridge expects {w.data.shape[1]} inputs "
            f"(configured image count), got {flat.data.shape[0]}"
        )
    return tanh(linear(w, flat, b))


def decode_topic(state0: Tensor, params: ModelParams,
                 mode: Literal["teacher_forced", "greedy", "sample"],
                 target: list[int] | None = None,
                 rng: np.random.Generator | None = None,
                 max_len: int = 20,
                 min_steps: int = MIN_TOPIC_STEPS) -> TopicMemory:
    gru_w = params.gru("topic.gru")
    embed = params["topic.embed"]
    w_out, b_out = params["topic.w_out"], params["topic.b_out"]

    if mode == "teacher_forced":
        if target is None or len(target) < 3:
            # framed targets are [BOS, tokens..., EOS]; an empty phrase cannot train
            raise ValueError("decode_topic: empty target in teacher-forced mode")
        hidden_rows = []
        logprobs = []
        step_losses = []
        h = state0
        for t in range(1, len(target)):
            inp = row(embed, target[t - 1])
            h = gru_cell(inp, h, gru_w)
            hidden_rows.append(h)
            logits = linear(w_out, h, b_out)
            logprobs.append(log_softmax_values(logits.data))
            step_losses.append(cross_entropy(logits, target[t]))
        loss = scale(add_n(step_losses), 1.0 / len(step_losses))
        return TopicMemory(rows=hidden_rows, matrix=stack_rows(hidden_rows),
                           tokens=list(target[1:]), logprobs=logprobs, loss=loss)

    if mode == "sample" and rng is None:
        raise ValueError("decode_topic: sample mode needs an rng")
    hidden_rows = []
    logprobs = []
    tokens: list[int] = []
    h = state0
    prev = BOS
    for t in range(1, max_len + 1):
        inp = row(embed, prev)
        h = gru_cell(inp, h, gru_w)
        hidden_rows.append(h)
        logits = linear(w_out, h, b_out)
        if t < min_steps:
            logits = suppress_index(logits, EOS)
        lsm = log_softmax_values(logits.data)
        logprobs.append(lsm)
        if mode == "greedy":
            tok = int(np.argmax(logits.data))
        else:
            p = np.exp(lsm)
            tok = int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))
            tok = min(tok, len(p) - 1)
        tokens.append(tok)
        prev = tok
        if tok == EOS:
            break
    return TopicMemory(rows=hidden_rows, matrix=stack_rows(hidden_rows),
                       tokens=tokens, logprobs=logprobs, loss=None)
