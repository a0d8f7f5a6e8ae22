"""Co-attention fusion of visual contexts and topic memory.

A bilinear affinity between the two vector sets yields mutual attention
weights; the attended summaries are concatenated and projected to one joint
context vector. In per-image scope (the default) the topic attention is
conditioned separately on each image's context vector, so each image gets
its own joint vector; global scope attends once over all images and
replicates the result.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .params import ModelParams
from .tensor import Tensor, add, concat, linear, matmul, softmax, stack_rows, tanh, transpose
from .topic import TopicMemory
from .visual import VisualContext


@dataclass
class JointContext:
    rows: list[Tensor]            # N joint context vectors of (H,)
    attn_v: list[np.ndarray]      # visual attention weights per entry
    attn_t: list[np.ndarray]      # topic attention weights per entry
    scope: str


def coattend(h_v: Tensor, h_t: Tensor, params: ModelParams):
    """Mutual attention between visual rows (N', H) and topic rows (M, H).

    Returns the attended visual vector, the attended topic vector, and the
    two weight distributions (as plain arrays).
    """
    if h_v.data.ndim != 2 or h_t.data.ndim != 2:
        raise ValueError(
            f"coattend: need matrices, got {h_v.shape} and {h_t.shape}"
        )
    if h_v.data.shape[1] != h_t.data.shape[1]:
        raise ValueError(
            f"coattend: hidden sizes disagree, {h_v.shape} vs {h_t.shape}"
        )
    w_b, w_v, w_t = params["coatt.w_b"], params["coatt.w_v"], params["coatt.w_t"]
    w_hv, w_ht = params["coatt.w_hv"], params["coatt.w_ht"]

    affinity = tanh(matmul(matmul(h_t, w_b), transpose(h_v)))       # (M, N')
    vis_proj = matmul(h_v, w_v)                                     # (N', H)
    top_proj = matmul(h_t, w_t)                                     # (M, H)
    mixed_v = tanh(add(vis_proj, matmul(transpose(affinity), top_proj)))
    mixed_t = tanh(add(top_proj, matmul(affinity, vis_proj)))
    a_v = softmax(matmul(mixed_v, w_hv))                            # (N',)
    a_t = softmax(matmul(mixed_t, w_ht))                            # (M,)
    att_v = matmul(transpose(h_v), a_v)                             # (H,)
    att_t = matmul(transpose(h_t), a_t)                             # (H,)
    return att_v, att_t, (a_v.data.copy(), a_t.data.copy())


def joint_contexts(visual: VisualContext, memory: TopicMemory, params: ModelParams,
                   scope: Literal["per_image", "global"] = "per_image") -> JointContext:
    """Fuse visual context and topic memory into one joint vector per image."""
    w_fc = params["coatt.w_fc"]
    if scope == "global":
        att_v, att_t, (a_v, a_t) = coattend(visual.matrix, memory.matrix, params)
        j = linear(w_fc, concat([att_v, att_t]))
        n = len(visual.rows)
        return JointContext(rows=[j] * n, attn_v=[a_v] * n, attn_t=[a_t] * n,
                            scope=scope)
    if scope != "per_image":
        raise ValueError(f"unknown co-attention scope {scope!r}")
    rows, weights_v, weights_t = [], [], []
    for h_i in visual.rows:
        single = stack_rows([h_i])
        _, att_t, (a_v, a_t) = coattend(single, memory.matrix, params)
        # the singleton's visual attention is exactly [1.0]; use the row itself
        rows.append(linear(w_fc, concat([h_i, att_t])))
        weights_v.append(a_v)
        weights_t.append(a_t)
    return JointContext(rows=rows, attn_v=weights_v, attn_t=weights_t, scope=scope)
