"""Bidirectional GRU over image features with residual feature fusion.

Each image's context vector is ReLU(W_cat [h_bwd; h_fwd] + W_f f_i): the two
directional hidden states are concatenated, projected back to the hidden
size, and fused with a projection of the raw feature. The learned 2H -> H
projection reconciles the concatenated width with the feature projection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import GRUWeights, ModelParams
from .tensor import Tensor, _attach, _track, add, concat, linear, relu, stack_rows


@dataclass
class VisualContext:
    rows: list[Tensor]   # N vectors of (H,)
    matrix: Tensor       # (N, H)


def _sig(a: np.ndarray) -> np.ndarray:
    t = np.exp(-np.abs(a))
    return np.where(a >= 0, 1.0 / (1.0 + t), t / (1.0 + t))


def gru_cell(x: Tensor, h_prev: Tensor, w: GRUWeights) -> Tensor:
    """One gated-recurrence step: sigmoid update/reset gates, tanh candidate,
    blended as (1 - z) * h_prev + z * candidate.

    Fused into a single graph node; this cell dominates the step count of
    every decode, so its forward/backward are written out by hand.
    """
    xv, hv = x.data, h_prev.data
    if w.w_z.data.shape[1] != xv.shape[0] + hv.shape[0]:
        raise ValueError(
            f"gru_cell: weights expect {w.w_z.data.shape[1]} inputs, "
            f"got {xv.shape[0]} + {hv.shape[0]}"
        )
    xh = np.concatenate([xv, hv])
    z = _sig(w.w_z.data @ xh + w.b_z.data)
    r = _sig(w.w_r.data @ xh + w.b_r.data)
    xrh = np.concatenate([xv, r * hv])
    c = np.tanh(w.w_c.data @ xrh + w.b_c.data)
    out = Tensor((1.0 - z) * hv + z * c)
    parents = (x, h_prev, w.w_z, w.b_z, w.w_r, w.b_r, w.w_c, w.b_c)
    if _track(*parents):
        n_in = xv.shape[0]

        def backward():
            g = out.grad
            dz = g * (c - hv)
            dh = g * (1.0 - z)
            d_ac = (g * z) * (1.0 - c * c)
            if w.w_c.requires_grad:
                w.w_c.grad += np.outer(d_ac, xrh)
            if w.b_c.requires_grad:
                w.b_c.grad += d_ac
            d_xrh = w.w_c.data.T @ d_ac
            dx = d_xrh[:n_in].copy()
            d_rh = d_xrh[n_in:]
            dr = d_rh * hv
            dh = dh + d_rh * r
            d_az = dz * z * (1.0 - z)
            d_ar = dr * r * (1.0 - r)
            if w.w_z.requires_grad:
                w.w_z.grad += np.outer(d_az, xh)
            if w.b_z.requires_grad:
                w.b_z.grad += d_az
            if w.w_r.requires_grad:
                w.w_r.grad += np.outer(d_ar, xh)
            if w.b_r.requires_grad:
                w.b_r.grad += d_ar
            d_xh = w.w_z.data.T @ d_az + w.w_r.data.T @ d_ar
            dx += d_xh[:n_in]
            dh = dh + d_xh[n_in:]
            if x.requires_grad:
                x.grad += dx
            if h_prev.requires_grad:
                h_prev.grad += dh

        _attach(out, parents, backward)
    return out


def encode_album(features: np.ndarray, params: ModelParams) -> VisualContext:
    """Run both directions over the N feature vectors and fuse per image."""
    n = features.shape[0]
    if n < 1:
        raise ValueError("encode_album: need at least one image")
    dtype = params.dtype
    feat_dim = params["venc.w_f"].data.shape[1]
    if features.shape[1] != feat_dim:
        raise ValueError(
            f"encode_album: feature dim {features.shape[1]} != parameter dim {feat_dim}"
        )
    feats = [Tensor(features[i].astype(dtype)) for i in range(n)]
    hidden = params["venc.w_f"].data.shape[0]

    fwd_w = params.gru("venc.fwd")
    bwd_w = params.gru("venc.bwd")

    fwd = []
    h = Tensor(np.zeros(hidden, dtype=dtype))
    for i in range(n):
        h = gru_cell(feats[i], h, fwd_w)
        fwd.append(h)

    bwd = [None] * n
    h = Tensor(np.zeros(hidden, dtype=dtype))
    for i in range(n - 1, -1, -1):
        h = gru_cell(feats[i], h, bwd_w)
        bwd[i] = h

    w_cat = params["venc.w_cat"]
    w_f = params["venc.w_f"]
    rows = []
    for i in range(n):
        both = concat([bwd[i], fwd[i]])
        fused = add(linear(w_cat, both), linear(w_f, feats[i]))
        rows.append(relu(fused))
    return VisualContext(rows=rows, matrix=stack_rows(rows))
