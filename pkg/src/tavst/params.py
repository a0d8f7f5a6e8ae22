"""Named parameter set for the full model.

One flat registry holds every weight: visual encoder (venc.*), topic
decoder + its two input bridges (topic.*), co-attention fusion (coatt.*),
story decoder (story.*), and the linear reward baseline (baseline.*). The
topic and story decoders each exist exactly once; the refinement loop reuses
them, so the number of distinct tensors does not depend on how many
refinement iterations run.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from .tensor import Precision, Tensor


@dataclass(frozen=True)
class ModelDims:
    hidden: int
    feature_dim: int
    images_per_album: int
    topic_vocab: int
    story_vocab: int


class GRUWeights(NamedTuple):
    w_z: Tensor
    b_z: Tensor
    w_r: Tensor
    b_r: Tensor
    w_c: Tensor
    b_c: Tensor


class ModelParams:
    def __init__(self):
        self._tensors: dict[str, Tensor] = {}

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._tensors:
            raise ValueError(f"duplicate parameter {name!r}")
        tensor.requires_grad = True
        self._tensors[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return sorted(self._tensors)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(sorted(self._tensors.items()))

    def zero_grads(self) -> None:
        for t in self._tensors.values():
            t.zero_grad()

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self._tensors.values())).data.dtype

    def gru(self, prefix: str) -> GRUWeights:
        return GRUWeights(
            self[f"{prefix}.w_z"], self[f"{prefix}.b_z"],
            self[f"{prefix}.w_r"], self[f"{prefix}.b_r"],
            self[f"{prefix}.w_c"], self[f"{prefix}.b_c"],
        )

    def copy(self) -> "ModelParams":
        dup = ModelParams()
        for name, t in self._tensors.items():
            dup.add(name, Tensor(t.data.copy()))
        return dup

    def load_arrays(self, arrays: dict[str, np.ndarray], dtype=None) -> None:
        """Overwrite parameter values from a name->array mapping (shapes must match)."""
        missing = set(self._tensors) - set(arrays)
        extra = set(arrays) - set(self._tensors)
        if missing or extra:
            raise ValueError(
                f"parameter name mismatch: missing={sorted(missing)} extra={sorted(extra)}"
            )
        for name, t in self._tensors.items():
            arr = np.asarray(arrays[name], dtype=dtype or t.data.dtype)
            if arr.shape != t.data.shape:
                raise ValueError(
                    f"shape mismatch for {name}: checkpoint {arr.shape}, model {t.data.shape}"
                )
            t.data = arr
            t.grad = np.zeros_like(arr)


def _glorot(rng: np.random.Generator, shape: tuple, dtype) -> Tensor:
    if len(shape) == 2:
        fan_in, fan_out = shape[1], shape[0]
    else:
        fan_in, fan_out = shape[0], 1
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-a, a, size=shape).astype(dtype))


def _zeros(shape: tuple, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype))


def _add_gru(params: ModelParams, prefix: str, in_dim: int, hidden: int,
             rng: np.random.Generator, dtype) -> None:
    cat = in_dim + hidden
    for gate in ("z", "r", "c"):
        params.add(f"{prefix}.w_{gate}", _glorot(rng, (hidden, cat), dtype))
        params.add(f"{prefix}.b_{gate}", _zeros((hidden,), dtype))


def init_params(dims: ModelDims, rng: np.random.Generator,
                precision: Precision = Precision.STANDARD) -> ModelParams:
    """Fresh parameters: glorot-uniform matrices, zero biases."""
    dtype = precision.dtype
    h = dims.hidden
    params = ModelParams()

    # bidirectional visual encoder + residual feature fusion
    _add_gru(params, "venc.fwd", dims.feature_dim, h, rng, dtype)
    _add_gru(params, "venc.bwd", dims.feature_dim, h, rng, dtype)
    params.add("venc.w_cat", _glorot(rng, (h, 2 * h), dtype))
    params.add("venc.w_f", _glorot(rng, (h, dims.feature_dim), dtype))

    # topic decoder, shared between the visual-seeded and story-seeded modes
    params.add("topic.embed", _glorot(rng, (dims.topic_vocab, h), dtype))
    _add_gru(params, "topic.gru", h, h, rng, dtype)
    params.add("topic.w_out", _glorot(rng, (dims.topic_vocab, h), dtype))
    params.add("topic.b_out", _zeros((dims.topic_vocab,), dtype))
    flat = dims.images_per_album * h
    params.add("topic.bridge_init.w", _glorot(rng, (h, flat), dtype))
    params.add("topic.bridge_init.b", _zeros((h,), dtype))
    params.add("topic.bridge_iter.w", _glorot(rng, (h, flat), dtype))
    params.add("topic.bridge_iter.b", _zeros((h,), dtype))

    # co-attention fusion
    params.add("coatt.w_b", _glorot(rng, (h, h), dtype))
    params.add("coatt.w_v", _glorot(rng, (h, h), dtype))
    params.add("coatt.w_t", _glorot(rng, (h, h), dtype))
    params.add("coatt.w_hv", _glorot(rng, (h,), dtype))
    params.add("coatt.w_ht", _glorot(rng, (h,), dtype))
    params.add("coatt.w_fc", _glorot(rng, (h, 2 * h), dtype))

    # story decoder, shared across images and refinement passes
    params.add("story.embed", _glorot(rng, (dims.story_vocab, h), dtype))
    _add_gru(params, "story.gru", 2 * h, h, rng, dtype)
    params.add("story.w_out", _glorot(rng, (dims.story_vocab, h), dtype))
    params.add("story.b_out", _zeros((dims.story_vocab,), dtype))
    params.add("story.w_init", _glorot(rng, (h, h), dtype))

    # linear reward baseline over the joint context
    params.add("baseline.w", _glorot(rng, (h,), dtype))
    params.add("baseline.b", _zeros((), dtype))

    return params


def dims_from_params(params: ModelParams) -> ModelDims:
    """Recover the dimension tuple from parameter shapes (checkpoint loading)."""
    h = params["story.w_init"].data.shape[0]
    return ModelDims(
        hidden=h,
        feature_dim=params["venc.w_f"].data.shape[1],
        images_per_album=params["topic.bridge_init.w"].data.shape[1] // h,
        topic_vocab=params["topic.embed"].data.shape[0],
        story_vocab=params["story.embed"].data.shape[0],
    )
