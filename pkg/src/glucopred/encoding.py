"""Bridging preprocessed episodes to model tensors: per-example slicing,
padding, and batch collation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .data import LabeledExample, SourceSchema
from .preprocess import EpisodeArrays, SourceArrays, example_view


@dataclass(frozen=True)
class SourceTensors:
    numeric: torch.Tensor  # [B, T, n] float
    cat_ids: torch.Tensor  # [B, T, c] long
    offsets: torch.Tensor  # [B, T] float
    pad_mask: torch.Tensor  # [B, T] bool, True where padded


@dataclass(frozen=True)
class EncodedBatch:
    sources: dict[int, SourceTensors]
    labels: torch.Tensor | None  # [B] long


def encode_views(
    views: list[dict[int, SourceArrays]],
    schemas: tuple[SourceSchema, ...],
    labels: list[int] | None = None,
    dtype: torch.dtype = torch.float32,
) -> EncodedBatch:
    """Pad per-example views to a common length per source and stack."""
    batch: dict[int, SourceTensors] = {}
    n = len(views)
    for schema in schemas:
        sid = schema.source_id
        lengths = [len(v[sid].offsets) for v in views]
        t_max = max(lengths)
        numeric = np.zeros((n, t_max, schema.n_numeric), dtype=np.float64)
        cat_ids = np.zeros((n, t_max, schema.n_categorical), dtype=np.int64)
        offsets = np.zeros((n, t_max), dtype=np.float64)
        pad = np.ones((n, t_max), dtype=bool)
        for i, view in enumerate(views):
            src = view[sid]
            t = lengths[i]
            numeric[i, :t] = src.numeric
            cat_ids[i, :t] = src.cat_ids
            offsets[i, :t] = src.offsets
            pad[i, :t] = False
        batch[sid] = SourceTensors(
            numeric=torch.as_tensor(numeric, dtype=dtype),
            cat_ids=torch.as_tensor(cat_ids),
            offsets=torch.as_tensor(offsets, dtype=dtype),
            pad_mask=torch.as_tensor(pad),
        )
    label_tensor = None
    if labels is not None:
        label_tensor = torch.as_tensor(np.asarray(labels, dtype=np.int64))
    return EncodedBatch(sources=batch, labels=label_tensor)


def encode_examples(
    arrays_by_stay: dict[str, EpisodeArrays],
    schemas: tuple[SourceSchema, ...],
    examples: list[LabeledExample],
    max_len: int,
    dtype: torch.dtype = torch.float32,
    with_labels: bool = True,
) -> EncodedBatch:
    views = [
        example_view(arrays_by_stay[ex.episode.stay_id], schemas, ex.cutoff_offset, max_len)
        for ex in examples
    ]
    labels = [ex.label for ex in examples] if with_labels else None
    return encode_views(views, schemas, labels, dtype)
