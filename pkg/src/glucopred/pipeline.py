"""Glue between episodes, preprocessing, and the model: array preparation,
batched scoring, and ScoredExample assembly."""

from __future__ import annotations

import numpy as np
import torch

from .data import Episode, LabeledExample, SourceSchema, build_examples
from .encoding import encode_examples
from .evaluation import ScoredExample
from .model import MultiSourceClassifier
from .preprocess import EpisodeArrays, NormalizerState, normalize_episode


def prepare_arrays(
    schemas: tuple[SourceSchema, ...],
    episodes: list[Episode],
    normalizer: NormalizerState,
) -> dict[str, EpisodeArrays]:
    return {e.stay_id: normalize_episode(normalizer, schemas, e) for e in episodes}


def collect_examples(episodes: list[Episode]) -> list[LabeledExample]:
    examples: list[LabeledExample] = []
    for episode in episodes:
        examples.extend(build_examples(episode))
    return examples


def build_views(
    schemas: tuple[SourceSchema, ...],
    arrays: dict[str, EpisodeArrays],
    examples: list[LabeledExample],
    max_len: int,
):
    from .preprocess import example_view

    return [
        example_view(arrays[ex.episode.stay_id], schemas, ex.cutoff_offset, max_len)
        for ex in examples
    ]


def score_views(
    model: MultiSourceClassifier,
    schemas: tuple[SourceSchema, ...],
    views,
    batch_size: int = 256,
) -> np.ndarray:
    """Softmax probabilities [N, C] in evaluation mode over prebuilt views."""
    from .encoding import encode_views

    model.eval()
    dtype = next(model.parameters()).dtype
    chunks = []
    with torch.no_grad():
        for start in range(0, len(views), batch_size):
            batch = encode_views(views[start : start + batch_size], schemas, dtype=dtype)
            logits, _, _ = model(batch)
            chunks.append(torch.softmax(logits, dim=-1).double().cpu().numpy())
    return np.concatenate(chunks) if chunks else np.zeros((0, model.config.n_classes))


def score_examples(
    model: MultiSourceClassifier,
    schemas: tuple[SourceSchema, ...],
    arrays: dict[str, EpisodeArrays],
    examples: list[LabeledExample],
    batch_size: int = 256,
) -> np.ndarray:
    """Softmax probabilities [N, C] in evaluation mode."""
    views = build_views(schemas, arrays, examples, model.config.max_seq_len)
    return score_views(model, schemas, views, batch_size)


def to_scored_examples(
    examples: list[LabeledExample], probabilities: np.ndarray
) -> list[ScoredExample]:
    scored = []
    for example, probs in zip(examples, probabilities):
        scored.append(
            ScoredExample(
                scores=tuple(float(p) for p in probs),
                true_class=example.label,
                horizon_minutes=example.horizon_minutes,
                next_target_value=example.next_target_value,
                current_target_value=example.current_target_value,
                subgroup_tags=example.episode.subgroup_tags,
            )
        )
    return scored
