"""Shared prediction path for the CLI and the HTTP service.

Both surfaces parse the same raw-record request format, run the same stored
preprocessing, and call the same forward pass, so their outputs are
bit-identical for identical inputs and checkpoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import torch

from .checkpoint import load_checkpoint
from .data import (
    CLASS_NAMES,
    UNKNOWN_CATEGORY,
    SourceSchema,
    SourceSeries,
    TimePoint,
)
from .encoding import encode_views
from .model import MultiSourceClassifier
from .preprocess import (
    DEFAULT_FREQUENCY_MAP,
    NormalizerState,
    _placeholder_arrays,
    _series_to_arrays,
    apply_normalizer,
    expand_medications,
    truncate_series,
)


class RequestFormatError(ValueError):
    """Invalid prediction request; carries the offending field path."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(message)


@dataclass
class ServingState:
    model: MultiSourceClassifier
    schemas: tuple[SourceSchema, ...]
    normalizer: NormalizerState
    frequency_map: dict[str, float | None]
    model_hash: str

    @classmethod
    def from_checkpoint(cls, path: Path) -> "ServingState":
        from .checkpoint import checkpoint_hash

        model, normalizer, frequency_map, _ = load_checkpoint(path)
        if normalizer is None:
            raise ValueError(f"checkpoint {path} carries no normalizer state")
        model.eval()
        return cls(
            model=model,
            schemas=model.schemas,
            normalizer=normalizer,
            frequency_map=frequency_map or dict(DEFAULT_FREQUENCY_MAP),
            model_hash=checkpoint_hash(path),
        )


def _parse_record(schema: SourceSchema, index: int, record: dict):
    path = f"sources.{schema.source_name}[{index}]"
    if not isinstance(record, dict):
        raise RequestFormatError(path, f"{path}: record must be an object")
    if "offset_minutes" not in record:
        raise RequestFormatError(f"{path}.offset_minutes", f"{path}: offset_minutes is required")
    offset = record["offset_minutes"]
    if not isinstance(offset, (int, float)) or isinstance(offset, bool) or not math.isfinite(offset) or offset < 0:
        raise RequestFormatError(
            f"{path}.offset_minutes",
            f"{path}.offset_minutes: must be a finite number >= 0, got {offset!r}",
        )
    values = record.get("values", {})
    if not isinstance(values, dict):
        raise RequestFormatError(f"{path}.values", f"{path}.values: must be an object")
    known = set(schema.numeric_features) | {c.name for c in schema.categorical_features}
    for key in values:
        if key not in known:
            raise RequestFormatError(
                f"{path}.values.{key}",
                f"{path}.values.{key}: unknown feature for source {schema.source_name!r}",
            )

    numeric, missing = [], []
    for name in schema.numeric_features:
        value = values.get(name)
        if value is None:
            numeric.append(0.0)
            missing.append(True)
        elif isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value):
            numeric.append(float(value))
            missing.append(False)
        else:
            raise RequestFormatError(
                f"{path}.values.{name}",
                f"{path}.values.{name}: must be a finite number or null, got {value!r}",
            )
    categorical = []
    for feat in schema.categorical_features:
        value = values.get(feat.name)
        if value is None:
            categorical.append(UNKNOWN_CATEGORY)
        elif isinstance(value, str):
            # unseen categories are allowed and map to "unknown"
            categorical.append(value if value in feat.categories else UNKNOWN_CATEGORY)
        else:
            raise RequestFormatError(
                f"{path}.values.{feat.name}",
                f"{path}.values.{feat.name}: must be a string or null, got {value!r}",
            )
    stop = record.get("stop_offset_minutes")
    if stop is not None and (
        not isinstance(stop, (int, float)) or isinstance(stop, bool) or not math.isfinite(stop)
    ):
        raise RequestFormatError(
            f"{path}.stop_offset_minutes",
            f"{path}.stop_offset_minutes: must be a finite number or null",
        )
    tp = TimePoint(
        offset_minutes=float(offset),
        numeric_values=tuple(numeric),
        numeric_missing=tuple(missing),
        categorical_values=tuple(categorical),
    )
    return tp, (None if stop is None else float(stop))


def parse_request(
    schemas: tuple[SourceSchema, ...],
    payload: dict,
    frequency_map: dict[str, float | None],
) -> dict[int, SourceSeries]:
    """Validate a raw request and build per-source series, applying
    administration expansion where stop offsets are supplied."""
    if not isinstance(payload, dict):
        raise RequestFormatError("", "request body must be a JSON object")
    sources = payload.get("sources", {})
    if not isinstance(sources, dict):
        raise RequestFormatError("sources", "sources: must be an object")
    known = {s.source_name for s in schemas}
    for name in sources:
        if name not in known:
            raise RequestFormatError(
                f"sources.{name}", f"sources.{name}: unknown source; expected one of {sorted(known)}"
            )

    series_by_id: dict[int, SourceSeries] = {}
    for schema in schemas:
        records = sources.get(schema.source_name, [])
        if not isinstance(records, list):
            raise RequestFormatError(
                f"sources.{schema.source_name}",
                f"sources.{schema.source_name}: must be an array of records",
            )
        if not records:
            series_by_id[schema.source_id] = SourceSeries(schema.source_id, (), present=False)
            continue
        parsed = [_parse_record(schema, i, r) for i, r in enumerate(records)]
        parsed.sort(key=lambda pair: pair[0].offset_minutes)
        points = tuple(tp for tp, _ in parsed)
        stops = tuple(stop for _, stop in parsed)
        series = SourceSeries(schema.source_id, points, present=True)
        if schema.frequency_feature is not None and any(s is not None for s in stops):
            series = expand_medications(
                series, stops, frequency_map,
                schema.categorical_index(schema.frequency_feature),
            )
        series_by_id[schema.source_id] = series
    return series_by_id


def predict_from_request(state: ServingState, payload: dict) -> dict:
    """Full stored pipeline: validate, normalize, placeholder, truncate,
    forward; returns probabilities, predicted class, and fusion weights."""
    series_by_id = parse_request(state.schemas, payload, state.frequency_map)
    view = {}
    for schema in state.schemas:
        series = series_by_id[schema.source_id]
        if not series.present:
            view[schema.source_id] = _placeholder_arrays(schema)
            continue
        normalized = apply_normalizer(state.normalizer, schema, series)
        normalized = truncate_series(normalized, state.model.config.max_seq_len)
        if not normalized.time_points:  # every record was filtered out
            view[schema.source_id] = _placeholder_arrays(schema)
            continue
        view[schema.source_id] = _series_to_arrays(schema, normalized)

    dtype = next(state.model.parameters()).dtype
    batch = encode_views([view], state.schemas, dtype=dtype)
    state.model.eval()
    with torch.no_grad():
        logits, weights, _ = state.model(batch)
        probs = torch.softmax(logits, dim=-1).double()[0]
    probabilities = [float(p) for p in probs]
    predicted = int(probs.argmax())
    return {
        "probabilities": probabilities,
        "predicted_class": CLASS_NAMES[predicted],
        "class_names": list(CLASS_NAMES),
        "fusion_weights": {
            schema.source_name: float(weights[0, i].double())
            for i, schema in enumerate(state.schemas)
        },
        "model_hash": state.model_hash,
    }


def slider_bounds(state: ServingState, n_sigmas: float = 4.0) -> dict:
    """Mean +/- n_sigmas * std per (source, feature, dimension value), for
    client-side numeric input limits."""
    bounds: dict[str, dict] = {}
    for (source_id, feature, dim), stats in state.normalizer.stats.items():
        schema = next(s for s in state.schemas if s.source_id == source_id)
        src = bounds.setdefault(schema.source_name, {})
        feat = src.setdefault(feature, {})
        feat[dim or ""] = {
            "low": stats.mean - n_sigmas * stats.std,
            "high": stats.mean + n_sigmas * stats.std,
        }
    return bounds


def example_to_request(
    schemas: tuple[SourceSchema, ...], episode, cutoff: float
) -> dict:
    """Serialize an episode's visible records into the request format."""
    sources = {}
    for schema in schemas:
        series = episode.series_for(schema.source_id)
        records = []
        for tp in series.time_points:
            if tp.offset_minutes > cutoff:
                break
            values = {}
            for name, value, missing in zip(
                schema.numeric_features, tp.numeric_values, tp.numeric_missing
            ):
                values[name] = None if missing else value
            for feat, value in zip(schema.categorical_features, tp.categorical_values):
                values[feat.name] = value
            records.append({"offset_minutes": tp.offset_minutes, "values": values})
        if records:
            sources[schema.source_name] = records
    return {"sources": sources}
