"""Normalization, outlier removal, administration expansion, truncation, and
missing-source placeholders.

Numeric features are z-scored per (source, feature, dimension value) key,
where the dimension value is the record's entry for the schema's declared
dimension feature (each lab test gets its own statistics). Missing numerics
impute to 0, which is the post-normalization mean. Outlier-filtered sources
drop records falling outside extreme-quantile thresholds fitted on training
data.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    ABSENT_CATEGORY,
    Episode,
    SourceSchema,
    SourceSeries,
    TimePoint,
)

MAX_SEQUENCE_LENGTH = 512
PLACEHOLDER_OFFSET = 0.0

LOW_QUANTILE = 0.0005
HIGH_QUANTILE = 0.9995

# Repetition interval in minutes per frequency category; None means the
# record is administered once and never expanded.
DEFAULT_FREQUENCY_MAP: dict[str, float | None] = {
    "once": None,
    "q1h": 60.0,
    "q2h": 120.0,
    "q4h": 240.0,
    "q6h": 360.0,
    "q8h": 480.0,
    "q12h": 720.0,
    "daily": 1440.0,
    "unknown": None,
    "absent-source": None,
}


class PreprocessError(ValueError):
    """Raised on misuse of preprocessing state."""


def sorted_quantile(values: np.ndarray, q: float) -> float:
    """Order-statistic quantile: the ceil(q*n)-th smallest value."""
    ordered = np.sort(np.asarray(values, dtype=float))
    n = len(ordered)
    if n == 0:
        raise PreprocessError("quantile of empty sample")
    k = min(max(int(math.ceil(q * n)), 1), n)
    return float(ordered[k - 1])


@dataclass(frozen=True)
class FeatureStats:
    mean: float
    std: float
    low: float
    high: float
    count: int
    flagged: bool  # fewer than 2 observations; std pinned to 0

    def normalize(self, x: float) -> float:
        if self.std == 0.0:
            return 0.0
        return (x - self.mean) / self.std

    def denormalize(self, z: float) -> float:
        return z * self.std + self.mean


@dataclass
class NormalizerState:
    """Per-key normalization statistics, immutable after fit.

    Keys are (source_id, numeric feature name, dimension value); sources
    without a dimension feature use "" as the dimension value.
    """

    stats: dict[tuple[int, str, str], FeatureStats] = field(default_factory=dict)
    fitted_on: str = ""

    def key_for(
        self, schema: SourceSchema, feature: str, tp: TimePoint
    ) -> tuple[int, str, str]:
        dim = ""
        if schema.dimension_feature is not None:
            dim = tp.categorical_values[schema.categorical_index(schema.dimension_feature)]
        return (schema.source_id, feature, dim)

    def lookup(self, key: tuple[int, str, str]) -> FeatureStats | None:
        return self.stats.get(key)

    def to_json(self) -> str:
        entries = [
            {
                "source_id": k[0],
                "feature": k[1],
                "dimension": k[2],
                "mean": s.mean,
                "std": s.std,
                "low": s.low,
                "high": s.high,
                "count": s.count,
                "flagged": s.flagged,
            }
            for k, s in sorted(self.stats.items())
        ]
        return json.dumps({"fitted_on": self.fitted_on, "stats": entries}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "NormalizerState":
        payload = json.loads(text)
        stats = {}
        for e in payload["stats"]:
            stats[(int(e["source_id"]), e["feature"], e["dimension"])] = FeatureStats(
                mean=e["mean"],
                std=e["std"],
                low=e["low"],
                high=e["high"],
                count=int(e["count"]),
                flagged=bool(e["flagged"]),
            )
        return cls(stats=stats, fitted_on=payload["fitted_on"])

    def save(self, path: Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: Path) -> "NormalizerState":
        return cls.from_json(Path(path).read_text())


def _visible_cutoffs(train_examples) -> dict[str, float]:
    cutoffs: dict[str, float] = {}
    for ex in train_examples:
        stay = ex.episode.stay_id
        cutoffs[stay] = max(cutoffs.get(stay, -math.inf), ex.cutoff_offset)
    return cutoffs


def fit_normalizer(
    schemas: tuple[SourceSchema, ...],
    train_examples,
    fitted_on: str = "train",
) -> NormalizerState:
    """Fit per-key statistics on the union of training input views.

    Only records visible to at least one training example (offset at or
    before the episode's latest cutoff) contribute. Quantile thresholds are
    computed on raw values; means and population standard deviations are
    computed on the values surviving threshold removal.
    """
    cutoffs = _visible_cutoffs(train_examples)
    episodes = {ex.episode.stay_id: ex.episode for ex in train_examples}

    raw: dict[tuple[int, str, str], list[float]] = {}
    state = NormalizerState(fitted_on=fitted_on)
    for stay_id, episode in episodes.items():
        cutoff = cutoffs[stay_id]
        for schema in schemas:
            series = episode.series_for(schema.source_id)
            for tp in series.time_points:
                if tp.offset_minutes > cutoff:
                    break
                for j, feature in enumerate(schema.numeric_features):
                    if tp.numeric_missing[j]:
                        continue
                    key = state.key_for(schema, feature, tp)
                    raw.setdefault(key, []).append(tp.numeric_values[j])

    filtered_ids = {s.source_id for s in schemas if s.outlier_filtered}
    for key, values in raw.items():
        arr = np.asarray(values, dtype=float)
        if key[0] in filtered_ids:
            low = sorted_quantile(arr, LOW_QUANTILE)
            high = sorted_quantile(arr, HIGH_QUANTILE)
            kept = arr[(arr >= low) & (arr <= high)]
        else:
            low, high = -math.inf, math.inf
            kept = arr
        flagged = len(kept) < 2
        mean = float(np.mean(kept)) if len(kept) else 0.0
        std = 0.0 if flagged else float(np.std(kept))  # population convention
        state.stats[key] = FeatureStats(
            mean=mean, std=std, low=low, high=high, count=len(kept), flagged=flagged
        )
    return state


def apply_normalizer(
    state: NormalizerState, schema: SourceSchema, series: SourceSeries
) -> SourceSeries:
    """Normalize one series: drop out-of-threshold records of filtered
    sources, z-score numerics, and impute missing numerics to 0.

    Keys never seen during fit normalize to 0 (the imputed mean)."""
    out = []
    for tp in series.time_points:
        dropped = False
        values = []
        for j, feature in enumerate(schema.numeric_features):
            if tp.numeric_missing[j]:
                values.append(0.0)
                continue
            stats = state.lookup(state.key_for(schema, feature, tp))
            if stats is None:
                values.append(0.0)
                continue
            x = tp.numeric_values[j]
            if schema.outlier_filtered and not (stats.low <= x <= stats.high):
                dropped = True
                break
            values.append(stats.normalize(x))
        if dropped:
            continue
        out.append(
            TimePoint(
                offset_minutes=tp.offset_minutes,
                numeric_values=tuple(values),
                numeric_missing=tp.numeric_missing,
                categorical_values=tp.categorical_values,
            )
        )
    return SourceSeries(series.source_id, tuple(out), present=series.present)


def expand_medications(
    series: SourceSeries,
    stop_offsets: tuple[float | None, ...],
    frequency_map: dict[str, float | None],
    frequency_index: int,
) -> SourceSeries:
    """Replicate each administration at its frequency interval up to and
    including the last repetition at or before its stop offset.

    Records with an unmapped frequency, no stop offset, or a stop before the
    start are kept once, unexpanded."""
    if len(stop_offsets) != len(series.time_points):
        raise PreprocessError("stop_offsets arity mismatch")
    expanded: list[TimePoint] = []
    for tp, stop in zip(series.time_points, stop_offsets):
        interval = frequency_map.get(tp.categorical_values[frequency_index])
        if interval is None or stop is None or stop < tp.offset_minutes:
            expanded.append(tp)
            continue
        n_repeats = int(math.floor((stop - tp.offset_minutes) / interval))
        for k in range(n_repeats + 1):
            expanded.append(
                TimePoint(
                    offset_minutes=tp.offset_minutes + k * interval,
                    numeric_values=tp.numeric_values,
                    numeric_missing=tp.numeric_missing,
                    categorical_values=tp.categorical_values,
                )
            )
    expanded.sort(key=lambda t: t.offset_minutes)
    return SourceSeries(series.source_id, tuple(expanded), present=series.present)


def truncate_series(series: SourceSeries, max_len: int = MAX_SEQUENCE_LENGTH) -> SourceSeries:
    """Keep the latest ``max_len`` time points."""
    if len(series.time_points) <= max_len:
        return series
    return SourceSeries(
        series.source_id, series.time_points[-max_len:], present=series.present
    )


def placeholder_missing_source(
    schema: SourceSchema, series: SourceSeries
) -> SourceSeries:
    """Replace an absent series with a single placeholder record: zeroed
    missing numerics and 'absent-source' categoricals at offset 0.

    The returned series is marked present since it now carries the synthetic
    record standing in for the absent stream."""
    if series.present:
        return series
    tp = TimePoint(
        offset_minutes=PLACEHOLDER_OFFSET,
        numeric_values=(0.0,) * schema.n_numeric,
        numeric_missing=(True,) * schema.n_numeric,
        categorical_values=(ABSENT_CATEGORY,) * schema.n_categorical,
    )
    return SourceSeries(series.source_id, (tp,), present=True)


@dataclass(frozen=True)
class SourceArrays:
    """Model-ready arrays for one source of one episode."""

    offsets: np.ndarray  # [T] float64
    numeric: np.ndarray  # [T, n_numeric] float64, normalized, 0 where missing
    cat_ids: np.ndarray  # [T, n_categorical] int64 vocabulary indices
    present: bool


@dataclass(frozen=True)
class EpisodeArrays:
    """A fully normalized episode, ready for per-example slicing."""

    stay_id: str
    patient_id: str
    subgroup_tags: frozenset[str]
    sources: dict[int, SourceArrays]
    target_track: np.ndarray  # [K, 2] (offset, value)


def _series_to_arrays(schema: SourceSchema, series: SourceSeries) -> SourceArrays:
    points = series.time_points
    offsets = np.array([tp.offset_minutes for tp in points], dtype=np.float64)
    numeric = np.array(
        [tp.numeric_values for tp in points], dtype=np.float64
    ).reshape(len(points), schema.n_numeric)
    cat_ids = np.array(
        [
            [feat.index_of(v) for feat, v in zip(schema.categorical_features, tp.categorical_values)]
            for tp in points
        ],
        dtype=np.int64,
    ).reshape(len(points), schema.n_categorical)
    return SourceArrays(offsets, numeric, cat_ids, present=series.present)


def normalize_episode(
    state: NormalizerState, schemas: tuple[SourceSchema, ...], episode: Episode
) -> EpisodeArrays:
    sources = {}
    for schema in schemas:
        series = apply_normalizer(state, schema, episode.series_for(schema.source_id))
        sources[schema.source_id] = _series_to_arrays(schema, series)
    track = np.array(episode.target_track, dtype=np.float64).reshape(-1, 2)
    return EpisodeArrays(
        stay_id=episode.stay_id,
        patient_id=episode.patient_id,
        subgroup_tags=episode.subgroup_tags,
        sources=sources,
        target_track=track,
    )


def _placeholder_arrays(schema: SourceSchema) -> SourceArrays:
    absent_ids = np.array(
        [[feat.index_of(ABSENT_CATEGORY) for feat in schema.categorical_features]],
        dtype=np.int64,
    ).reshape(1, schema.n_categorical)
    return SourceArrays(
        offsets=np.array([PLACEHOLDER_OFFSET], dtype=np.float64),
        numeric=np.zeros((1, schema.n_numeric), dtype=np.float64),
        cat_ids=absent_ids,
        present=False,
    )


def example_view(
    arrays: EpisodeArrays,
    schemas: tuple[SourceSchema, ...],
    cutoff: float,
    max_len: int = MAX_SEQUENCE_LENGTH,
) -> dict[int, SourceArrays]:
    """Slice an episode to records visible at a cutoff.

    Absent sources and sources with no record at or before the cutoff get a
    single placeholder record; series longer than ``max_len`` keep only the
    latest records."""
    view = {}
    for schema in schemas:
        src = arrays.sources[schema.source_id]
        n = int(np.searchsorted(src.offsets, cutoff, side="right"))
        if not src.present or n == 0:
            view[schema.source_id] = _placeholder_arrays(schema)
            continue
        lo = max(0, n - max_len)
        view[schema.source_id] = SourceArrays(
            offsets=src.offsets[lo:n],
            numeric=src.numeric[lo:n],
            cat_ids=src.cat_ids[lo:n],
            present=True,
        )
    return view


def load_frequency_map(path: Path | None = None) -> dict[str, float | None]:
    """Frequency-category mapping, from a JSON file or the built-in default."""
    if path is None:
        return dict(DEFAULT_FREQUENCY_MAP)
    payload = json.loads(Path(path).read_text())
    return {k: (None if v is None else float(v)) for k, v in payload.items()}
