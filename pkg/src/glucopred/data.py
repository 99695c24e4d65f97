"""Core data structures for multi-source irregular time-series episodes.

An episode is one ICU-style stay: several independent observation streams
("sources"), each an irregularly sampled series of mixed numeric and
categorical features, plus a track of target blood-glucose measurements.
Supervised examples are prefixes of an episode labeled with the class of the
next glucose measurement.

All types are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

HYPO, EUGLYCEMIA, HYPER = 0, 1, 2
CLASS_NAMES = ("hypo", "euglycemia", "hyper")
N_CLASSES = 3

HYPO_THRESHOLD_MGDL = 70.0
HYPER_THRESHOLD_MGDL = 180.0

# A labeled example needs this many glucose readings at or before its cutoff
# (the cutoff reading included), and a follow-up reading within the window.
MIN_HISTORY_MEASUREMENTS = 5
MIN_HORIZON_MINUTES = 5.0
MAX_HORIZON_MINUTES = 600.0

# Reserved categories every categorical vocabulary must carry.
UNKNOWN_CATEGORY = "unknown"
ABSENT_CATEGORY = "absent-source"


class DataError(ValueError):
    """Raised when an input violates a data-model invariant."""


@dataclass(frozen=True)
class CategoricalFeature:
    """A named categorical feature with its closed category vocabulary."""

    name: str
    categories: tuple[str, ...]

    def __post_init__(self):
        for reserved in (UNKNOWN_CATEGORY, ABSENT_CATEGORY):
            if self.categories.count(reserved) != 1:
                raise DataError(
                    f"categorical feature {self.name!r}: vocabulary must "
                    f"contain {reserved!r} exactly once"
                )
        if len(set(self.categories)) != len(self.categories):
            raise DataError(f"categorical feature {self.name!r}: duplicate categories")

    def index_of(self, category: str) -> int:
        """Vocabulary index of a category; unseen values map to 'unknown'."""
        try:
            return self.categories.index(category)
        except ValueError:
            return self.categories.index(UNKNOWN_CATEGORY)


@dataclass(frozen=True)
class SourceSchema:
    """Feature inventory and preprocessing hints for one observation stream.

    ``dimension_feature`` names the categorical feature whose value partitions
    numeric statistics (e.g. the test name in a lab stream, so each lab is
    normalized independently). ``frequency_feature`` names the categorical
    feature holding a repetition frequency for scheduled administrations.
    ``outlier_filtered`` marks streams whose numeric records are subject to
    extreme-quantile removal.
    """

    source_id: int
    source_name: str
    numeric_features: tuple[str, ...]
    categorical_features: tuple[CategoricalFeature, ...]
    embed_width_hint: int
    dimension_feature: str | None = None
    outlier_filtered: bool = False
    frequency_feature: str | None = None

    def __post_init__(self):
        if self.source_id < 1:
            raise DataError(f"source_id must be >= 1, got {self.source_id}")
        if self.embed_width_hint not in (16, 32):
            raise DataError(
                f"embed_width_hint must be 16 or 32, got {self.embed_width_hint}"
            )
        names = list(self.numeric_features) + [c.name for c in self.categorical_features]
        if len(set(names)) != len(names):
            raise DataError(f"source {self.source_name!r}: duplicate feature names")
        for attr in ("dimension_feature", "frequency_feature"):
            value = getattr(self, attr)
            if value is not None and value not in [c.name for c in self.categorical_features]:
                raise DataError(
                    f"source {self.source_name!r}: {attr} {value!r} is not a "
                    "categorical feature"
                )

    @property
    def n_numeric(self) -> int:
        return len(self.numeric_features)

    @property
    def n_categorical(self) -> int:
        return len(self.categorical_features)

    @property
    def n_features(self) -> int:
        return self.n_numeric + self.n_categorical

    def categorical_index(self, name: str) -> int:
        for i, feat in enumerate(self.categorical_features):
            if feat.name == name:
                return i
        raise KeyError(name)


def validate_schemas(schemas: tuple[SourceSchema, ...]) -> None:
    """Source ids must be contiguous 1..M with unique names."""
    ids = sorted(s.source_id for s in schemas)
    if ids != list(range(1, len(schemas) + 1)):
        raise DataError(f"source ids must be contiguous 1..M, got {ids}")
    names = [s.source_name for s in schemas]
    if len(set(names)) != len(names):
        raise DataError("duplicate source names")


@dataclass(frozen=True)
class TimePoint:
    """One observation record: offset from admission plus aligned feature slots."""

    offset_minutes: float
    numeric_values: tuple[float, ...]
    numeric_missing: tuple[bool, ...]
    categorical_values: tuple[str, ...]

    def __post_init__(self):
        if not math.isfinite(self.offset_minutes) or self.offset_minutes < 0:
            raise DataError(f"offset_minutes must be finite and >= 0, got {self.offset_minutes}")
        if len(self.numeric_values) != len(self.numeric_missing):
            raise DataError("numeric_values and numeric_missing arity mismatch")


@dataclass(frozen=True)
class SourceSeries:
    """All records of one source within an episode, ordered by offset."""

    source_id: int
    time_points: tuple[TimePoint, ...]
    present: bool = True

    def __post_init__(self):
        if not self.present and self.time_points:
            raise DataError("absent series must have no time points")
        offsets = [tp.offset_minutes for tp in self.time_points]
        if any(b < a for a, b in zip(offsets, offsets[1:])):
            raise DataError(f"source {self.source_id}: offsets must be nondecreasing")


@dataclass(frozen=True)
class Episode:
    """One stay: M source series plus the target glucose track."""

    stay_id: str
    patient_id: str
    series: tuple[SourceSeries, ...]
    target_track: tuple[tuple[float, float], ...]
    subgroup_tags: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        ids = [s.source_id for s in self.series]
        if len(set(ids)) != len(ids):
            raise DataError(f"episode {self.stay_id}: duplicate source series")
        offsets = [t for t, _ in self.target_track]
        if any(b <= a for a, b in zip(offsets, offsets[1:])):
            raise DataError(f"episode {self.stay_id}: target offsets must be strictly increasing")

    def series_for(self, source_id: int) -> SourceSeries:
        for s in self.series:
            if s.source_id == source_id:
                return s
        raise KeyError(source_id)


def validate_episode(schemas: tuple[SourceSchema, ...], episode: Episode) -> None:
    """Check an episode against its schemas; raises DataError on violation."""
    by_id = {s.source_id: s for s in schemas}
    if sorted(s.source_id for s in episode.series) != sorted(by_id):
        raise DataError(
            f"episode {episode.stay_id}: needs exactly one series per schema source"
        )
    for series in episode.series:
        schema = by_id[series.source_id]
        for tp in series.time_points:
            if len(tp.numeric_values) != schema.n_numeric:
                raise DataError(
                    f"episode {episode.stay_id}, source {schema.source_name}: "
                    f"numeric arity {len(tp.numeric_values)} != {schema.n_numeric}"
                )
            if len(tp.categorical_values) != schema.n_categorical:
                raise DataError(
                    f"episode {episode.stay_id}, source {schema.source_name}: "
                    f"categorical arity {len(tp.categorical_values)} != {schema.n_categorical}"
                )
            for feat, value in zip(schema.categorical_features, tp.categorical_values):
                if value not in feat.categories:
                    raise DataError(
                        f"episode {episode.stay_id}, source {schema.source_name}: "
                        f"{value!r} not in vocabulary of {feat.name!r}"
                    )


@dataclass(frozen=True)
class LabeledExample:
    """An episode prefix labeled with the class of the next glucose reading.

    The input view is every record with offset <= cutoff_offset, across all
    sources. ``label`` is the class index of ``next_target_value``.
    """

    episode: Episode
    cutoff_offset: float
    label: int
    horizon_minutes: float
    next_target_value: float
    current_target_value: float

    def __post_init__(self):
        if not 0 <= self.label < N_CLASSES:
            raise DataError(f"label index out of range: {self.label}")
        if not MIN_HORIZON_MINUTES <= self.horizon_minutes <= MAX_HORIZON_MINUTES:
            raise DataError(
                f"horizon {self.horizon_minutes} outside "
                f"[{MIN_HORIZON_MINUTES}, {MAX_HORIZON_MINUTES}]"
            )
        history = sum(1 for t, _ in self.episode.target_track if t <= self.cutoff_offset)
        if history < MIN_HISTORY_MEASUREMENTS:
            raise DataError(
                f"only {history} target measurements at or before cutoff; "
                f"need {MIN_HISTORY_MEASUREMENTS}"
            )

    def one_hot(self) -> np.ndarray:
        y = np.zeros(N_CLASSES)
        y[self.label] = 1.0
        return y


def classify_target(value: float) -> int:
    """Class index of a glucose value: below 70 hypo, above 180 hyper,
    boundaries inclusive into euglycemia."""
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
        raise DataError(f"glucose value must be a finite positive number, got {value!r}")
    if value < HYPO_THRESHOLD_MGDL:
        return HYPO
    if value > HYPER_THRESHOLD_MGDL:
        return HYPER
    return EUGLYCEMIA


def dedupe_target_track(
    track: list[tuple[float, float]],
) -> tuple[tuple[float, float], ...]:
    """Drop same-offset duplicates, keeping the last-written record."""
    seen: dict[float, float] = {}
    for offset, value in track:
        seen[offset] = value
    return tuple(sorted(seen.items()))


def build_examples(episode: Episode) -> tuple[LabeledExample, ...]:
    """All valid labeled prefixes of an episode.

    Reading i becomes a cutoff when it is at least the 5th reading and the
    following reading arrives within [5, 600] minutes.
    """
    track = episode.target_track
    examples = []
    for i in range(len(track) - 1):
        if i + 1 < MIN_HISTORY_MEASUREMENTS:
            continue
        cutoff, current = track[i]
        nxt_offset, nxt_value = track[i + 1]
        horizon = nxt_offset - cutoff
        if not MIN_HORIZON_MINUTES <= horizon <= MAX_HORIZON_MINUTES:
            continue
        examples.append(
            LabeledExample(
                episode=episode,
                cutoff_offset=cutoff,
                label=classify_target(nxt_value),
                horizon_minutes=horizon,
                next_target_value=nxt_value,
                current_target_value=current,
            )
        )
    return tuple(examples)


def split_by_patient(
    episodes: list[Episode],
    fractions: tuple[float, float, float],
    seed: int,
) -> tuple[list[Episode], list[Episode], list[Episode]]:
    """Deterministic patient-level split into train/val/test.

    Patient counts follow largest-remainder apportionment of the fractions,
    so e.g. 10 patients at (0.7, 0.1, 0.2) split exactly 7/1/2.
    """
    if not episodes:
        raise DataError("cannot split an empty cohort")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"fractions must sum to 1, got {fractions}")
    patients = sorted({e.patient_id for e in episodes})
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(patients))

    n = len(patients)
    raw = [f * n for f in fractions]
    counts = [int(math.floor(r)) for r in raw]
    remainders = sorted(
        range(len(fractions)), key=lambda i: (raw[i] - counts[i], -i), reverse=True
    )
    for i in range(n - sum(counts)):
        counts[remainders[i % len(fractions)]] += 1

    assignment: dict[str, int] = {}
    pos = 0
    for split_idx, count in enumerate(counts):
        for j in order[pos : pos + count]:
            assignment[patients[j]] = split_idx
        pos += count

    splits: tuple[list[Episode], ...] = ([], [], [])
    for episode in episodes:
        splits[assignment[episode.patient_id]].append(episode)
    return splits
