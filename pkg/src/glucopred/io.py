"""Cohort serialization: one CSV per source, a target-track CSV, and a JSON
schema file.

CSV layout per source: ``stay_id,patient_id,offset_minutes,<feature columns>``.
An empty cell means a missing numeric value or an "unknown" categorical value.
Sources with a declared frequency feature may carry an extra
``stop_offset_minutes`` column; those administrations are expanded into
repeated records while loading.
"""

from __future__ import annotations

import json
from pathlib import Path

import pandas as pd

from .data import (
    ABSENT_CATEGORY,
    UNKNOWN_CATEGORY,
    CategoricalFeature,
    DataError,
    Episode,
    SourceSchema,
    SourceSeries,
    TimePoint,
    dedupe_target_track,
    validate_episode,
    validate_schemas,
)
from .preprocess import DEFAULT_FREQUENCY_MAP, expand_medications

STOP_OFFSET_COLUMN = "stop_offset_minutes"
META_COLUMNS = ("stay_id", "patient_id", "offset_minutes")


def schema_to_dict(schema: SourceSchema) -> dict:
    return {
        "source_id": schema.source_id,
        "source_name": schema.source_name,
        "numeric_features": list(schema.numeric_features),
        "categorical_features": [
            {"name": c.name, "categories": list(c.categories)}
            for c in schema.categorical_features
        ],
        "embed_width_hint": schema.embed_width_hint,
        "dimension_feature": schema.dimension_feature,
        "outlier_filtered": schema.outlier_filtered,
        "frequency_feature": schema.frequency_feature,
    }


def schema_from_dict(d: dict) -> SourceSchema:
    return SourceSchema(
        source_id=int(d["source_id"]),
        source_name=d["source_name"],
        numeric_features=tuple(d["numeric_features"]),
        categorical_features=tuple(
            CategoricalFeature(c["name"], tuple(c["categories"]))
            for c in d["categorical_features"]
        ),
        embed_width_hint=int(d["embed_width_hint"]),
        dimension_feature=d.get("dimension_feature"),
        outlier_filtered=bool(d.get("outlier_filtered", False)),
        frequency_feature=d.get("frequency_feature"),
    )


def save_schemas(path: Path, schemas: tuple[SourceSchema, ...]) -> None:
    path.write_text(
        json.dumps({"sources": [schema_to_dict(s) for s in schemas]}, indent=2)
    )


def load_schemas(path: Path) -> tuple[SourceSchema, ...]:
    payload = json.loads(path.read_text())
    schemas = tuple(schema_from_dict(d) for d in payload["sources"])
    validate_schemas(schemas)
    return schemas


def _format_cell(value) -> str:
    if value is None:
        return ""
    return repr(float(value)) if isinstance(value, float) else str(value)


def write_cohort(
    out_dir: Path,
    schemas: tuple[SourceSchema, ...],
    episodes: list[Episode],
    stop_offsets: dict[tuple[str, int], tuple[float | None, ...]] | None = None,
    manifest: dict | None = None,
) -> None:
    """Write a cohort directory: schema.json, sources/*.csv, targets.csv,
    subgroups.csv and an optional manifest.json."""
    out_dir = Path(out_dir)
    (out_dir / "sources").mkdir(parents=True, exist_ok=True)
    save_schemas(out_dir / "schema.json", schemas)
    stop_offsets = stop_offsets or {}

    for schema in schemas:
        columns = list(META_COLUMNS) + list(schema.numeric_features) + [
            c.name for c in schema.categorical_features
        ]
        has_stops = any(
            key[1] == schema.source_id and any(v is not None for v in values)
            for key, values in stop_offsets.items()
        )
        if has_stops:
            columns.append(STOP_OFFSET_COLUMN)
        rows = []
        for episode in episodes:
            series = episode.series_for(schema.source_id)
            stops = stop_offsets.get((episode.stay_id, schema.source_id))
            for i, tp in enumerate(series.time_points):
                row = [episode.stay_id, episode.patient_id, repr(tp.offset_minutes)]
                row += [
                    "" if missing else repr(value)
                    for value, missing in zip(tp.numeric_values, tp.numeric_missing)
                ]
                row += list(tp.categorical_values)
                if has_stops:
                    stop = stops[i] if stops is not None else None
                    row.append("" if stop is None else repr(stop))
                rows.append(row)
        frame = pd.DataFrame(rows, columns=columns)
        frame.to_csv(out_dir / "sources" / f"{schema.source_name}.csv", index=False)

    target_rows = [
        (e.stay_id, repr(t), repr(v)) for e in episodes for t, v in e.target_track
    ]
    pd.DataFrame(target_rows, columns=["stay_id", "offset_minutes", "value"]).to_csv(
        out_dir / "targets.csv", index=False
    )

    tag_rows = [(e.stay_id, tag) for e in episodes for tag in sorted(e.subgroup_tags)]
    pd.DataFrame(tag_rows, columns=["stay_id", "tag"]).to_csv(
        out_dir / "subgroups.csv", index=False
    )

    if manifest is not None:
        (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))


def _read_csv(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, dtype=str, keep_default_na=False)


def _parse_source_rows(
    schema: SourceSchema, frame: pd.DataFrame
) -> dict[str, tuple[str, list[TimePoint], list[float | None]]]:
    """Per stay: patient id, ordered time points, and per-record stop offsets."""
    expected = set(META_COLUMNS) | set(schema.numeric_features) | {
        c.name for c in schema.categorical_features
    }
    extras = set(frame.columns) - expected - {STOP_OFFSET_COLUMN}
    if extras:
        raise DataError(
            f"source {schema.source_name}: unexpected columns {sorted(extras)}"
        )
    has_stops = STOP_OFFSET_COLUMN in frame.columns

    stays: dict[str, tuple[str, list[TimePoint], list[float | None]]] = {}
    for row in frame.itertuples(index=False):
        record = row._asdict()
        numeric, missing = [], []
        for name in schema.numeric_features:
            cell = record[name]
            if cell == "":
                numeric.append(0.0)
                missing.append(True)
            else:
                numeric.append(float(cell))
                missing.append(False)
        categorical = []
        for feat in schema.categorical_features:
            cell = record[feat.name]
            if cell == "" or cell not in feat.categories:
                cell = UNKNOWN_CATEGORY
            categorical.append(cell)
        tp = TimePoint(
            offset_minutes=float(record["offset_minutes"]),
            numeric_values=tuple(numeric),
            numeric_missing=tuple(missing),
            categorical_values=tuple(categorical),
        )
        stop = None
        if has_stops and record[STOP_OFFSET_COLUMN] != "":
            stop = float(record[STOP_OFFSET_COLUMN])
        entry = stays.setdefault(record["stay_id"], (record["patient_id"], [], []))
        entry[1].append(tp)
        entry[2].append(stop)
    return stays


def load_cohort(
    cohort_dir: Path,
    frequency_map: dict[str, float | None] | None = None,
    expand: bool = True,
) -> tuple[tuple[SourceSchema, ...], list[Episode], dict | None]:
    """Load a cohort directory into validated episodes.

    Administrations in frequency-bearing sources are expanded into repeated
    records up to their stop offsets unless ``expand`` is False.
    """
    cohort_dir = Path(cohort_dir)
    schemas = load_schemas(cohort_dir / "schema.json")
    frequency_map = DEFAULT_FREQUENCY_MAP if frequency_map is None else frequency_map

    targets_frame = _read_csv(cohort_dir / "targets.csv")
    tracks: dict[str, list[tuple[float, float]]] = {}
    for row in targets_frame.itertuples(index=False):
        tracks.setdefault(row.stay_id, []).append(
            (float(row.offset_minutes), float(row.value))
        )

    tags: dict[str, set[str]] = {}
    subgroups_path = cohort_dir / "subgroups.csv"
    if subgroups_path.exists():
        for row in _read_csv(subgroups_path).itertuples(index=False):
            tags.setdefault(row.stay_id, set()).add(row.tag)

    per_source: dict[int, dict] = {}
    patients: dict[str, str] = {}
    for schema in schemas:
        path = cohort_dir / "sources" / f"{schema.source_name}.csv"
        stays = _parse_source_rows(schema, _read_csv(path)) if path.exists() else {}
        per_source[schema.source_id] = stays
        for stay_id, (patient_id, _, _) in stays.items():
            patients.setdefault(stay_id, patient_id)

    episodes = []
    for stay_id in sorted(tracks):
        if stay_id not in patients:
            raise DataError(f"stay {stay_id}: no source rows to identify the patient")
        series = []
        for schema in schemas:
            entry = per_source[schema.source_id].get(stay_id)
            if entry is None:
                series.append(SourceSeries(schema.source_id, (), present=False))
                continue
            _, points, stops = entry
            order = sorted(range(len(points)), key=lambda i: points[i].offset_minutes)
            raw = SourceSeries(
                schema.source_id, tuple(points[i] for i in order), present=True
            )
            if expand and schema.frequency_feature is not None:
                freq_idx = schema.categorical_index(schema.frequency_feature)
                raw = expand_medications(
                    raw,
                    tuple(stops[i] for i in order),
                    frequency_map,
                    frequency_index=freq_idx,
                )
            series.append(raw)
        episode = Episode(
            stay_id=stay_id,
            patient_id=patients[stay_id],
            series=tuple(series),
            target_track=dedupe_target_track(tracks[stay_id]),
            subgroup_tags=frozenset(tags.get(stay_id, set())),
        )
        validate_episode(schemas, episode)
        episodes.append(episode)

    manifest_path = cohort_dir / "manifest.json"
    manifest = json.loads(manifest_path.read_text()) if manifest_path.exists() else None
    return schemas, episodes, manifest
