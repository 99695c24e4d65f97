"""Cohort serialization round-trips through the CSV/JSON ingestion format."""

import pytest

from glucopred.data import DataError, SourceSeries, validate_episode
from glucopred.io import load_cohort, load_schemas, save_schemas, write_cohort

from .conftest import lab_point, make_episode, make_schemas, med_point, vitals_point


@pytest.fixture
def cohort(schemas):
    track = [(60.0 * i, 100.0 + 10.0 * i) for i in range(8)]
    ep1 = make_episode(
        track,
        stay_id="stay-1",
        patient_id="pat-1",
        vitals=[vitals_point(15.0 * i, hr=70.0 + i) for i in range(10)],
        labs=[lab_point(t, v) for t, v in track],
        meds=[med_point(30.0, 4.0, frequency="q2h")],
        tags={"t2dm"},
    )
    ep2 = make_episode(
        [(30.0 * i, 120.0) for i in range(7)],
        stay_id="stay-2",
        patient_id="pat-2",
        vitals=[vitals_point(10.0, hr=82.0)],
        labs=[lab_point(5.0, 1.4, name="lactate")],
        meds=[],
    )
    return [ep1, ep2]


class TestSchemaRoundtrip:
    def test_roundtrip(self, tmp_path, schemas):
        save_schemas(tmp_path / "schema.json", schemas)
        assert load_schemas(tmp_path / "schema.json") == schemas


class TestCohortRoundtrip:
    def test_roundtrip_without_expansion(self, tmp_path, schemas, cohort):
        write_cohort(tmp_path, schemas, cohort)
        loaded_schemas, episodes, _ = load_cohort(tmp_path, expand=False)
        assert loaded_schemas == schemas
        assert len(episodes) == 2
        by_id = {e.stay_id: e for e in episodes}
        for original in cohort:
            loaded = by_id[original.stay_id]
            assert loaded.patient_id == original.patient_id
            assert loaded.target_track == original.target_track
            assert loaded.subgroup_tags == original.subgroup_tags
            for s_orig in original.series:
                s_load = loaded.series_for(s_orig.source_id)
                assert s_load.present == s_orig.present
                assert s_load.time_points == s_orig.time_points

    def test_expansion_applied_at_load(self, tmp_path, schemas, cohort):
        stops = {("stay-1", 3): (270.0,)}
        write_cohort(tmp_path, schemas, cohort, stop_offsets=stops)
        _, episodes, _ = load_cohort(tmp_path, expand=True)
        meds = next(e for e in episodes if e.stay_id == "stay-1").series_for(3)
        assert [tp.offset_minutes for tp in meds.time_points] == [30.0, 150.0, 270.0]

    def test_missing_numeric_and_unknown_category(self, tmp_path, schemas, cohort):
        write_cohort(tmp_path, schemas, cohort)
        csv = tmp_path / "sources" / "labs.csv"
        text = csv.read_text()
        # Blank out a numeric cell and inject an out-of-vocabulary category.
        lines = text.splitlines()
        parts = lines[1].split(",")
        parts[3] = ""
        parts[4] = "never-seen-lab"
        lines[1] = ",".join(parts)
        csv.write_text("\n".join(lines) + "\n")

        loaded_schemas, episodes, _ = load_cohort(tmp_path, expand=False)
        labs = next(e for e in episodes if e.stay_id == "stay-1").series_for(2)
        assert labs.time_points[0].numeric_missing[0]
        assert labs.time_points[0].numeric_values[0] == 0.0
        assert labs.time_points[0].categorical_values[0] == "unknown"
        for episode in episodes:
            validate_episode(loaded_schemas, episode)

    def test_loaded_episodes_validate(self, tmp_path, schemas, cohort):
        write_cohort(tmp_path, schemas, cohort, manifest={"seed": 7})
        loaded_schemas, episodes, manifest = load_cohort(tmp_path)
        assert manifest == {"seed": 7}
        for episode in episodes:
            validate_episode(loaded_schemas, episode)

    def test_unexpected_column_rejected(self, tmp_path, schemas, cohort):
        write_cohort(tmp_path, schemas, cohort)
        csv = tmp_path / "sources" / "vitals.csv"
        lines = csv.read_text().splitlines()
        lines[0] += ",mystery"
        lines[1:] = [line + ",1" for line in lines[1:]]
        csv.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataError):
            load_cohort(tmp_path)
