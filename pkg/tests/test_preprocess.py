"""Preprocessing tests: z-scoring, quantile removal, expansion, truncation,
placeholders."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glucopred.data import ABSENT_CATEGORY, SourceSeries, build_examples
from glucopred.preprocess import (
    DEFAULT_FREQUENCY_MAP,
    MAX_SEQUENCE_LENGTH,
    NormalizerState,
    apply_normalizer,
    example_view,
    expand_medications,
    fit_normalizer,
    normalize_episode,
    placeholder_missing_source,
    sorted_quantile,
    truncate_series,
)

from .conftest import lab_point, make_schemas, med_point, tracked_episode, vitals_point


def fit_on_track(schemas, labs_values, extra_labs=()):
    """Fit a normalizer on one episode whose glucose labs carry the given
    values at 60-minute spacing (enough readings to produce examples)."""
    n = len(labs_values) + 7  # track extends past every lab so all are visible
    track = [(60.0 * i, 120.0) for i in range(n)]
    labs = [lab_point(60.0 * i, v) for i, v in enumerate(labs_values)]
    labs += list(extra_labs)
    episode = tracked_episode(track)
    episode = episode.__class__(
        stay_id=episode.stay_id,
        patient_id=episode.patient_id,
        series=(
            episode.series[0],
            SourceSeries(2, tuple(sorted(labs, key=lambda t: t.offset_minutes))),
            episode.series[2],
        ),
        target_track=episode.target_track,
        subgroup_tags=episode.subgroup_tags,
    )
    examples = build_examples(episode)
    return fit_normalizer(schemas, examples), episode


class TestFitNormalizer:
    def test_population_moments(self, schemas):
        """Independent arithmetic: [1, 2, 3] has mean 2 and population std
        sqrt(2/3)."""
        state, _ = fit_on_track(schemas, [1.0, 2.0, 3.0])
        stats = state.lookup((2, "result", "glucose"))
        assert stats.mean == pytest.approx(2.0)
        assert stats.std == pytest.approx(math.sqrt(2.0 / 3.0), abs=1e-12)
        assert stats.std == pytest.approx(0.8165, abs=1e-4)
        assert not stats.flagged

    def test_constant_feature_flagged_std_zero(self, schemas):
        state, _ = fit_on_track(schemas, [5.0])
        stats = state.lookup((2, "result", "glucose"))
        assert stats.mean == 5.0
        assert stats.std == 0.0
        assert stats.flagged

    def test_per_dimension_statistics(self, schemas):
        extra = [lab_point(5.0 + i, 1.0 + i, name="lactate") for i in range(3)]
        state, _ = fit_on_track(schemas, [100.0, 110.0, 120.0], extra_labs=extra)
        glucose = state.lookup((2, "result", "glucose"))
        lactate = state.lookup((2, "result", "lactate"))
        assert glucose.mean == pytest.approx(110.0)
        assert lactate.mean == pytest.approx(2.0)

    def test_quantiles_match_full_sort_oracle(self, schemas):
        rng = np.random.default_rng(7)
        values = rng.normal(50.0, 12.0, size=10_000)
        state, _ = fit_on_track(schemas, list(values))
        stats = state.lookup((2, "result", "glucose"))

        # Oracle: count-based order statistic over an independently sorted copy.
        ordered = sorted(float(v) for v in values)
        low = ordered[math.ceil(0.0005 * len(ordered)) - 1]
        high = ordered[math.ceil(0.9995 * len(ordered)) - 1]
        assert stats.low == low
        assert stats.high == high

    def test_fit_ignores_records_past_last_cutoff(self, schemas):
        # A huge lab value after the final example cutoff must not move stats.
        track = [(60.0 * i, 120.0) for i in range(7)]
        labs = [lab_point(60.0 * i, 100.0) for i in range(7)]
        labs.append(lab_point(10_000.0, 9_999.0))
        episode = tracked_episode(track)
        episode = episode.__class__(
            stay_id="s1",
            patient_id="p1",
            series=(episode.series[0], SourceSeries(2, tuple(labs)), episode.series[2]),
            target_track=episode.target_track,
            subgroup_tags=frozenset(),
        )
        state = fit_normalizer(schemas, build_examples(episode))
        assert state.lookup((2, "result", "glucose")).mean == pytest.approx(100.0)

    def test_json_roundtrip(self, schemas):
        state, _ = fit_on_track(schemas, [1.0, 2.0, 3.0])
        restored = NormalizerState.from_json(state.to_json())
        assert restored.stats == state.stats
        assert restored.fitted_on == state.fitted_on


class TestApplyNormalizer:
    def test_centering_identity(self, schemas):
        state, episode = fit_on_track(schemas, [100.0, 110.0, 120.0])
        series = apply_normalizer(state, schemas[1], episode.series_for(2))
        assert series.time_points[1].numeric_values[0] == pytest.approx(0.0)

    def test_missing_numeric_imputes_zero(self, schemas):
        state, _ = fit_on_track(schemas, [100.0, 110.0, 120.0])
        from glucopred.data import TimePoint

        tp = TimePoint(10.0, (0.0,), (True,), ("glucose",))
        out = apply_normalizer(state, schemas[1], SourceSeries(2, (tp,)))
        assert out.time_points[0].numeric_values[0] == 0.0

    def test_zero_std_outputs_zero(self, schemas):
        from glucopred.preprocess import FeatureStats

        state = NormalizerState(
            stats={
                (1, "heart_rate", ""): FeatureStats(5.0, 0.0, -math.inf, math.inf, 1, True),
                (1, "spo2", ""): FeatureStats(97.0, 1.0, -math.inf, math.inf, 5, False),
            }
        )
        out = apply_normalizer(state, schemas[0], SourceSeries(1, (vitals_point(0.0, hr=123.0),)))
        assert out.time_points[0].numeric_values[0] == 0.0

    def test_outlier_record_dropped(self, schemas):
        rng = np.random.default_rng(3)
        values = list(rng.normal(100.0, 5.0, size=10_000))
        state, _ = fit_on_track(schemas, values)
        stats = state.lookup((2, "result", "glucose"))
        out = apply_normalizer(
            state,
            schemas[1],
            SourceSeries(
                2, (lab_point(0.0, stats.high + 1.0), lab_point(1.0, 100.0))
            ),
        )
        assert len(out.time_points) == 1
        assert out.time_points[0].offset_minutes == 1.0

    def test_unfiltered_source_never_drops(self, schemas):
        state, _ = fit_on_track(schemas, [100.0])
        wild = vitals_point(0.0, hr=1e6)
        out = apply_normalizer(state, schemas[0], SourceSeries(1, (wild,)))
        assert len(out.time_points) == 1

    def test_unseen_key_normalizes_to_zero(self, schemas):
        state, _ = fit_on_track(schemas, [100.0, 120.0])
        out = apply_normalizer(
            state, schemas[1], SourceSeries(2, (lab_point(0.0, 3.0, name="lactate"),))
        )
        assert out.time_points[0].numeric_values[0] == 0.0

    def test_roundtrip_within_tolerance(self, schemas):
        state, episode = fit_on_track(schemas, [90.0, 100.0, 125.0, 140.0])
        stats = state.lookup((2, "result", "glucose"))
        for x in (90.0, 100.0, 125.0, 140.0, 117.0):
            assert stats.denormalize(stats.normalize(x)) == pytest.approx(x, abs=1e-9)

    def test_not_idempotent_unless_standardized(self, schemas):
        """Re-applying the same state is not a no-op; a state fitted on the
        normalized output is (mean 0, std 1)."""
        track = [(60.0 * i, 120.0) for i in range(8)]
        vitals = [vitals_point(60.0 * i, hr=70.0 + 5.0 * i) for i in range(6)]
        episode = tracked_episode(track)
        episode = episode.__class__(
            stay_id="s1",
            patient_id="p1",
            series=(SourceSeries(1, tuple(vitals)), episode.series[1], episode.series[2]),
            target_track=episode.target_track,
            subgroup_tags=frozenset(),
        )
        state = fit_normalizer(schemas, build_examples(episode))
        once = apply_normalizer(state, schemas[0], episode.series_for(1))
        twice = apply_normalizer(state, schemas[0], once)
        assert (
            once.time_points[0].numeric_values != twice.time_points[0].numeric_values
        )

        normalized_values = [tp.numeric_values[0] for tp in once.time_points]
        assert float(np.mean(normalized_values)) == pytest.approx(0.0, abs=1e-12)
        assert float(np.std(normalized_values)) == pytest.approx(1.0, abs=1e-12)


def expansion_oracle(start, stop, interval):
    """Arithmetic progression start, start+interval, ... capped at stop."""
    out = []
    k = 0
    while start + k * interval <= stop:
        out.append(start + k * interval)
        k += 1
    return out


class TestExpandMedications:
    FREQ_IDX = 1  # index of "frequency" among the meds categorical features

    def test_progression(self):
        series = SourceSeries(3, (med_point(0.0, 4.0, frequency="q2h"),))
        out = expand_medications(series, (360.0,), DEFAULT_FREQUENCY_MAP, self.FREQ_IDX)
        assert [tp.offset_minutes for tp in out.time_points] == [0.0, 120.0, 240.0, 360.0]
        assert [tp.offset_minutes for tp in out.time_points] == expansion_oracle(
            0.0, 360.0, 120.0
        )

    @given(
        start=st.floats(min_value=0, max_value=500),
        extent=st.floats(min_value=0, max_value=3000),
        interval=st.sampled_from([60.0, 120.0, 240.0]),
    )
    @settings(max_examples=50)
    def test_matches_progression_oracle(self, start, extent, interval):
        freq = {60.0: "q1h", 120.0: "q2h", 240.0: "q4h"}[interval]
        series = SourceSeries(3, (med_point(start, 1.0, frequency=freq),))
        out = expand_medications(
            series, (start + extent,), DEFAULT_FREQUENCY_MAP, self.FREQ_IDX
        )
        assert [tp.offset_minutes for tp in out.time_points] == expansion_oracle(
            start, start + extent, interval
        )

    def test_stop_equals_start_single_record(self):
        series = SourceSeries(3, (med_point(50.0, 4.0, frequency="q2h"),))
        out = expand_medications(series, (50.0,), DEFAULT_FREQUENCY_MAP, self.FREQ_IDX)
        assert len(out.time_points) == 1

    def test_stop_before_start_kept_once(self):
        series = SourceSeries(3, (med_point(100.0, 4.0, frequency="q2h"),))
        out = expand_medications(series, (10.0,), DEFAULT_FREQUENCY_MAP, self.FREQ_IDX)
        assert [tp.offset_minutes for tp in out.time_points] == [100.0]

    def test_unknown_frequency_passthrough(self):
        series = SourceSeries(
            3, (med_point(0.0, 4.0, frequency="once"), med_point(5.0, 2.0, frequency="unknown"))
        )
        out = expand_medications(
            series, (400.0, 400.0), DEFAULT_FREQUENCY_MAP, self.FREQ_IDX
        )
        assert out.time_points == series.time_points

    def test_replicas_preserve_features_and_order(self):
        series = SourceSeries(
            3,
            (med_point(0.0, 4.0, frequency="q4h"), med_point(30.0, 9.0, frequency="once")),
        )
        out = expand_medications(
            series, (480.0, None), DEFAULT_FREQUENCY_MAP, self.FREQ_IDX
        )
        offsets = [tp.offset_minutes for tp in out.time_points]
        assert offsets == sorted(offsets)
        doses = {tp.offset_minutes: tp.numeric_values[0] for tp in out.time_points}
        assert doses[240.0] == 4.0 and doses[30.0] == 9.0


class TestTruncateSeries:
    def _series(self, n):
        return SourceSeries(1, tuple(vitals_point(float(i)) for i in range(n)))

    def test_keeps_latest(self):
        out = truncate_series(self._series(600))
        assert len(out.time_points) == MAX_SEQUENCE_LENGTH
        assert out.time_points[0].offset_minutes == 88.0
        assert out.time_points[-1].offset_minutes == 599.0

    def test_boundary_identity(self):
        series = self._series(512)
        assert truncate_series(series) is series

    def test_empty_identity(self):
        series = SourceSeries(1, ())
        assert truncate_series(series) is series

    def test_idempotent(self):
        series = self._series(700)
        once = truncate_series(series)
        assert truncate_series(once) is once


class TestPlaceholder:
    def test_absent_source_gets_single_placeholder(self, schemas):
        out = placeholder_missing_source(schemas[2], SourceSeries(3, (), present=False))
        assert len(out.time_points) == 1
        assert out.present
        tp = out.time_points[0]
        assert tp.offset_minutes == 0.0
        assert tp.categorical_values == (ABSENT_CATEGORY, ABSENT_CATEGORY)
        assert tp.numeric_missing == (True,)

    def test_present_source_identity(self, schemas):
        series = SourceSeries(3, (med_point(0.0, 1.0),))
        assert placeholder_missing_source(schemas[2], series) is series


class TestExampleView:
    def test_slices_truncates_and_fills(self, schemas):
        track = [(60.0 * i, 120.0) for i in range(10)]
        labs = [lab_point(t, v) for t, v in track]
        vitals = [vitals_point(float(i)) for i in range(600)]
        episode = tracked_episode(track)
        episode = episode.__class__(
            stay_id="s1",
            patient_id="p1",
            series=(
                SourceSeries(1, tuple(vitals)),
                SourceSeries(2, tuple(labs)),
                SourceSeries(3, (), present=False),
            ),
            target_track=episode.target_track,
            subgroup_tags=frozenset(),
        )
        examples = build_examples(episode)
        state = fit_normalizer(schemas, examples)
        arrays = normalize_episode(state, schemas, episode)

        view = example_view(arrays, schemas, cutoff=240.0)
        assert view[1].offsets.max() <= 240.0
        assert len(view[1].offsets) == 241
        assert len(view[2].offsets) == 5
        # Absent meds produce a placeholder row.
        assert view[3].offsets.tolist() == [0.0]
        assert not view[3].present

        # Truncation: a cutoff deep into the dense vitals keeps the latest 512.
        wide = example_view(arrays, schemas, cutoff=599.0, max_len=512)
        assert len(wide[1].offsets) == 512
        assert wide[1].offsets[0] == 88.0

    def test_view_never_exceeds_cutoff(self, schemas):
        track = [(60.0 * i, 120.0) for i in range(8)]
        episode = tracked_episode(track)
        examples = build_examples(episode)
        state = fit_normalizer(schemas, examples)
        arrays = normalize_episode(state, schemas, episode)
        for ex in examples:
            view = example_view(arrays, schemas, ex.cutoff_offset)
            for src in view.values():
                if src.present:
                    assert src.offsets.max() <= ex.cutoff_offset


class TestSortedQuantile:
    @given(
        st.lists(st.floats(min_value=-1e6, max_value=1e6), min_size=1, max_size=200),
        st.floats(min_value=0.0001, max_value=0.9999),
    )
    @settings(max_examples=100)
    def test_matches_counting_definition(self, values, q):
        result = sorted_quantile(np.array(values), q)
        # Smallest value v such that at least ceil(q*n) observations are <= v.
        need = max(1, math.ceil(q * len(values)))
        assert sum(1 for v in values if v <= result) >= need
        below = [v for v in values if v < result]
        assert sum(1 for v in values if v <= max(below)) < need if below else True
