import numpy as np
import pytest

from glucopred.data import (
    CategoricalFeature,
    Episode,
    SourceSchema,
    SourceSeries,
    TimePoint,
)

RESERVED = ("unknown", "absent-source")


def make_schemas() -> tuple[SourceSchema, ...]:
    """A small three-source schema set used across unit tests."""
    return (
        SourceSchema(
            source_id=1,
            source_name="vitals",
            numeric_features=("heart_rate", "spo2"),
            categorical_features=(
                CategoricalFeature("context", ("routine", "alarm") + RESERVED),
            ),
            embed_width_hint=16,
        ),
        SourceSchema(
            source_id=2,
            source_name="labs",
            numeric_features=("result",),
            categorical_features=(
                CategoricalFeature("test_name", ("glucose", "lactate") + RESERVED),
            ),
            embed_width_hint=32,
            dimension_feature="test_name",
            outlier_filtered=True,
        ),
        SourceSchema(
            source_id=3,
            source_name="meds",
            numeric_features=("dose",),
            categorical_features=(
                CategoricalFeature("drug", ("insulin", "dextrose") + RESERVED),
                CategoricalFeature("frequency", ("once", "q2h", "q4h") + RESERVED),
            ),
            embed_width_hint=32,
            frequency_feature="frequency",
        ),
    )


def vitals_point(offset, hr=80.0, spo2=97.0, context="routine"):
    return TimePoint(offset, (hr, spo2), (False, False), (context,))


def lab_point(offset, value, name="glucose"):
    return TimePoint(offset, (value,), (False,), (name,))


def med_point(offset, dose, drug="insulin", frequency="once"):
    return TimePoint(offset, (dose,), (False,), (drug, frequency))


def make_episode(
    target_track,
    stay_id="s1",
    patient_id="p1",
    vitals=(),
    labs=(),
    meds=(),
    tags=frozenset(),
):
    return Episode(
        stay_id=stay_id,
        patient_id=patient_id,
        series=(
            SourceSeries(1, tuple(vitals), present=bool(vitals)),
            SourceSeries(2, tuple(labs), present=bool(labs)),
            SourceSeries(3, tuple(meds), present=bool(meds)),
        ),
        target_track=tuple(target_track),
        subgroup_tags=frozenset(tags),
    )


def tracked_episode(offsets_values, **kwargs):
    """Episode whose glucose labs mirror the target track."""
    labs = [lab_point(t, v) for t, v in offsets_values]
    return make_episode(offsets_values, labs=labs, **kwargs)


@pytest.fixture
def schemas():
    return make_schemas()


def tiny_model_config(**overrides):
    """Desk-scale config for scalar oracles and finite-difference checks."""
    from glucopred.model import ModelConfig

    defaults = dict(
        depth=1,
        heads=1,
        head_dim=4,
        joint_dim=4,
        fusion_dim=4,
        ff_mult=1,
        dropout=0.0,
        embed_width_override=4,
    )
    defaults.update(overrides)
    return ModelConfig(**defaults)


def random_views(schemas, rng, batch_size=2, t_range=(1, 6)):
    """Random normalized example views, one SourceArrays per source."""
    from glucopred.preprocess import SourceArrays

    views = []
    for _ in range(batch_size):
        view = {}
        for schema in schemas:
            t = int(rng.integers(*t_range))
            offsets = np.sort(rng.uniform(0.0, 600.0, size=t))
            numeric = rng.normal(0.0, 1.0, size=(t, schema.n_numeric))
            cat_ids = np.stack(
                [
                    rng.integers(0, len(feat.categories), size=t)
                    for feat in schema.categorical_features
                ],
                axis=-1,
            ).reshape(t, schema.n_categorical)
            view[schema.source_id] = SourceArrays(
                offsets=offsets, numeric=numeric, cat_ids=cat_ids, present=True
            )
        views.append(view)
    return views
