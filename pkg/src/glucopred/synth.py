"""Synthetic multi-source cohort generator with a planted causal structure.

The latent glucose of a patient follows a mean-reverting noise process around
a per-patient baseline, shifted by lagged administration effects: insulin-like
doses pull glucose down along a delayed kernel, dextrose-like doses push it
up. Glucose readings (the prediction target) sample this latent path at
irregular gaps. Administration records, correlated lab values, and weakly
coupled vitals land in the input sources, so transitions are anticipatable
from the inputs while carrying the current class forward is not enough.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import (
    CLASS_NAMES,
    N_CLASSES,
    CategoricalFeature,
    DataError,
    Episode,
    SourceSchema,
    SourceSeries,
    TimePoint,
    build_examples,
    classify_target,
    validate_episode,
)
from .preprocess import DEFAULT_FREQUENCY_MAP, expand_medications

RESERVED = ("unknown", "absent-source")

STATIC, VITALS, LABS, MEDS, DIAGNOSIS = 1, 2, 3, 4, 5

INSULIN_DRUGS = ("insulin-rapid", "insulin-basal")
DEXTROSE_DRUG = "dextrose-bolus"
STEROID_DRUG = "steroid-course"


def default_schemas() -> tuple[SourceSchema, ...]:
    """The five default sources emitted by the generator."""
    return (
        SourceSchema(
            source_id=STATIC,
            source_name="static",
            numeric_features=("age", "weight"),
            categorical_features=(
                CategoricalFeature("sex", ("female", "male") + RESERVED),
                CategoricalFeature("unit", ("micu", "sicu", "ccu") + RESERVED),
            ),
            embed_width_hint=32,
        ),
        SourceSchema(
            source_id=VITALS,
            source_name="vitals",
            numeric_features=("heart_rate", "spo2"),
            categorical_features=(
                CategoricalFeature("context", ("routine", "alarm") + RESERVED),
            ),
            embed_width_hint=16,
        ),
        SourceSchema(
            source_id=LABS,
            source_name="labs",
            numeric_features=("result",),
            categorical_features=(
                CategoricalFeature(
                    "test_name", ("glucose", "lactate", "potassium") + RESERVED
                ),
            ),
            embed_width_hint=32,
            dimension_feature="test_name",
            outlier_filtered=True,
        ),
        SourceSchema(
            source_id=MEDS,
            source_name="meds",
            numeric_features=("dose",),
            categorical_features=(
                CategoricalFeature("drug", INSULIN_DRUGS + (DEXTROSE_DRUG, STEROID_DRUG) + RESERVED),
                CategoricalFeature(
                    "frequency", ("once", "q2h", "q4h", "q6h") + RESERVED
                ),
            ),
            embed_width_hint=32,
            frequency_feature="frequency",
        ),
        SourceSchema(
            source_id=DIAGNOSIS,
            source_name="diagnosis",
            numeric_features=(),
            categorical_features=(
                CategoricalFeature(
                    "diagnosis", ("t1dm", "t2dm", "sepsis", "trauma", "none") + RESERVED
                ),
                CategoricalFeature("priority", ("primary", "secondary") + RESERVED),
            ),
            embed_width_hint=32,
        ),
    )


@dataclass(frozen=True)
class PatientTypeParams:
    weight: float
    baseline_shift: float
    latent_sd_mult: float
    meas_noise_sd: float
    insulin_rate_per_day: float
    dextrose_rate_per_day: float
    steroid_rate_per_day: float
    insulin_sensitivity: float


def _default_patient_types() -> dict[str, PatientTypeParams]:
    return {
        "nondiabetic": PatientTypeParams(
            weight=0.40,
            baseline_shift=-10.0,
            latent_sd_mult=0.9,
            meas_noise_sd=2.5,
            insulin_rate_per_day=3.5,
            dextrose_rate_per_day=3.5,
            steroid_rate_per_day=0.25,
            insulin_sensitivity=1.0,
        ),
        "t2dm": PatientTypeParams(
            weight=0.38,
            baseline_shift=4.0,
            latent_sd_mult=1.0,
            meas_noise_sd=3.0,
            insulin_rate_per_day=6.0,
            dextrose_rate_per_day=5.0,
            steroid_rate_per_day=0.40,
            insulin_sensitivity=0.85,
        ),
        "t1dm": PatientTypeParams(
            weight=0.22,
            baseline_shift=8.0,
            latent_sd_mult=1.3,
            meas_noise_sd=4.0,
            insulin_rate_per_day=8.0,
            dextrose_rate_per_day=6.5,
            steroid_rate_per_day=0.50,
            insulin_sensitivity=1.25,
        ),
    }


@dataclass(frozen=True)
class KernelParams:
    """Delayed-onset unit-peak response: nothing until ``delay_minutes``,
    a rise with time constant ``rise_minutes``, then exponential decay."""

    delay_minutes: float
    rise_minutes: float
    decay_minutes: float

    def peak_time(self) -> float:
        r, d = self.rise_minutes, self.decay_minutes
        return self.delay_minutes + r * math.log(1.0 + d / r)

    def peak_raw(self) -> float:
        u = self.peak_time() - self.delay_minutes
        return (1.0 - math.exp(-u / self.rise_minutes)) * math.exp(-u / self.decay_minutes)


def event_kernel(tau: np.ndarray, params: KernelParams) -> np.ndarray:
    """Normalized lagged response, peaking at 1."""
    u = np.asarray(tau, dtype=float) - params.delay_minutes
    raw = np.where(
        u > 0,
        (1.0 - np.exp(-np.maximum(u, 0.0) / params.rise_minutes))
        * np.exp(-np.maximum(u, 0.0) / params.decay_minutes),
        0.0,
    )
    return raw / params.peak_raw()


def apply_event_kernel(
    grid: np.ndarray,
    event_times: np.ndarray,
    event_magnitudes: np.ndarray,
    params: KernelParams,
) -> np.ndarray:
    """Summed lagged effect of all events on every grid point."""
    effect = np.zeros_like(np.asarray(grid, dtype=float))
    for s, magnitude in zip(event_times, event_magnitudes):
        effect += magnitude * event_kernel(grid - s, params)
    return effect


@dataclass(frozen=True)
class GeneratorConfig:
    """Knobs of the synthetic cohort; defaults are calibrated so labeled
    examples approximate the target class prevalences."""

    seed: int = 0
    n_patients: int = 100
    # Target label prevalence in class order (hypo, euglycemia, hyper).
    target_prevalence: tuple[float, float, float] = (0.019, 0.749, 0.232)

    baseline_mean: float = 137.0
    baseline_sd: float = 12.0
    reversion_halflife_minutes: float = 120.0
    latent_sd: float = 7.0
    # Affine recalibration of the latent path. The defaults were fit with
    # calibrate_generator so default cohorts land on the target prevalences;
    # refit after changing any latent or event knob.
    latent_offset: float = 35.55957864883905
    latent_scale: float = 0.8785913707491542

    insulin_kernel: KernelParams = KernelParams(80.0, 15.0, 50.0)
    insulin_amplitude: float = 10.0  # mg/dL per dose unit at the kernel peak
    dextrose_kernel: KernelParams = KernelParams(75.0, 10.0, 42.0)
    dextrose_amplitude: float = 24.0
    steroid_kernel: KernelParams = KernelParams(150.0, 60.0, 200.0)
    steroid_amplitude: float = 9.0
    dose_log_mean: float = math.log(4.0)
    dose_log_sd: float = 0.7
    recurring_insulin_prob: float = 0.15

    min_measurements: int = 12
    max_measurements: int = 32
    gap_range_minutes: tuple[float, float] = (5.0, 600.0)
    # Per-patient measurement rhythm: gap = rhythm_center * jitter, clipped to
    # gap_range. Centers are log-uniform; jitter spreads a factor either way.
    rhythm_center_range: tuple[float, float] = (15.0, 240.0)
    rhythm_spread_factor: float = 3.0
    first_measurement_range: tuple[float, float] = (20.0, 90.0)
    measurement_floor: float = 20.0
    latent_floor: float = 38.0  # counter-regulation keeps the path off absurd lows

    vitals_interval_minutes: float = 15.0
    dense_vitals_interval_minutes: float = 4.0
    dense_monitoring_prob: float = 0.02
    lab_interval_minutes: float = 360.0
    lab_error_prob: float = 0.002  # data-entry outliers, exercised by filtering

    missing_source_probs: dict[str, float] = field(
        default_factory=lambda: {"static": 0.02, "vitals": 0.02, "diagnosis": 0.08}
    )
    patient_types: dict[str, PatientTypeParams] = field(
        default_factory=_default_patient_types
    )

    def __post_init__(self):
        lo, hi = self.gap_range_minutes
        if not (5.0 <= lo < hi <= 600.0):
            raise DataError(f"gap range must sit within [5, 600], got {self.gap_range_minutes}")
        for name, value in (
            ("reversion_halflife_minutes", self.reversion_halflife_minutes),
                        ("insulin_kernel.rise_minutes", self.insulin_kernel.rise_minutes),
            ("insulin_kernel.decay_minutes", self.insulin_kernel.decay_minutes),
                        ("dextrose_kernel.rise_minutes", self.dextrose_kernel.rise_minutes),
            ("dextrose_kernel.decay_minutes", self.dextrose_kernel.decay_minutes),
            ("latent_scale", self.latent_scale),
        ):
            if value <= 0:
                raise DataError(f"{name} must be positive, got {value}")
        for name, value in (
            ("baseline_sd", self.baseline_sd),
            ("latent_sd", self.latent_sd),
            ("insulin_amplitude", self.insulin_amplitude),
            ("dextrose_amplitude", self.dextrose_amplitude),
        ):
            if value < 0:
                raise DataError(f"{name} must be nonnegative, got {value}")
        weights = [t.weight for t in self.patient_types.values()]
        if abs(sum(weights) - 1.0) > 1e-9:
            raise DataError("patient type weights must sum to 1")


def _patient_rng(seed: int, patient_id: str) -> np.random.Generator:
    digest = hashlib.sha256(patient_id.encode()).digest()
    key = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([seed, key]))


def _soft_floor(values: np.ndarray, floor: float, width: float = 12.0) -> np.ndarray:
    """Smooth monotone clamp: identity far above the floor, asymptoting to
    the floor below it (no atom at the boundary)."""
    x = (np.asarray(values, dtype=float) - floor) / width
    return floor + width * np.where(x > 30.0, x, np.log1p(np.exp(np.minimum(x, 30.0))))


def _simulate_noise_path(rng, n: int, halflife: float, stationary_sd: float) -> np.ndarray:
    phi = math.exp(-math.log(2.0) / halflife)
    draws = rng.normal(0.0, 1.0, size=n)
    path = np.empty(n)
    path[0] = stationary_sd * draws[0]
    step_sd = stationary_sd * math.sqrt(1.0 - phi * phi)
    for i in range(1, n):
        path[i] = phi * path[i - 1] + step_sd * draws[i]
    return path


def _draw_administrations(rng, cfg: GeneratorConfig, params, duration: float):
    """Raw medication orders plus their per-order stop offsets."""
    raw_points, raw_stops = [], []
    n_insulin = rng.poisson(params.insulin_rate_per_day * duration / 1440.0)
    n_dextrose = rng.poisson(params.dextrose_rate_per_day * duration / 1440.0)
    for _ in range(n_insulin):
        start = float(rng.uniform(0.0, duration * 0.9))
        dose = float(rng.lognormal(cfg.dose_log_mean, cfg.dose_log_sd))
        if rng.uniform() < cfg.recurring_insulin_prob:
            # Scheduled maintenance dosing: smaller doses, announced by the
            # frequency category and repeated up to the stop offset.
            drug = "insulin-basal"
            dose *= 0.5
            frequency = ("q2h", "q4h", "q6h")[int(rng.integers(3))]
            interval = DEFAULT_FREQUENCY_MAP[frequency]
            stop = start + float(rng.integers(1, 4)) * interval
        else:
            drug, frequency, stop = "insulin-rapid", "once", None
        raw_points.append(
            TimePoint(start, (round(dose, 2),), (False,), (drug, frequency))
        )
        raw_stops.append(stop)
    for _ in range(n_dextrose):
        start = float(rng.uniform(0.0, duration * 0.9))
        dose = float(rng.lognormal(math.log(3.0), cfg.dose_log_sd))
        raw_points.append(
            TimePoint(start, (round(dose, 2),), (False,), (DEXTROSE_DRUG, "once"))
        )
        raw_stops.append(None)
    n_steroid = rng.poisson(params.steroid_rate_per_day * duration / 1440.0)
    for _ in range(n_steroid):
        start = float(rng.uniform(0.0, duration * 0.9))
        dose = float(rng.lognormal(math.log(3.0), 0.4))
        frequency = ("q4h", "q6h")[int(rng.integers(2))]
        interval = DEFAULT_FREQUENCY_MAP[frequency]
        stop = start + float(rng.integers(2, 4)) * interval
        raw_points.append(
            TimePoint(start, (round(dose, 2),), (False,), (STEROID_DRUG, frequency))
        )
        raw_stops.append(stop)
    order = sorted(range(len(raw_points)), key=lambda i: raw_points[i].offset_minutes)
    return [raw_points[i] for i in order], [raw_stops[i] for i in order]


def _generate_patient(config: GeneratorConfig, patient_id: str):
    rng = _patient_rng(config.seed, patient_id)
    type_names = list(config.patient_types)
    weights = [config.patient_types[t].weight for t in type_names]
    patient_type = type_names[rng.choice(len(type_names), p=weights)]
    params = config.patient_types[patient_type]

    n_meas = int(rng.integers(config.min_measurements, config.max_measurements + 1))
    lo, hi = config.gap_range_minutes
    c_lo, c_hi = config.rhythm_center_range
    rhythm = math.exp(rng.uniform(math.log(c_lo), math.log(c_hi)))
    spread = math.log(config.rhythm_spread_factor)
    gaps = np.clip(
        rhythm * np.exp(rng.uniform(-spread, spread, size=n_meas - 1)), lo, hi
    )
    t0 = rng.uniform(*config.first_measurement_range)
    meas_times = t0 + np.concatenate([[0.0], np.cumsum(gaps)])
    duration = float(meas_times[-1]) + 120.0

    grid = np.arange(0.0, math.ceil(duration) + 1.0)
    noise = _simulate_noise_path(
        rng,
        len(grid),
        config.reversion_halflife_minutes,
        config.latent_sd * params.latent_sd_mult,
    )
    baseline = (
        config.baseline_mean + params.baseline_shift + rng.normal(0.0, config.baseline_sd)
    )

    raw_meds, raw_stops = _draw_administrations(rng, config, params, duration)
    raw_series = SourceSeries(MEDS, tuple(raw_meds), present=bool(raw_meds))
    freq_idx = 1  # "frequency" position among the meds categoricals
    expanded = expand_medications(
        raw_series, tuple(raw_stops), DEFAULT_FREQUENCY_MAP, freq_idx
    ) if raw_meds else raw_series

    ins_times, ins_mags = [], []
    dex_times, dex_mags = [], []
    ster_times, ster_mags = [], []
    for tp in expanded.time_points:
        dose = tp.numeric_values[0]
        drug = tp.categorical_values[0]
        if drug == DEXTROSE_DRUG:
            dex_times.append(tp.offset_minutes)
            dex_mags.append(dose * config.dextrose_amplitude)
        elif drug == STEROID_DRUG:
            ster_times.append(tp.offset_minutes)
            ster_mags.append(dose * config.steroid_amplitude)
        else:
            ins_times.append(tp.offset_minutes)
            ins_mags.append(dose * config.insulin_amplitude * params.insulin_sensitivity)
    effect = (
        apply_event_kernel(grid, np.array(dex_times), np.array(dex_mags), config.dextrose_kernel)
        + apply_event_kernel(grid, np.array(ster_times), np.array(ster_mags), config.steroid_kernel)
        - apply_event_kernel(grid, np.array(ins_times), np.array(ins_mags), config.insulin_kernel)
    )

    latent = _soft_floor(
        config.latent_offset + config.latent_scale * (baseline + noise + effect),
        config.latent_floor,
    )

    def latent_at(t: np.ndarray) -> np.ndarray:
        idx = np.clip(np.rint(t).astype(int), 0, len(grid) - 1)
        return latent[idx]

    meas_noise = rng.normal(0.0, params.meas_noise_sd, size=n_meas)
    values = _soft_floor(
        latent_at(meas_times) + meas_noise, config.measurement_floor
    ).round(1)
    target_track = tuple((float(t), float(v)) for t, v in zip(meas_times, values))

    # Labs: glucose rows mirror the target track; slower panels correlate
    # weakly with the latent path; rare wild values exercise outlier removal.
    lab_points = [
        TimePoint(float(t), (float(v),), (False,), ("glucose",))
        for t, v in target_track
    ]
    for name, base, coupling, sd, floor in (
        ("lactate", 1.8, 0.010, 0.25, 0.3),
        ("potassium", 4.1, 0.0, 0.35, 1.0),
    ):
        t = rng.uniform(0.0, config.lab_interval_minutes)
        while t < duration:
            value = base + coupling * (float(latent_at(np.array([t]))[0]) - 120.0)
            value += rng.normal(0.0, sd)
            value = max(floor, value)
            if rng.uniform() < config.lab_error_prob:
                value *= 10.0
            lab_points.append(TimePoint(float(t), (round(value, 2),), (False,), (name,)))
            t += config.lab_interval_minutes * float(rng.uniform(0.6, 1.4))
    lab_points.sort(key=lambda tp: tp.offset_minutes)

    dense = rng.uniform() < config.dense_monitoring_prob
    interval = (
        config.dense_vitals_interval_minutes if dense else config.vitals_interval_minutes
    )
    vit_times = np.arange(float(rng.uniform(0.0, interval)), duration, interval)
    hr = 74.0 + 0.12 * (latent_at(vit_times) - 120.0) + rng.normal(0.0, 6.0, len(vit_times))
    spo2 = np.clip(97.0 + rng.normal(0.0, 1.2, len(vit_times)), 85.0, 100.0)
    vit_points = [
        TimePoint(
            float(t),
            (round(float(h), 1), round(float(s), 1)),
            (False, False),
            ("alarm" if h > 115.0 else "routine",),
        )
        for t, h, s in zip(vit_times, hr, spo2)
    ]

    static_points = [
        TimePoint(
            0.0,
            (float(rng.integers(35, 91)), round(float(rng.normal(82.0, 16.0)), 1)),
            (False, False),
            (
                ("female", "male")[int(rng.integers(2))],
                ("micu", "sicu", "ccu")[int(rng.integers(3))],
            ),
        )
    ]

    diag_points = []
    if patient_type != "nondiabetic" or rng.uniform() < 0.5:
        label = patient_type if patient_type != "nondiabetic" else "none"
        diag_points.append(
            TimePoint(float(rng.uniform(0.0, 60.0)), (), (), (label, "primary"))
        )
    if rng.uniform() < 0.4:
        extra = ("sepsis", "trauma")[int(rng.integers(2))]
        diag_points.append(
            TimePoint(float(rng.uniform(0.0, 120.0)), (), (), (extra, "secondary"))
        )
    diag_points.sort(key=lambda tp: tp.offset_minutes)

    missing = config.missing_source_probs
    keep_static = rng.uniform() >= missing.get("static", 0.0)
    keep_vitals = rng.uniform() >= missing.get("vitals", 0.0)
    keep_diag = rng.uniform() >= missing.get("diagnosis", 0.0)

    def series(source_id, points, keep=True):
        points = tuple(points) if keep else ()
        return SourceSeries(source_id, points, present=bool(points))

    tags = {patient_type} | ({"dense-monitoring"} if dense else set())
    episode = Episode(
        stay_id=f"stay-{patient_id}",
        patient_id=patient_id,
        series=(
            series(STATIC, static_points, keep_static),
            series(VITALS, vit_points, keep_vitals),
            series(LABS, lab_points),
            series(MEDS, expanded.time_points),
            series(DIAGNOSIS, diag_points, keep_diag),
        ),
        target_track=target_track,
        subgroup_tags=frozenset(tags),
    )
    return episode, raw_meds, raw_stops


def generate_episode(config: GeneratorConfig, patient_id: str) -> Episode:
    """One fully reproducible episode; administrations arrive pre-expanded."""
    episode, _, _ = _generate_patient(config, patient_id)
    return episode


def patient_ids(config: GeneratorConfig) -> list[str]:
    return [f"P{i:05d}" for i in range(config.n_patients)]


def generate_cohort(config: GeneratorConfig):
    """All episodes plus a manifest of achieved label statistics.

    Returns (episodes, raw_med_stop_offsets, manifest); the stop offsets feed
    the CSV writer so loading re-expands administrations identically."""
    if config.n_patients < 1:
        raise DataError("n_patients must be >= 1")
    schemas = default_schemas()
    episodes, stops, raw_med_points = [], {}, {}
    for pid in patient_ids(config):
        episode, raw_meds, raw_stops = _generate_patient(config, pid)
        validate_episode(schemas, episode)
        episodes.append(episode)
        raw_med_points[episode.stay_id] = tuple(raw_meds)
        if raw_meds:
            stops[(episode.stay_id, MEDS)] = tuple(raw_stops)

    report = locf_hardness_report(episodes)
    counts = np.zeros(N_CLASSES)
    for episode in episodes:
        for ex in build_examples(episode):
            counts[ex.label] += 1
    achieved = (counts / counts.sum()).tolist() if counts.sum() else [0.0] * N_CLASSES
    manifest = {
        "seed": config.seed,
        "n_patients": config.n_patients,
        "n_examples": int(counts.sum()),
        "class_names": list(CLASS_NAMES),
        "target_prevalence": list(config.target_prevalence),
        "achieved_prevalence": achieved,
        "prevalence_gap": [
            abs(a - t) for a, t in zip(achieved, config.target_prevalence)
        ],
        "locf_transition_rate": report.transition_rate,
        "locf_balanced_accuracy": report.balanced_accuracy,
        "locf_transition_matrix": report.matrix.tolist(),
    }
    return episodes, stops, manifest, raw_med_points


def write_generated_cohort(config: GeneratorConfig, out_dir: Path) -> dict:
    """Generate and persist a cohort in the ingestion format.

    Medication rows are written unexpanded with their stop offsets; loading
    re-expands them into the same administrations the latent path used."""
    from .io import write_cohort  # local import to avoid a cycle

    episodes, stops, manifest, raw_med_points = generate_cohort(config)
    unexpanded = []
    for episode in episodes:
        raw = raw_med_points[episode.stay_id]
        med_series = SourceSeries(MEDS, raw, present=bool(raw))
        series = tuple(med_series if s.source_id == MEDS else s for s in episode.series)
        unexpanded.append(replace(episode, series=series))
    write_cohort(out_dir, default_schemas(), unexpanded, stop_offsets=stops, manifest=manifest)
    return manifest


@dataclass(frozen=True)
class LocfReport:
    """Next-step class transition statistics over a cohort's examples."""

    matrix: np.ndarray  # [current_class, next_class] counts
    balanced_accuracy: float
    transition_rate: float
    n_examples: int


def locf_hardness_report(episodes) -> LocfReport:
    matrix = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    for episode in episodes:
        for ex in build_examples(episode):
            matrix[classify_target(ex.current_target_value), ex.label] += 1
    total = int(matrix.sum())
    recalls = []
    for c in range(N_CLASSES):
        truths = matrix[:, c].sum()
        if truths:
            recalls.append(matrix[c, c] / truths)
    balanced = float(np.mean(recalls)) if recalls else float("nan")
    transition = float(1.0 - np.trace(matrix) / total) if total else float("nan")
    return LocfReport(
        matrix=matrix,
        balanced_accuracy=balanced,
        transition_rate=transition,
        n_examples=total,
    )


def calibrate_generator(
    config: GeneratorConfig, n_pilot: int = 300, rounds: int = 2
) -> GeneratorConfig:
    """Refit the latent affine so pilot label values hit the target
    prevalences at the 70/180 boundaries.

    Each round maps the pilot's empirical boundary quantiles onto 70/180;
    a second round absorbs the residual from unscaled measurement noise."""
    current = config
    for _ in range(rounds):
        pilot = replace(current, n_patients=n_pilot)
        values = []
        for pid in patient_ids(pilot):
            episode = generate_episode(pilot, pid)
            values.extend(ex.next_target_value for ex in build_examples(episode))
        values = np.sort(np.asarray(values))
        if len(values) < 100:
            raise DataError("pilot produced too few examples to calibrate")
        p_hypo, _, p_hyper = current.target_prevalence
        q_low = float(np.quantile(values, p_hypo))
        q_high = float(np.quantile(values, 1.0 - p_hyper))
        if q_high <= q_low:
            raise DataError("pilot value spread too narrow to calibrate")
        scale = (180.0 - 70.0) / (q_high - q_low)
        offset = 70.0 - scale * q_low
        current = replace(
            current,
            latent_scale=current.latent_scale * scale,
            latent_offset=offset + scale * current.latent_offset,
        )
    return current
