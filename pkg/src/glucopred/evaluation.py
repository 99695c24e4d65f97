"""One-vs-rest metric suite, cutpoint selection, resampling statistics,
carry-forward baseline, and risk/degradation curve series.

Undefined values (empty denominators, single-class subsets) are carried as
NaN and serialized as null, never silently coerced to 0. AUROC uses the
rank (Mann-Whitney) formulation with half credit for ties; AUPRC is the
step-wise precision-recall sum without interpolation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data import CLASS_NAMES, HYPER, HYPO, N_CLASSES, classify_target

TIME_BUCKET_MINUTES = 60.0
N_TIME_BUCKETS = 10
FP_FRACTION_CAP = {HYPO: 0.10, HYPER: 0.30}


class EvaluationError(ValueError):
    """Raised when inputs violate a metric's preconditions."""


@dataclass(frozen=True)
class ScoredExample:
    """Model output paired with ground truth for one labeled example."""

    scores: tuple[float, ...]  # softmax probabilities in class order
    true_class: int
    horizon_minutes: float
    next_target_value: float
    current_target_value: float
    subgroup_tags: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        if len(self.scores) != N_CLASSES:
            raise EvaluationError(f"expected {N_CLASSES} scores, got {len(self.scores)}")
        if abs(sum(self.scores) - 1.0) > 1e-6:
            raise EvaluationError(f"scores must sum to 1, got {sum(self.scores)}")


def _scores_truths(scored: list[ScoredExample], class_idx: int):
    scores = np.array([s.scores[class_idx] for s in scored], dtype=float)
    truths = np.array([s.true_class == class_idx for s in scored], dtype=bool)
    return scores, truths


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=float)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc(scores, truths) -> float:
    """P(random positive outranks random negative), ties counted half."""
    scores = np.asarray(scores, dtype=float)
    truths = np.asarray(truths, dtype=bool)
    n_pos = int(truths.sum())
    n_neg = len(truths) - n_pos
    if n_pos == 0 or n_neg == 0:
        return math.nan
    ranks = _average_ranks(scores)
    return float((ranks[truths].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auprc(scores, truths) -> float:
    """Step-wise sum of precision times recall increments over descending
    score thresholds; no interpolation."""
    scores = np.asarray(scores, dtype=float)
    truths = np.asarray(truths, dtype=bool)
    n_pos = int(truths.sum())
    if n_pos == 0:
        return math.nan
    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    sorted_truths = truths[order]
    tp = np.cumsum(sorted_truths)
    predicted = np.arange(1, len(scores) + 1)
    # group indices where the threshold actually drops (tied scores collapse)
    boundary = np.append(sorted_scores[1:] != sorted_scores[:-1], True)
    tp_b = tp[boundary]
    pred_b = predicted[boundary]
    recall = tp_b / n_pos
    precision = tp_b / pred_b
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(((recall - prev_recall) * precision).sum())


def roc_curve_points(scores, truths):
    """(fpr, tpr) pairs over descending score thresholds, ends included."""
    scores = np.asarray(scores, dtype=float)
    truths = np.asarray(truths, dtype=bool)
    n_pos = max(int(truths.sum()), 1)
    n_neg = max(int((~truths).sum()), 1)
    points = [(0.0, 0.0)]
    for t in sorted(set(scores.tolist()), reverse=True):
        preds = scores >= t
        points.append(
            (float((preds & ~truths).sum() / n_neg), float((preds & truths).sum() / n_pos))
        )
    return points


def pr_curve_points(scores, truths):
    """(recall, precision) pairs over descending score thresholds."""
    scores = np.asarray(scores, dtype=float)
    truths = np.asarray(truths, dtype=bool)
    n_pos = max(int(truths.sum()), 1)
    points = []
    for t in sorted(set(scores.tolist()), reverse=True):
        preds = scores >= t
        tp = int((preds & truths).sum())
        points.append((float(tp / n_pos), float(tp / max(int(preds.sum()), 1))))
    return points


def select_cutpoint(scores, truths) -> float:
    """Observed-score threshold (with +/-inf sentinels) maximizing
    sensitivity + specificity; ties resolve to the higher threshold."""
    scores = np.asarray(scores, dtype=float)
    truths = np.asarray(truths, dtype=bool)
    if truths.all() or not truths.any():
        candidates = [math.inf, -math.inf] + sorted(set(scores.tolist()), reverse=True)
    else:
        candidates = [math.inf] + sorted(set(scores.tolist()), reverse=True) + [-math.inf]
    n_pos = max(int(truths.sum()), 1)
    n_neg = max(int((~truths).sum()), 1)
    best_threshold, best_j = math.inf, -math.inf
    for threshold in candidates:  # descending
        preds = scores >= threshold
        sens = (preds & truths).sum() / n_pos
        spec = (~preds & ~truths).sum() / n_neg
        j = sens + spec
        if j > best_j + 1e-12:
            best_j, best_threshold = j, threshold
    return float(best_threshold)


@dataclass(frozen=True)
class BinaryMetrics:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def ppv(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else math.nan

    @property
    def npv(self) -> float:
        return self.tn / (self.tn + self.fn) if self.tn + self.fn else math.nan

    @property
    def sensitivity(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else math.nan

    @property
    def specificity(self) -> float:
        return self.tn / (self.tn + self.fp) if self.tn + self.fp else math.nan


def binary_metrics(predictions, truths) -> BinaryMetrics:
    predictions = np.asarray(predictions, dtype=bool)
    truths = np.asarray(truths, dtype=bool)
    return BinaryMetrics(
        tp=int((predictions & truths).sum()),
        fp=int((predictions & ~truths).sum()),
        tn=int((~predictions & ~truths).sum()),
        fn=int((~predictions & truths).sum()),
    )


def locf_predict(example) -> int:
    """Carry the current reading's class forward."""
    return classify_target(example.current_target_value)


def balanced_accuracy(predicted, truths) -> float:
    """Mean per-class recall over the classes present in the truth."""
    predicted = np.asarray(predicted)
    truths = np.asarray(truths)
    recalls = [
        float((predicted[truths == c] == c).mean())
        for c in range(N_CLASSES)
        if (truths == c).any()
    ]
    return float(np.mean(recalls)) if recalls else math.nan


def bootstrap_ci(metric_fn, scores, truths, n_resamples: int = 1000, seed: int = 0):
    """Percentile 2.5/97.5 interval over resamples with replacement.

    Resamples on which the metric is undefined are redrawn and counted;
    gives up after 20x the requested budget."""
    if n_resamples < 100:
        raise EvaluationError(f"need at least 100 resamples, got {n_resamples}")
    scores = np.asarray(scores, dtype=float)
    truths = np.asarray(truths)
    rng = np.random.default_rng(seed)
    n = len(scores)
    values, redraws, attempts = [], 0, 0
    while len(values) < n_resamples:
        attempts += 1
        if attempts > 20 * n_resamples:
            raise EvaluationError(
                f"metric undefined on too many resamples ({redraws} redraws)"
            )
        idx = rng.integers(0, n, size=n)
        value = metric_fn(scores[idx], truths[idx])
        if math.isnan(value):
            redraws += 1
            continue
        values.append(value)
    low, high = np.percentile(values, [2.5, 97.5])
    return float(low), float(high), redraws


def permutation_test(metric_fn, scores_a, scores_b, truths, n_permutations: int = 1000, seed: int = 0) -> float:
    """Two-sided p-value for the metric difference under per-example random
    swaps of the two models' scores."""
    scores_a = np.asarray(scores_a, dtype=float)
    scores_b = np.asarray(scores_b, dtype=float)
    truths = np.asarray(truths)
    observed = abs(metric_fn(scores_a, truths) - metric_fn(scores_b, truths))
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(n_permutations):
        swap = rng.random(len(truths)) < 0.5
        perm_a = np.where(swap, scores_b, scores_a)
        perm_b = np.where(swap, scores_a, scores_b)
        delta = abs(metric_fn(perm_a, truths) - metric_fn(perm_b, truths))
        if delta >= observed - 1e-12:
            hits += 1
    return (1 + hits) / (n_permutations + 1)


def _top_fraction_flags(scores: np.ndarray, fraction: float) -> np.ndarray:
    """Boolean mask flagging the floor(fraction*n) highest scores,
    deterministic under ties (earlier index wins)."""
    n = len(scores)
    k = int(math.floor(fraction * n))
    flags = np.zeros(n, dtype=bool)
    if k:
        order = np.argsort(-scores, kind="mergesort")
        flags[order[:k]] = True
    return flags


def _validate_risk_inputs(class_idx: int, fractions):
    if class_idx not in FP_FRACTION_CAP:
        raise EvaluationError("risk curves are defined for the hypo and hyper classes")
    fractions = list(fractions)
    if any(b <= a for a, b in zip(fractions, fractions[1:])):
        raise EvaluationError("fractions must be ascending")
    if fractions and fractions[-1] > FP_FRACTION_CAP[class_idx] + 1e-12:
        raise EvaluationError(
            f"fraction cap for {CLASS_NAMES[class_idx]} is {FP_FRACTION_CAP[class_idx]}"
        )
    return fractions


def fp_severity_curve(scored: list[ScoredExample], class_idx: int, fractions):
    """Mean next reading among false positives when flagging the top score
    fraction as at risk; NaN where no false positives exist."""
    fractions = _validate_risk_inputs(class_idx, fractions)
    scores, truths = _scores_truths(scored, class_idx)
    values = np.array([s.next_target_value for s in scored], dtype=float)
    curve = []
    for fraction in fractions:
        flags = _top_fraction_flags(scores, fraction)
        false_pos = flags & ~truths
        mean = float(values[false_pos].mean()) if false_pos.any() else math.nan
        curve.append((fraction, mean))
    return curve


def relative_risk_curve(scored: list[ScoredExample], class_idx: int, fractions):
    """Event rate among the flagged fraction over the rate among the rest;
    +inf when the unflagged group has no events."""
    fractions = _validate_risk_inputs(class_idx, fractions)
    scores, truths = _scores_truths(scored, class_idx)
    curve = []
    for fraction in fractions:
        flags = _top_fraction_flags(scores, fraction)
        if not flags.any():
            curve.append((fraction, math.nan))
            continue
        flagged_rate = truths[flags].mean()
        rest = truths[~flags]
        unflagged_rate = rest.mean() if len(rest) else math.nan
        if unflagged_rate == 0.0:
            curve.append((fraction, math.inf))
        else:
            curve.append((fraction, float(flagged_rate / unflagged_rate)))
    return curve


@dataclass(frozen=True)
class TimeBucketRow:
    bucket: int  # 1-based
    low_minutes: float
    high_minutes: float
    n_examples: int
    auroc_per_class: tuple[float, ...]
    auprc_per_class: tuple[float, ...]


def time_bucket_report(scored: list[ScoredExample]) -> list[TimeBucketRow]:
    """Per-class rank metrics inside ten left-closed 1-hour horizon bins;
    the final bin also absorbs the 600-minute endpoint."""
    rows = []
    horizons = np.array([s.horizon_minutes for s in scored], dtype=float)
    buckets = np.minimum((horizons // TIME_BUCKET_MINUTES).astype(int), N_TIME_BUCKETS - 1)
    for b in range(N_TIME_BUCKETS):
        members = [s for s, k in zip(scored, buckets) if k == b]
        aurocs, auprcs = [], []
        for c in range(N_CLASSES):
            if members:
                scores, truths = _scores_truths(members, c)
                aurocs.append(auroc(scores, truths))
                auprcs.append(auprc(scores, truths))
            else:
                aurocs.append(math.nan)
                auprcs.append(math.nan)
        rows.append(
            TimeBucketRow(
                bucket=b + 1,
                low_minutes=b * TIME_BUCKET_MINUTES,
                high_minutes=(b + 1) * TIME_BUCKET_MINUTES,
                n_examples=len(members),
                auroc_per_class=tuple(aurocs),
                auprc_per_class=tuple(auprcs),
            )
        )
    return rows


@dataclass(frozen=True)
class ClassMetrics:
    prevalence: float
    auroc: float
    auprc: float
    auroc_ci: tuple[float, float] | None
    auprc_ci: tuple[float, float] | None
    cutpoint: float
    ppv: float
    npv: float
    sensitivity: float
    specificity: float


@dataclass(frozen=True)
class MetricsReport:
    n_examples: int
    per_class: dict[str, ClassMetrics]
    macro: dict[str, float]
    p_values: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        def scrub(x):
            if isinstance(x, float) and math.isnan(x):
                return None
            if isinstance(x, float) and math.isinf(x):
                return "inf"
            return x

        return {
            "n_examples": self.n_examples,
            "per_class": {
                name: {
                    "prevalence": scrub(m.prevalence),
                    "auroc": scrub(m.auroc),
                    "auprc": scrub(m.auprc),
                    "auroc_ci": [scrub(v) for v in m.auroc_ci] if m.auroc_ci else None,
                    "auprc_ci": [scrub(v) for v in m.auprc_ci] if m.auprc_ci else None,
                    "cutpoint": scrub(m.cutpoint),
                    "ppv": scrub(m.ppv),
                    "npv": scrub(m.npv),
                    "sensitivity": scrub(m.sensitivity),
                    "specificity": scrub(m.specificity),
                }
                for name, m in self.per_class.items()
            },
            "macro": {k: scrub(v) for k, v in self.macro.items()},
            "p_values": {k: scrub(v) for k, v in self.p_values.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _macro(per_class: dict[str, ClassMetrics]) -> dict[str, float]:
    def mean_of(attr):
        return float(np.mean([getattr(m, attr) for m in per_class.values()]))

    return {
        attr: mean_of(attr)
        for attr in ("auroc", "auprc", "ppv", "npv", "sensitivity", "specificity")
    }


def compute_report(
    scored: list[ScoredExample],
    n_resamples: int = 1000,
    seed: int = 0,
    with_ci: bool = True,
) -> MetricsReport:
    """Full one-vs-rest suite: rank metrics with bootstrap CIs, cutpoints,
    and the binary metrics at those cutpoints."""
    if not scored:
        raise EvaluationError("cannot evaluate an empty example set")
    per_class = {}
    for c, name in enumerate(CLASS_NAMES):
        scores, truths = _scores_truths(scored, c)
        roc = auroc(scores, truths)
        prc = auprc(scores, truths)
        roc_ci = prc_ci = None
        if with_ci and not math.isnan(roc):
            lo, hi, _ = bootstrap_ci(auroc, scores, truths, n_resamples, seed + c)
            roc_ci = (lo, hi)
        if with_ci and not math.isnan(prc):
            lo, hi, _ = bootstrap_ci(auprc, scores, truths, n_resamples, seed + 100 + c)
            prc_ci = (lo, hi)
        cut = select_cutpoint(scores, truths)
        binary = binary_metrics(scores >= cut, truths)
        per_class[name] = ClassMetrics(
            prevalence=float(truths.mean()),
            auroc=roc,
            auprc=prc,
            auroc_ci=roc_ci,
            auprc_ci=prc_ci,
            cutpoint=cut,
            ppv=binary.ppv,
            npv=binary.npv,
            sensitivity=binary.sensitivity,
            specificity=binary.specificity,
        )
    return MetricsReport(
        n_examples=len(scored), per_class=per_class, macro=_macro(per_class)
    )


def locf_report(scored: list[ScoredExample]) -> MetricsReport:
    """Binary metrics of the carry-forward baseline; rank metrics are
    undefined (the baseline produces no scores)."""
    predictions = np.array([locf_predict(s) for s in scored])
    truths = np.array([s.true_class for s in scored])
    per_class = {}
    for c, name in enumerate(CLASS_NAMES):
        binary = binary_metrics(predictions == c, truths == c)
        per_class[name] = ClassMetrics(
            prevalence=float((truths == c).mean()),
            auroc=math.nan,
            auprc=math.nan,
            auroc_ci=None,
            auprc_ci=None,
            cutpoint=math.nan,
            ppv=binary.ppv,
            npv=binary.npv,
            sensitivity=binary.sensitivity,
            specificity=binary.specificity,
        )
    return MetricsReport(
        n_examples=len(scored), per_class=per_class, macro=_macro(per_class)
    )


def subgroup_report(
    scored: list[ScoredExample], tag: str, with_ci: bool = False, seed: int = 0
) -> MetricsReport:
    """Full suite restricted to examples carrying a subgroup tag."""
    subset = [s for s in scored if tag in s.subgroup_tags]
    if not subset:
        raise EvaluationError(f"no examples carry tag {tag!r}")
    return compute_report(subset, seed=seed, with_ci=with_ci)
