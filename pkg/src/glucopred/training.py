"""Training: balanced epoch sampling, the optimization loop with early
stopping on the validation rank metrics, and partial-freeze fine-tuning.

Each epoch draws an equal number of examples per class (the minority count),
without replacement within the epoch. Draws cycle through each class's
not-yet-seen examples before reusing any, so majority-class coverage grows
with every epoch instead of resampling independently.
"""

from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .data import CLASS_NAMES, N_CLASSES
from .encoding import encode_views
from .evaluation import auprc, auroc
from .model import MultiSourceClassifier
from .pipeline import build_views, collect_examples, prepare_arrays, score_views


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    learning_rate: float = 5e-4
    adam_betas: tuple[float, float] = (0.9, 0.999)
    patience: int = 5
    seed: int = 0
    freeze_spec: tuple[str, ...] = ()

    def __post_init__(self):
        if self.patience < 1:
            raise TrainingError(f"patience must be >= 1, got {self.patience}")
        if self.batch_size < 1:
            raise TrainingError(f"batch_size must be >= 1, got {self.batch_size}")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "adam_betas": list(self.adam_betas),
            "patience": self.patience,
            "seed": self.seed,
            "freeze_spec": list(self.freeze_spec),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["adam_betas"] = tuple(d.get("adam_betas", (0.9, 0.999)))
        d["freeze_spec"] = tuple(d.get("freeze_spec", ()))
        return cls(**d)


class UndersamplingSchedule:
    """Deterministic per-epoch balanced draws with cross-epoch coverage.

    Every epoch contributes exactly min-class-count examples per class with
    no duplicates inside the epoch; each class cycles through its unseen
    pool before repeating an example."""

    def __init__(self, labels, seed: int):
        labels = np.asarray(labels)
        self.class_ids = []
        for c in range(N_CLASSES):
            ids = np.flatnonzero(labels == c)
            if len(ids) == 0:
                raise TrainingError(f"class {CLASS_NAMES[c]!r} has no training examples")
            self.class_ids.append(ids)
        self.per_class = min(len(ids) for ids in self.class_ids)
        self.rng = np.random.default_rng(seed)
        self.unseen = [np.ones(len(ids), dtype=bool) for ids in self.class_ids]
        self._draws: list[np.ndarray] = []

    def epoch(self, index: int) -> np.ndarray:
        while len(self._draws) <= index:
            self._advance()
        return self._draws[index]

    def _advance(self):
        chosen = []
        for c, ids in enumerate(self.class_ids):
            mask = self.unseen[c]
            unseen_pos = np.flatnonzero(mask)
            if len(unseen_pos) >= self.per_class:
                take = self.rng.choice(unseen_pos, size=self.per_class, replace=False)
            else:
                seen_pos = np.flatnonzero(~mask)
                filler = self.rng.choice(
                    seen_pos, size=self.per_class - len(unseen_pos), replace=False
                )
                take = np.concatenate([unseen_pos, filler])
                mask[:] = True  # pool exhausted: start the next cycle
            mask[take] = False
            chosen.append(ids[take])
        draw = np.concatenate(chosen)
        self.rng.shuffle(draw)
        self._draws.append(draw)


def undersample_epoch(labels, seed: int, epoch_index: int) -> np.ndarray:
    """The epoch_index-th balanced draw of the deterministic schedule."""
    return UndersamplingSchedule(labels, seed).epoch(epoch_index)


def cross_entropy(logits: torch.Tensor, one_hot: torch.Tensor) -> torch.Tensor:
    """Mean cross entropy of softmax(logits) against one-hot (or soft) targets."""
    return -(one_hot * torch.log_softmax(logits, dim=-1)).sum(dim=-1).mean()


class EarlyStopper:
    """Stops after `patience` consecutive epochs without improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -math.inf
        self.bad_epochs = 0

    def update(self, value: float) -> bool:
        """Returns True if this value improved on the best so far."""
        if value > self.best:
            self.best = value
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_auroc: float
    val_auprc: float
    stopped: bool


@dataclass
class TrainResult:
    history: list[EpochRecord]
    best_epoch: int
    best_metric: float
    n_train_examples: int
    n_val_examples: int


def history_to_csv(history: list[EpochRecord], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_auroc", "val_auprc", "stopped"])
        for rec in history:
            writer.writerow(
                [rec.epoch, repr(rec.train_loss), repr(rec.val_auroc), repr(rec.val_auprc), int(rec.stopped)]
            )


def freeze_parameters(model: MultiSourceClassifier, freeze_spec: tuple[str, ...]) -> list[str]:
    """Disable gradients for the named parameter groups.

    Valid names are the model's parameter groups, or the shorthand
    "sources" covering every per-source group. Returns the frozen groups."""
    groups = model.parameter_groups()
    frozen_groups: list[str] = []
    for name in freeze_spec:
        if name == "sources":
            matched = [g for g in groups if g.startswith("sources.")]
        elif name in groups:
            matched = [name]
        else:
            matched = [g for g in groups if g.startswith(name + ".")]
        if not matched:
            raise TrainingError(
                f"freeze_spec names unknown parameter group {name!r}; "
                f"known groups: {sorted(groups)}"
            )
        frozen_groups.extend(matched)
    params = dict(model.named_parameters())
    for group in frozen_groups:
        for pname in groups[group]:
            params[pname].requires_grad_(False)
    return frozen_groups


def _validation_metric(probs: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """Macro AUROC and macro AUPRC over the classes present in validation."""
    rocs, prcs = [], []
    for c in range(N_CLASSES):
        truths = labels == c
        roc = auroc(probs[:, c], truths)
        prc = auprc(probs[:, c], truths)
        if not math.isnan(roc):
            rocs.append(roc)
        if not math.isnan(prc):
            prcs.append(prc)
    macro_roc = float(np.mean(rocs)) if rocs else math.nan
    macro_prc = float(np.mean(prcs)) if prcs else math.nan
    return macro_roc, macro_prc


def train(
    model: MultiSourceClassifier,
    schemas,
    normalizer,
    train_episodes,
    val_episodes,
    config: TrainConfig,
) -> TrainResult:
    """Optimize with per-epoch balanced draws and early stopping on
    validation macro AUROC + AUPRC; the model ends at the best epoch's
    weights. Validation always scores the full, unbalanced example set."""
    torch.manual_seed(config.seed)
    dtype = next(model.parameters()).dtype
    max_len = model.config.max_seq_len

    train_arrays = prepare_arrays(schemas, train_episodes, normalizer)
    val_arrays = prepare_arrays(schemas, val_episodes, normalizer)
    train_examples = collect_examples(train_episodes)
    val_examples = collect_examples(val_episodes)
    if not train_examples or not val_examples:
        raise TrainingError("both splits must produce at least one example")
    labels = np.array([ex.label for ex in train_examples])
    val_labels = np.array([ex.label for ex in val_examples])

    freeze_parameters(model, config.freeze_spec)
    trainable = [p for p in model.parameters() if p.requires_grad]
    optimizer = (
        torch.optim.Adam(trainable, lr=config.learning_rate, betas=config.adam_betas)
        if trainable
        else None
    )
    schedule = UndersamplingSchedule(labels, config.seed)
    stopper = EarlyStopper(config.patience)

    history: list[EpochRecord] = []
    best_state = copy.deepcopy(model.state_dict())
    best_epoch, best_metric = -1, -math.inf

    train_views: dict[int, dict] = {}

    def train_batch(indices):
        views = []
        for i in indices:
            view = train_views.get(i)
            if view is None:
                from .preprocess import example_view

                ex = train_examples[i]
                view = example_view(
                    train_arrays[ex.episode.stay_id], schemas, ex.cutoff_offset, max_len
                )
                train_views[i] = view
            views.append(view)
        return encode_views(views, schemas, [train_examples[i].label for i in indices], dtype)

    val_views = build_views(schemas, val_arrays, val_examples, max_len)

    for epoch in range(config.epochs):
        draw = schedule.epoch(epoch)
        model.train()
        losses = []
        for start in range(0, len(draw), config.batch_size):
            idx = draw[start : start + config.batch_size]
            batch = train_batch(idx)
            logits, _, _ = model(batch)
            one_hot = torch.eye(N_CLASSES, dtype=dtype)[batch.labels]
            loss = cross_entropy(logits, one_hot)
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch starting at {start}"
                )
            if optimizer is not None:
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
            losses.append(loss.item())

        probs = score_views(model, schemas, val_views)
        macro_roc, macro_prc = _validation_metric(probs, val_labels)
        metric = macro_roc + macro_prc
        improved = stopper.update(metric if not math.isnan(metric) else -math.inf)
        if improved:
            best_state = copy.deepcopy(model.state_dict())
            best_epoch, best_metric = epoch, metric
        stopping = stopper.should_stop
        history.append(
            EpochRecord(
                epoch=epoch,
                train_loss=float(np.mean(losses)),
                val_auroc=macro_roc,
                val_auprc=macro_prc,
                stopped=stopping,
            )
        )
        if stopping:
            break

    model.load_state_dict(best_state)
    model.eval()
    return TrainResult(
        history=history,
        best_epoch=best_epoch,
        best_metric=best_metric,
        n_train_examples=len(train_examples),
        n_val_examples=len(val_examples),
    )


# Fine-tuning freezes everything below the cross-source layers by default:
# per-source tokenizers, encoders, and projections stay fixed while the
# source-level transformer, the fusion weights, and a fresh head adapt.
DEFAULT_FINETUNE_FREEZE = ("sources",)


def fine_tune(
    model: MultiSourceClassifier,
    schemas,
    normalizer,
    train_episodes,
    val_episodes,
    config: TrainConfig,
    reinit_head: bool = True,
) -> TrainResult:
    """Adapt a pretrained model to a new cohort with frozen groups held
    byte-identical. The prediction head restarts from fresh weights unless
    it is itself frozen."""
    freeze_spec = config.freeze_spec or DEFAULT_FINETUNE_FREEZE
    frozen = freeze_parameters(model, freeze_spec)
    if reinit_head and "head" not in frozen:
        torch.manual_seed(config.seed + 1)
        dtype = next(model.parameters()).dtype
        for module in (model.head.norm, model.head.out):
            module.reset_parameters()
        model.head.to(dtype)
    return train(
        model, schemas, normalizer, train_episodes, val_episodes,
        replace(config, freeze_spec=freeze_spec),
    )
