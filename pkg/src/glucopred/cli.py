"""Command-line orchestration: generate, preprocess, train, evaluate,
predict, finetune, and serve, driven by a TOML-or-JSON config with dotted
overrides.

Every command writes its artifacts under the output root plus a manifest
recording the config hash, the seed, artifact checksums, and the numeric
backend's determinism status. Exit codes: 0 success, 1 runtime failure,
2 usage or config error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    tomllib = None

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

OUT_ROOT_ENV = "GLUCOPRED_OUT_ROOT"


class UsageError(Exception):
    """Bad config or missing input; exits with code 2."""


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file not found: {p}")
    if p.suffix == ".toml":
        if tomllib is None:
            raise UsageError("TOML configs need Python 3.11+; use JSON instead")
        with open(p, "rb") as fh:
            return tomllib.load(fh)
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {p} is not valid JSON: {exc}") from exc


def apply_overrides(config: dict, pairs: list[str]) -> dict:
    for pair in pairs:
        if "=" not in pair:
            raise UsageError(f"--set expects key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = config
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise UsageError(f"--set path {key!r} collides with a non-section value")
        node[parts[-1]] = value
    return config


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


def _checksum(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir: Path, command: str, config: dict, seed, artifacts: list[Path]):
    import numpy
    import torch

    manifest = {
        "command": command,
        "config_hash": config_hash(config),
        "seed": seed,
        "artifacts": {
            str(p.relative_to(out_dir)): _checksum(p) for p in sorted(artifacts)
        },
        "backend": {
            "torch_version": torch.__version__,
            "numpy_version": numpy.__version__,
            "deterministic_algorithms": torch.are_deterministic_algorithms_enabled(),
            "num_threads": torch.get_num_threads(),
        },
    }
    path = out_dir / "run-manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def _scrub_floats(node):
    """NaN/inf are not strict JSON; serialize them as null / 'inf'."""
    import math

    if isinstance(node, dict):
        return {k: _scrub_floats(v) for k, v in node.items()}
    if isinstance(node, list):
        return [_scrub_floats(v) for v in node]
    if isinstance(node, float):
        if math.isnan(node):
            return None
        if math.isinf(node):
            return "inf"
    return node


def _resolve(config: dict, key: str, default: Path, kind: str) -> Path:
    paths = config.get("paths", {})
    path = Path(paths.get(key, default))
    if not path.exists():
        raise UsageError(f"missing {kind}: {path}")
    return path


def _generator_config(section: dict, seed_override):
    from .synth import GeneratorConfig, KernelParams, PatientTypeParams

    kwargs = dict(section)
    for kernel_key in ("insulin_kernel", "dextrose_kernel", "steroid_kernel"):
        if kernel_key in kwargs:
            k = kwargs[kernel_key]
            kwargs[kernel_key] = KernelParams(
                float(k["delay_minutes"]), float(k["rise_minutes"]), float(k["decay_minutes"])
            )
    if "patient_types" in kwargs:
        kwargs["patient_types"] = {
            name: PatientTypeParams(**params)
            for name, params in kwargs["patient_types"].items()
        }
    for tuple_key in ("target_prevalence", "gap_range_minutes", "first_measurement_range",
                      "rhythm_center_range"):
        if tuple_key in kwargs:
            kwargs[tuple_key] = tuple(kwargs[tuple_key])
    if seed_override is not None:
        kwargs["seed"] = seed_override
    return GeneratorConfig(**kwargs)


def _model_config(section: dict):
    from .model import ModelConfig

    return ModelConfig(**section)


def _train_config(section: dict, seed_override):
    from .training import TrainConfig, TrainingError

    kwargs = dict(section)
    if "adam_betas" in kwargs:
        kwargs["adam_betas"] = tuple(kwargs["adam_betas"])
    if "freeze_spec" in kwargs:
        kwargs["freeze_spec"] = tuple(kwargs["freeze_spec"])
    if seed_override is not None:
        kwargs["seed"] = seed_override
    try:
        return TrainConfig(**kwargs)
    except (TrainingError, TypeError) as exc:
        raise UsageError(f"training config invalid: {exc}") from exc


def _load_splits(prep_dir: Path, episodes):
    splits_path = prep_dir / "splits.json"
    if not splits_path.exists():
        raise UsageError(f"missing split assignment: {splits_path}")
    assignment = json.loads(splits_path.read_text())
    by_stay = {e.stay_id: e for e in episodes}
    out = {}
    for name in ("train", "val", "test"):
        out[name] = [by_stay[s] for s in assignment[name] if s in by_stay]
    return out


def cmd_generate(config: dict, out_root: Path, seed) -> int:
    from .synth import write_generated_cohort

    gcfg = _generator_config(config.get("generator", {}), seed)
    cohort_dir = out_root / "cohort"
    cohort_dir.mkdir(parents=True, exist_ok=True)
    manifest = write_generated_cohort(gcfg, cohort_dir)
    artifacts = [p for p in cohort_dir.rglob("*") if p.is_file()]
    write_manifest(cohort_dir, "generate", config, gcfg.seed, artifacts)
    print(
        f"generated {manifest['n_patients']} patients, {manifest['n_examples']} examples; "
        f"prevalence {[round(p, 4) for p in manifest['achieved_prevalence']]}"
    )
    return EXIT_OK


def cmd_preprocess(config: dict, out_root: Path, seed) -> int:
    from .data import build_examples, split_by_patient
    from .io import load_cohort
    from .preprocess import DEFAULT_FREQUENCY_MAP, fit_normalizer

    cohort_dir = _resolve(config, "cohort", out_root / "cohort", "cohort directory")
    schemas, episodes, _ = load_cohort(cohort_dir)
    section = config.get("split", {})
    fractions = tuple(section.get("fractions", (0.7, 0.1, 0.2)))
    split_seed = seed if seed is not None else section.get("seed", 0)
    train_eps, val_eps, test_eps = split_by_patient(episodes, fractions, split_seed)

    train_examples = [ex for e in train_eps for ex in build_examples(e)]
    normalizer = fit_normalizer(schemas, train_examples)

    prep_dir = out_root / "prep"
    prep_dir.mkdir(parents=True, exist_ok=True)
    (prep_dir / "splits.json").write_text(
        json.dumps(
            {
                "train": [e.stay_id for e in train_eps],
                "val": [e.stay_id for e in val_eps],
                "test": [e.stay_id for e in test_eps],
            },
            indent=2,
        )
    )
    normalizer.save(prep_dir / "normalizer.json")
    (prep_dir / "frequency_map.json").write_text(json.dumps(DEFAULT_FREQUENCY_MAP, indent=2))
    artifacts = [prep_dir / "splits.json", prep_dir / "normalizer.json", prep_dir / "frequency_map.json"]
    write_manifest(prep_dir, "preprocess", config, split_seed, artifacts)
    print(
        f"split {len(train_eps)}/{len(val_eps)}/{len(test_eps)} stays; "
        f"normalizer fitted on {len(train_examples)} examples"
    )
    return EXIT_OK


def cmd_train(config: dict, out_root: Path, seed) -> int:
    from .checkpoint import save_checkpoint
    from .io import load_cohort
    from .model import build_model
    from .preprocess import NormalizerState, load_frequency_map
    from .reporting import render_history
    from .training import history_to_csv, train

    cohort_dir = _resolve(config, "cohort", out_root / "cohort", "cohort directory")
    prep_dir = _resolve(config, "prep", out_root / "prep", "preprocess directory")
    schemas, episodes, _ = load_cohort(cohort_dir)
    splits = _load_splits(prep_dir, episodes)
    normalizer = NormalizerState.load(prep_dir / "normalizer.json")
    frequency_map = load_frequency_map(prep_dir / "frequency_map.json")

    model_cfg = _model_config(config.get("model", {}))
    train_cfg = _train_config(config.get("training", {}), seed)
    model = build_model(schemas, model_cfg, seed=train_cfg.seed)
    result = train(model, schemas, normalizer, splits["train"], splits["val"], train_cfg)

    train_dir = out_root / "train"
    train_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = train_dir / "model.ckpt"
    model_hash = save_checkpoint(
        ckpt_path,
        model,
        normalizer=normalizer,
        frequency_map=frequency_map,
        meta={
            "train_config": train_cfg.to_dict(),
            "best_epoch": result.best_epoch,
            "best_metric": result.best_metric,
        },
    )
    history_to_csv(result.history, train_dir / "history.csv")
    render_history(train_dir, result.history)
    artifacts = [ckpt_path, train_dir / "history.csv", train_dir / "history.png"]
    write_manifest(train_dir, "train", config, train_cfg.seed, artifacts)
    best = result.history[result.best_epoch]
    print(
        f"trained {len(result.history)} epochs; best epoch {result.best_epoch} "
        f"(macro AUROC {best.val_auroc:.4f}, macro AUPRC {best.val_auprc:.4f}); "
        f"checkpoint {model_hash[:12]}"
    )
    return EXIT_OK


def _build_templates(schemas, state, episodes, examples, scored, probs):
    """Six confusion-cell exemplars for the what-if panel: per risk class a
    true positive, a false positive, and a false negative, preferring
    examples whose input carries at least one administration record."""
    from .data import CLASS_NAMES, HYPER, HYPO
    from .serving import example_to_request, predict_from_request

    by_stay = {e.stay_id: e for e in episodes}
    meds_id = next((s.source_id for s in schemas if s.frequency_feature), None)
    templates = []
    for class_idx in (HYPO, HYPER):
        name = CLASS_NAMES[class_idx]
        by_cell = {
            "true_positive": lambda true, pred, c=class_idx: true == c and pred == c,
            "false_positive": lambda true, pred, c=class_idx: true != c and pred == c,
            "false_negative": lambda true, pred, c=class_idx: true == c and pred != c,
        }
        for cell, matches in by_cell.items():
            candidates = []
            for i, (example, s) in enumerate(zip(examples, scored)):
                pred = int(probs[i].argmax())
                if not matches(s.true_class, pred):
                    continue
                episode = by_stay[example.episode.stay_id]
                has_meds = False
                if meds_id is not None:
                    meds = episode.series_for(meds_id)
                    has_meds = any(
                        tp.offset_minutes <= example.cutoff_offset for tp in meds.time_points
                    )
                confidence = probs[i][class_idx]
                rank = confidence if cell != "false_negative" else -confidence
                candidates.append((not has_meds, -rank, example.episode.stay_id, i))
            candidates.sort()
            chosen = None
            for _, _, _, i in candidates[:25]:
                example = examples[i]
                request = example_to_request(
                    schemas, by_stay[example.episode.stay_id], example.cutoff_offset
                )
                stored = predict_from_request(state, request)
                pred_idx = CLASS_NAMES.index(stored["predicted_class"])
                if matches(examples[i].label, pred_idx):
                    chosen = (i, request, stored)
                    break
            if chosen is None:
                raise RuntimeError(f"no {name} {cell} exemplar found in the evaluated split")
            i, request, stored = chosen
            templates.append(
                {
                    "name": f"{name}_{cell}",
                    "target_class": name,
                    "cell": cell,
                    "truth_class": CLASS_NAMES[examples[i].label],
                    "request": request,
                    "stored_prediction": stored,
                }
            )
    return templates


def cmd_evaluate(config: dict, out_root: Path, seed) -> int:
    import numpy as np

    from .checkpoint import checkpoint_hash, load_checkpoint
    from .data import CLASS_NAMES
    from .evaluation import (
        auroc,
        balanced_accuracy,
        compute_report,
        locf_predict,
        locf_report,
        permutation_test,
        subgroup_report,
    )
    from .io import load_cohort
    from .pipeline import collect_examples, prepare_arrays, score_examples, to_scored_examples
    from .preprocess import load_frequency_map
    from .reporting import render_evaluation, report_to_csv
    from .serving import ServingState

    cohort_dir = _resolve(config, "cohort", out_root / "cohort", "cohort directory")
    prep_dir = _resolve(config, "prep", out_root / "prep", "preprocess directory")
    ckpt_path = Path(config.get("paths", {}).get("checkpoint", out_root / "train" / "model.ckpt"))
    if not ckpt_path.exists():
        raise UsageError(f"missing checkpoint: {ckpt_path}")

    section = config.get("evaluation", {})
    split_name = section.get("split", "test")
    n_resamples = int(section.get("n_resamples", 1000))
    n_permutations = int(section.get("n_permutations", 1000))
    eval_seed = seed if seed is not None else section.get("seed", 0)

    schemas, episodes, _ = load_cohort(cohort_dir)
    splits = _load_splits(prep_dir, episodes)
    if split_name not in splits:
        raise UsageError(f"unknown split {split_name!r}; expected train, val, or test")
    subset = splits[split_name]

    model, normalizer, frequency_map, _ = load_checkpoint(ckpt_path)
    arrays = prepare_arrays(schemas, subset, normalizer)
    examples = collect_examples(subset)
    probs = score_examples(model, schemas, arrays, examples)
    scored = to_scored_examples(examples, probs)

    report = compute_report(scored, n_resamples=n_resamples, seed=eval_seed)
    locf = locf_report(scored)

    truths = np.array([s.true_class for s in scored])
    model_bal = balanced_accuracy(probs.argmax(1), truths)
    locf_bal = balanced_accuracy(np.array([locf_predict(s) for s in scored]), truths)

    p_values = {}
    locf_onehot = np.eye(len(CLASS_NAMES))[[locf_predict(s) for s in scored]]
    for c, name in enumerate(CLASS_NAMES):
        p_values[f"auroc_vs_locf_{name}"] = permutation_test(
            auroc, probs[:, c], locf_onehot[:, c], truths == c, n_permutations, eval_seed + c
        )

    subgroups = {}
    for tag in sorted({t for s in scored for t in s.subgroup_tags}):
        try:
            subgroups[tag] = subgroup_report(scored, tag).to_dict()
        except Exception:
            continue

    eval_dir = out_root / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "split": split_name,
        "n_examples": len(scored),
        "model": report.to_dict(),
        "locf": locf.to_dict(),
        "balanced_accuracy": {"model": model_bal, "locf": locf_bal},
        "p_values_vs_locf": p_values,
        "subgroups": subgroups,
        "checkpoint_hash": checkpoint_hash(ckpt_path),
    }
    (eval_dir / "report.json").write_text(json.dumps(_scrub_floats(payload), indent=2))
    report_to_csv(eval_dir / "report.csv", report, "model")
    written = render_evaluation(eval_dir, scored, report)

    artifacts = [eval_dir / "report.json", eval_dir / "report.csv"] + written
    state = ServingState.from_checkpoint(ckpt_path)
    try:
        templates = _build_templates(schemas, state, subset, examples, scored, probs)
    except RuntimeError as exc:
        print(f"warning: skipping what-if templates: {exc}", file=sys.stderr)
    else:
        (eval_dir / "templates.json").write_text(json.dumps({"templates": templates}, indent=2))
        artifacts.append(eval_dir / "templates.json")
    write_manifest(eval_dir, "evaluate", config, eval_seed, artifacts)
    print(
        f"evaluated {len(scored)} {split_name} examples: macro AUROC "
        f"{report.macro['auroc']:.4f}, macro AUPRC {report.macro['auprc']:.4f}; "
        f"balanced accuracy model {model_bal:.4f} vs carry-forward {locf_bal:.4f}"
    )
    return EXIT_OK


def cmd_predict(config: dict, out_root: Path, seed, input_path: str | None) -> int:
    from .serving import RequestFormatError, ServingState, predict_from_request

    ckpt_path = Path(config.get("paths", {}).get("checkpoint", out_root / "train" / "model.ckpt"))
    if not ckpt_path.exists():
        raise UsageError(f"missing checkpoint: {ckpt_path}")
    if input_path is None:
        raise UsageError("predict requires --input pointing at a request JSON file")
    request_path = Path(input_path)
    if not request_path.exists():
        raise UsageError(f"missing request file: {request_path}")

    state = ServingState.from_checkpoint(ckpt_path)
    try:
        payload = json.loads(request_path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"request file is not valid JSON: {exc}") from exc
    try:
        result = predict_from_request(state, payload)
    except RequestFormatError as exc:
        raise UsageError(f"invalid request field {exc.field}: {exc}") from exc

    predict_dir = out_root / "predict"
    predict_dir.mkdir(parents=True, exist_ok=True)
    out_path = predict_dir / "prediction.json"
    out_path.write_text(json.dumps(result, indent=2))
    write_manifest(predict_dir, "predict", config, seed, [out_path])
    print(json.dumps(result, indent=2))
    return EXIT_OK


def cmd_finetune(config: dict, out_root: Path, seed) -> int:
    from .checkpoint import load_checkpoint, save_checkpoint
    from .data import split_by_patient
    from .io import load_cohort
    from .reporting import render_history
    from .training import fine_tune, history_to_csv

    ckpt_path = Path(config.get("paths", {}).get("checkpoint", out_root / "train" / "model.ckpt"))
    if not ckpt_path.exists():
        raise UsageError(f"missing checkpoint: {ckpt_path}")
    cohort_dir = _resolve(
        config, "finetune_cohort", out_root / "finetune-cohort", "fine-tune cohort directory"
    )

    model, normalizer, frequency_map, meta = load_checkpoint(ckpt_path)
    schemas, episodes, _ = load_cohort(cohort_dir)
    section = config.get("split", {})
    fractions = tuple(section.get("fractions", (0.7, 0.1, 0.2)))
    train_eps, val_eps, _ = split_by_patient(episodes, fractions, section.get("seed", 0))

    train_cfg = _train_config(config.get("finetune", config.get("training", {})), seed)
    result = fine_tune(model, schemas, normalizer, train_eps, val_eps, train_cfg)

    out_dir = out_root / "finetune"
    out_dir.mkdir(parents=True, exist_ok=True)
    new_ckpt = out_dir / "model.ckpt"
    model_hash = save_checkpoint(
        new_ckpt,
        model,
        normalizer=normalizer,
        frequency_map=frequency_map,
        meta={"finetuned_from": str(ckpt_path), "train_config": train_cfg.to_dict()},
    )
    history_to_csv(result.history, out_dir / "history.csv")
    render_history(out_dir, result.history)
    artifacts = [new_ckpt, out_dir / "history.csv", out_dir / "history.png"]
    write_manifest(out_dir, "finetune", config, train_cfg.seed, artifacts)
    print(f"fine-tuned {len(result.history)} epochs; checkpoint {model_hash[:12]}")
    return EXIT_OK


def cmd_serve(config: dict, out_root: Path, args) -> int:
    from .service import run_service

    ckpt = args.checkpoint or os.environ.get("GLUCOPRED_CHECKPOINT") or config.get(
        "paths", {}
    ).get("checkpoint", out_root / "train" / "model.ckpt")
    ckpt = Path(ckpt)
    if not ckpt.exists():
        raise UsageError(f"missing checkpoint: {ckpt}")
    templates = args.templates or os.environ.get("GLUCOPRED_TEMPLATES") or config.get(
        "paths", {}
    ).get("templates", out_root / "eval" / "templates.json")
    templates = Path(templates) if templates else None
    port = args.port or int(os.environ.get("GLUCOPRED_PORT", "8000"))
    print(f"serving {ckpt} on {args.host}:{port}")
    run_service(ckpt, templates, host=args.host, port=port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glucopred",
        description="multi-source irregular time-series glucose-class pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("generate", "preprocess", "train", "evaluate", "predict", "finetune", "serve"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="TOML or JSON config file")
        p.add_argument("--out", default=None, help="output root directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument(
            "--set", dest="overrides", action="append", default=[],
            metavar="KEY=VALUE", help="dotted config override, value parsed as JSON",
        )
        if name == "predict":
            p.add_argument("--input", default=None, help="request JSON file")
        if name == "serve":
            p.add_argument("--checkpoint", default=None)
            p.add_argument("--templates", default=None)
            p.add_argument("--port", type=int, default=None)
            p.add_argument("--host", default="127.0.0.1")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = apply_overrides(load_config(args.config), args.overrides)
        out_root = Path(
            args.out or os.environ.get(OUT_ROOT_ENV) or "glucopred-run"
        )
        out_root.mkdir(parents=True, exist_ok=True)

        import torch

        torch.use_deterministic_algorithms(True)

        if args.command == "generate":
            return cmd_generate(config, out_root, args.seed)
        if args.command == "preprocess":
            return cmd_preprocess(config, out_root, args.seed)
        if args.command == "train":
            return cmd_train(config, out_root, args.seed)
        if args.command == "evaluate":
            return cmd_evaluate(config, out_root, args.seed)
        if args.command == "predict":
            return cmd_predict(config, out_root, args.seed, args.input)
        if args.command == "finetune":
            return cmd_finetune(config, out_root, args.seed)
        if args.command == "serve":
            return cmd_serve(config, out_root, args)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, TypeError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # runtime failures
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
