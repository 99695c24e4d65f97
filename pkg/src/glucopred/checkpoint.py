"""Self-describing checkpoint container.

A checkpoint is a zip holding the model config, the source schemas, every
parameter tensor as a .npy entry, optional preprocessing state (normalizer
and frequency map), and an integrity record with content hashes. Loading
verifies the hashes and the shapes before any tensor reaches the model.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from .io import schema_from_dict, schema_to_dict
from .model import ModelConfig, MultiSourceClassifier, build_model
from .preprocess import NormalizerState

FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    """Checkpoint missing, corrupt, or inconsistent with its manifest."""


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _param_bytes(name: str, array: np.ndarray) -> bytes:
    buffer = io.BytesIO()
    np.save(buffer, array)
    return name.encode() + b"\x00" + buffer.getvalue()


def save_checkpoint(
    path: Path,
    model: MultiSourceClassifier,
    normalizer: NormalizerState | None = None,
    frequency_map: dict[str, float | None] | None = None,
    meta: dict | None = None,
) -> str:
    """Write the container; returns the model hash."""
    path = Path(path)
    config_blob = json.dumps(model.config.to_dict(), indent=2, sort_keys=True).encode()
    schema_blob = json.dumps(
        {"sources": [schema_to_dict(s) for s in model.schemas]}, indent=2, sort_keys=True
    ).encode()

    params = {
        name: tensor.detach().cpu().numpy()
        for name, tensor in sorted(model.state_dict().items())
    }
    params_digest = hashlib.sha256()
    for name, array in params.items():
        params_digest.update(_param_bytes(name, array))

    config_hash = _sha256(config_blob)
    params_hash = params_digest.hexdigest()
    model_hash = _sha256((config_hash + params_hash).encode() + schema_blob)

    integrity = {
        "format_version": FORMAT_VERSION,
        "config_hash": config_hash,
        "params_hash": params_hash,
        "model_hash": model_hash,
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr("config.json", config_blob)
        zf.writestr("schema.json", schema_blob)
        for name, array in params.items():
            buffer = io.BytesIO()
            np.save(buffer, array)
            zf.writestr(f"params/{name}.npy", buffer.getvalue())
        if normalizer is not None:
            zf.writestr("normalizer.json", normalizer.to_json())
        if frequency_map is not None:
            zf.writestr("frequency_map.json", json.dumps(frequency_map, indent=2))
        zf.writestr("meta.json", json.dumps(meta or {}, indent=2))
        zf.writestr("integrity.json", json.dumps(integrity, indent=2))
    return model_hash


def checkpoint_hash(path: Path) -> str:
    """The stored model hash of a checkpoint file."""
    try:
        with zipfile.ZipFile(Path(path)) as zf:
            return json.loads(zf.read("integrity.json"))["model_hash"]
    except (zipfile.BadZipFile, KeyError, FileNotFoundError) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc


def load_checkpoint(path: Path, seed: int = 0):
    """Verify and load. Returns (model, normalizer, frequency_map, meta).

    Refuses truncated archives, hash mismatches (reporting stored vs
    recomputed), and shape mismatches against the freshly built model."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        zf = zipfile.ZipFile(path)
    except zipfile.BadZipFile as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc

    with zf:
        try:
            config_blob = zf.read("config.json")
            schema_blob = zf.read("schema.json")
            integrity = json.loads(zf.read("integrity.json"))
        except KeyError as exc:
            raise CheckpointError(f"checkpoint {path} is missing entry {exc}") from exc
        if integrity.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(
                f"unsupported checkpoint format {integrity.get('format_version')!r}"
            )

        config_hash = _sha256(config_blob)
        if config_hash != integrity["config_hash"]:
            raise CheckpointError(
                "config hash mismatch: stored "
                f"{integrity['config_hash']} vs recomputed {config_hash}"
            )

        param_entries = sorted(
            n for n in zf.namelist() if n.startswith("params/") and n.endswith(".npy")
        )
        params: dict[str, np.ndarray] = {}
        params_digest = hashlib.sha256()
        for entry in param_entries:
            name = entry[len("params/") : -len(".npy")]
            array = np.load(io.BytesIO(zf.read(entry)))
            params[name] = array
            params_digest.update(_param_bytes(name, array))
        if params_digest.hexdigest() != integrity["params_hash"]:
            raise CheckpointError(
                "parameter hash mismatch: stored "
                f"{integrity['params_hash']} vs recomputed {params_digest.hexdigest()}"
            )

        config = ModelConfig.from_dict(json.loads(config_blob))
        schemas = tuple(
            schema_from_dict(d) for d in json.loads(schema_blob)["sources"]
        )
        dtype = torch.from_numpy(next(iter(params.values()))).dtype
        model = build_model(schemas, config, seed=seed, dtype=dtype)

        state = model.state_dict()
        if set(state) != set(params):
            missing = set(state) - set(params)
            extra = set(params) - set(state)
            raise CheckpointError(
                f"parameter name mismatch: missing {sorted(missing)}, extra {sorted(extra)}"
            )
        for name, tensor in state.items():
            if tuple(params[name].shape) != tuple(tensor.shape):
                raise CheckpointError(
                    f"shape mismatch for {name}: stored {params[name].shape}, "
                    f"model expects {tuple(tensor.shape)}"
                )
        model.load_state_dict({n: torch.from_numpy(a) for n, a in params.items()})
        model.eval()

        normalizer = None
        if "normalizer.json" in zf.namelist():
            normalizer = NormalizerState.from_json(zf.read("normalizer.json").decode())
        frequency_map = None
        if "frequency_map.json" in zf.namelist():
            raw = json.loads(zf.read("frequency_map.json"))
            frequency_map = {k: (None if v is None else float(v)) for k, v in raw.items()}
        meta = json.loads(zf.read("meta.json")) if "meta.json" in zf.namelist() else {}
    return model, normalizer, frequency_map, meta
