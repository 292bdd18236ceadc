"""JSON checkpoints for trained models.

Parameters are stored as ``{"shape": [...], "data": [...]}`` with row-major
values; ``json`` writes floats in shortest round-trip form, so loading a
checkpoint restores every parameter bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .data import Normalizer
from .exceptions import InputError
from .gan import GanConfig, GanModel, config_to_dict as gan_config_to_dict
from .transformer import TransformerConfig, TransformerModel, config_to_dict as transformer_config_to_dict

FORMAT_VERSION = 1


def encode_array(arr: np.ndarray) -> dict:
    arr = np.asarray(arr, dtype=np.float64)
    return {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()}


def decode_array(payload: dict) -> np.ndarray:
    return np.asarray(payload["data"], dtype=np.float64).reshape(payload["shape"])


def dumps(payload: dict) -> str:
    return json.dumps(payload, indent=1, allow_nan=False) + "\n"


def read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None


def _expect_kind(payload: dict, kind: str, path) -> None:
    if payload.get("kind") != kind:
        raise InputError(f"{path}: expected a {kind} checkpoint, found {payload.get('kind')!r}")


def transformer_payload(model: TransformerModel, normalizer: Normalizer | None, **meta) -> dict:
    return {
        "kind": "transformer",
        "format_version": FORMAT_VERSION,
        **meta,
        "config": transformer_config_to_dict(model.config),
        "normalizer": None if normalizer is None else normalizer.to_dict(),
        "parameters": {name: encode_array(arr) for name, arr in model.state_dict().items()},
    }


def load_transformer(path) -> tuple[TransformerModel, Normalizer | None, dict]:
    payload = read_json(path)
    _expect_kind(payload, "transformer", path)
    config = TransformerConfig(**payload["config"])
    state = {name: decode_array(p) for name, p in payload["parameters"].items()}
    model = TransformerModel.from_state_dict(config, state)
    norm = payload.get("normalizer")
    return model, None if norm is None else Normalizer.from_dict(norm), payload


def gan_payload(model: GanModel, **meta) -> dict:
    return {
        "kind": "gan",
        "format_version": FORMAT_VERSION,
        **meta,
        "config": gan_config_to_dict(model.config),
        "n_features": model.n_features,
        "normalizer": model.normalizer.to_dict(),
        "parameters": {name: encode_array(arr) for name, arr in model.state_dict().items()},
        "history": model.history,
    }


def load_gan(path) -> tuple[GanModel, dict]:
    payload = read_json(path)
    _expect_kind(payload, "gan", path)
    config = GanConfig(**payload["config"])
    normalizer = Normalizer.from_dict(payload["normalizer"])
    model = GanModel.initialize(config, int(payload["n_features"]), normalizer, np.random.default_rng(0))
    model.load_state_dict({name: decode_array(p) for name, p in payload["parameters"].items()})
    model.history = list(payload.get("history", []))
    return model, payload
