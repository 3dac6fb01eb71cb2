"""Checkpoint container: named parameter arrays, optimizer state, config hash.

Stored as an uncompressed ``.npz`` archive; metadata rides along as a JSON
string under the ``__meta__`` key.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Optional

import numpy as np

from softprop.errors import ConfigMismatchError
from softprop.numcore.optim import AdamState

FORMAT_VERSION = 1


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def save_checkpoint(path, named_params: list, config: dict, state: Optional[AdamState] = None,
                    extra: Optional[dict] = None) -> Path:
    path = Path(path)
    arrays = {f"param/{name}": p.data for name, p in named_params}
    meta = {
        "version": FORMAT_VERSION,
        "config": config,
        "config_hash": config_hash(config),
        "param_names": [name for name, _ in named_params],
        "extra": extra or {},
    }
    if state is not None:
        meta["adam"] = {
            "lr": state.lr, "beta1": state.beta1, "beta2": state.beta2, "epsilon": state.epsilon,
            "step_count": state.step_count, "param_steps": list(state.param_steps),
        }
        for i, (m, v) in enumerate(zip(state.first_moment, state.second_moment)):
            arrays[f"adam/m/{i}"] = m
            arrays[f"adam/v/{i}"] = v
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def read_checkpoint(path) -> tuple:
    """Return ``(meta, params, adam_state_or_None)`` without binding to a model."""
    with np.load(Path(path)) as z:
        meta = json.loads(bytes(z["__meta__"]).decode())
        if meta.get("version") != FORMAT_VERSION:
            raise ConfigMismatchError(f"unsupported checkpoint version {meta.get('version')}")
        params = {name: z[f"param/{name}"] for name in meta["param_names"]}
        state = None
        if "adam" in meta:
            a = meta["adam"]
            n = len(a["param_steps"])
            state = AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], epsilon=a["epsilon"],
                              step_count=a["step_count"], param_steps=list(a["param_steps"]),
                              first_moment=[z[f"adam/m/{i}"] for i in range(n)],
                              second_moment=[z[f"adam/v/{i}"] for i in range(n)])
    return meta, params, state


def load_into(path, named_params: list, config: dict) -> tuple:
    """Copy checkpoint values into existing parameters; architecture must match."""
    meta, arrays, state = read_checkpoint(path)
    if meta["config_hash"] != config_hash(config):
        raise ConfigMismatchError(
            f"checkpoint config hash {meta['config_hash']} does not match model config hash {config_hash(config)}"
        )
    names = [n for n, _ in named_params]
    if names != meta["param_names"]:
        raise ConfigMismatchError("checkpoint parameter names do not match the model")
    for name, p in named_params:
        arr = arrays[name]
        if arr.shape != p.shape:
            raise ConfigMismatchError(f"parameter {name}: checkpoint shape {arr.shape} vs model {p.shape}")
        p.data[...] = arr
    return meta, state
