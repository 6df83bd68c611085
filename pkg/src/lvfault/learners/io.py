"""Model containers: ``<name>.manifest.json`` (architecture, config, seed) plus
``<name>.f64``, the flattened parameters as little-endian float64."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .baselines import LinearModel
from .regression import MLPRegressor
from .rnn import RecurrentModel

MODEL_FORMAT = "lvfault-model"
MODEL_VERSION = 1


def _paths(path):
    path = Path(path)
    name = path.name.removesuffix(".manifest.json").removesuffix(".f64")
    return path.with_name(name + ".manifest.json"), path.with_name(name + ".f64")


def _describe(model):
    if isinstance(model, RecurrentModel):
        arch = {
            "input_dim": model.input_dim,
            "hidden_dim": model.hidden_dim,
            "layers": model.layers,
            "activation": model.activation,
        }
        return "rnn", arch, model.parameters()
    if isinstance(model, MLPRegressor):
        return "mlp", {"single_output": model.single_output}, model.parameters()
    if isinstance(model, LinearModel):
        return "linear", {}, [np.atleast_1d(model.weights), np.atleast_1d(model.intercept)]
    raise TypeError(f"cannot save model of type {type(model).__name__}")


def save_model(model, path, config: dict | None = None, seed: int | None = None):
    manifest_path, block_path = _paths(path)
    kind, arch, params = _describe(model)
    manifest = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "model_type": kind,
        "architecture": arch,
        "shapes": [list(p.shape) for p in params],
        "config": config or {},
        "seed": seed,
    }
    block = np.concatenate([np.asarray(p, dtype="<f8").ravel() for p in params])
    block_path.write_bytes(block.tobytes())
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest_path, block_path


def load_model(path):
    manifest_path, block_path = _paths(path)
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != MODEL_FORMAT or manifest.get("version") != MODEL_VERSION:
        raise ValueError(f"{manifest_path}: unsupported model container")
    flat = np.frombuffer(block_path.read_bytes(), dtype="<f8").astype(float)
    sizes = [int(np.prod(s)) for s in manifest["shapes"]]
    if sum(sizes) != flat.size:
        raise ValueError(f"{block_path}: {flat.size} values, manifest shapes need {sum(sizes)}")
    params, offset = [], 0
    for shape, n in zip(manifest["shapes"], sizes):
        params.append(flat[offset : offset + n].reshape(shape))
        offset += n
    kind, arch = manifest["model_type"], manifest["architecture"]
    if kind == "rnn":
        model = RecurrentModel(arch["input_dim"], arch["hidden_dim"], arch["layers"], arch["activation"])
        model.set_parameters(params)
    elif kind == "mlp":
        model = MLPRegressor(*params, single_output=arch["single_output"])
    elif kind == "linear":
        model = LinearModel(params[0], float(params[1][0]) if params[1].size == 1 else params[1])
    else:
        raise ValueError(f"unknown model type {kind!r}")
    return model, manifest
