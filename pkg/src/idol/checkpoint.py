"""Model checkpoints: ``<name>.model.json`` header + ``<name>.model.bin`` float64 LE."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .nn import LayerSpec, Model


def save_model(model: Model, directory, name: str, stage: str) -> tuple[Path, Path]:
    directory = Path(directory)
    header = dict(model.header(), stage=stage, dtype="<f8", binary=f"{name}.model.bin")
    jpath = directory / f"{name}.model.json"
    bpath = directory / f"{name}.model.bin"
    jpath.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    bpath.write_bytes(model.params.astype("<f8").tobytes())
    return jpath, bpath


def load_model(json_path) -> tuple[Model, dict]:
    jpath = Path(json_path)
    header = json.loads(jpath.read_text())
    theta = np.frombuffer((jpath.parent / header["binary"]).read_bytes(), dtype="<f8").astype(np.float64)
    if theta.size != header["n_params"]:
        raise ValueError(f"{jpath}: header declares {header['n_params']} parameters, binary holds {theta.size}")
    layers = [LayerSpec(**d) for d in header["layers"]]
    model = Model(layers, header["input_shape"], theta, header["topology"], header["seed"])
    return model, header
