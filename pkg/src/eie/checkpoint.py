"""Checkpoint directories: ``manifest.json`` plus one ``.eiet`` file per tensor.

The manifest maps parameter names to files and shapes and echoes the model
config, vocabulary, training config, optimizer step and RNG stream states, so
a checkpoint is enough to resume training bit-exactly or to decode.
"""

from __future__ import annotations

import json
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import eiet
from .model import ModelConfig, parameter_shapes
from .optim import AdamState
from .tensor import Tensor
from .vocab import Vocabulary

FORMAT = "eie-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: dict[str, Tensor]
    model_cfg: ModelConfig
    vocab: Vocabulary
    step: int = 0
    opt_state: AdamState | None = None
    rng_states: dict = field(default_factory=dict)
    train_cfg: dict | None = None


def _fname(name: str) -> str:
    return name.replace("/", "_") + ".eiet"


def save_checkpoint(path: str | os.PathLike, params: dict[str, Tensor], model_cfg: ModelConfig,
                    vocab: Vocabulary, step: int = 0, opt_state: AdamState | None = None,
                    rng_states: dict | None = None, train_cfg: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".ckpt-", dir=path.parent))
    try:
        (tmp / "params").mkdir()
        manifest = {
            "format": FORMAT, "version": VERSION, "step": step,
            "config": model_cfg.to_dict(), "training": train_cfg,
            "vocab": vocab.words, "params": {}, "optimizer": None,
            "rng": rng_states or {},
        }
        for name, t in params.items():
            rel = f"params/{_fname(name)}"
            eiet.save(tmp / rel, t.data)
            manifest["params"][name] = {"file": rel, "shape": list(t.shape)}
        if opt_state is not None:
            (tmp / "optimizer").mkdir()
            opt = {"step": opt_state.step, "m": {}, "v": {}}
            for name in opt_state.m:
                for kind, store in (("m", opt_state.m), ("v", opt_state.v)):
                    rel = f"optimizer/{kind}.{_fname(name)}"
                    eiet.save(tmp / rel, store[name])
                    opt[kind][name] = rel
            manifest["optimizer"] = opt
        (tmp / "manifest.json").write_text(json.dumps(manifest, indent=1), encoding="utf-8")
        if path.exists():
            shutil.rmtree(path)
        os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return path


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    path = Path(path)
    mpath = path / "manifest.json"
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except OSError as err:
        raise CheckpointError(f"cannot read {mpath}: {err}") from err
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"{mpath}: not an {FORMAT} manifest")
    cfg = ModelConfig.from_dict(manifest["config"])
    vocab = Vocabulary(manifest["vocab"])
    if len(vocab) != cfg.vocab_size:
        raise CheckpointError(f"{mpath}: vocabulary has {len(vocab)} entries, config says {cfg.vocab_size}")
    expected = parameter_shapes(cfg)
    if set(expected) != set(manifest["params"]):
        raise CheckpointError(f"{mpath}: parameter names do not match the model config")
    params = {}
    for name, shape in expected.items():
        entry = manifest["params"][name]
        arr = eiet.load(path / entry["file"])
        if arr.shape != tuple(shape):
            raise CheckpointError(f"{path / entry['file']}: shape {arr.shape}, expected {shape}")
        params[name] = Tensor(arr, requires_grad=True, name=name)
    opt_state = None
    if manifest.get("optimizer"):
        o = manifest["optimizer"]
        opt_state = AdamState(step=int(o["step"]))
        for name in o["m"]:
            opt_state.m[name] = np.array(eiet.load(path / o["m"][name]))
            opt_state.v[name] = np.array(eiet.load(path / o["v"][name]))
    return Checkpoint(params, cfg, vocab, int(manifest["step"]), opt_state,
                      manifest.get("rng") or {}, manifest.get("training"))
