"""Checkpoint archive: a zip holding a JSON header and raw little-endian tensor blobs.

Layout::

    header.json               schema_version, configs, seed, epoch, stage,
                              history, normalisation stats, tensor index
    tensors/<name>.bin        one entry per tensor, dtype/shape from the index

Zip members carry a fixed timestamp so identical checkpoints are
byte-identical.  Training draws every random number from generators keyed
on ``(seed, epoch, step)``, so ``seed`` and ``epoch`` are the whole RNG state.
"""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import CorruptArchive, IncompatibleCheckpoint, IoFailure, MissingFile, UnsupportedSchema
from .losses import LossConfig
from .models import ModelConfig, S4Net
from .sits_core import NormalizationStats

SCHEMA_VERSION = 1
_FIXED_TIME = (2020, 1, 1, 0, 0, 0)
_DTYPES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
    torch.uint8: "|u1",
}
_TORCH_DTYPES = {v: k for k, v in _DTYPES.items()}


@dataclass
class Checkpoint:
    model_config: ModelConfig
    model_state: dict
    train_config: dict = field(default_factory=dict)
    loss_config: LossConfig = field(default_factory=LossConfig)
    stats: NormalizationStats | None = None
    epoch: int = 0
    stage: str = "init"
    seed: int = 0
    optimizer_state: dict | None = None
    history: list = field(default_factory=list)
    step_losses: list = field(default_factory=list)

    def build_model(self) -> S4Net:
        model = S4Net(self.model_config)
        model.load_state_dict(self.model_state)
        return model

    @classmethod
    def from_model(cls, model: S4Net, **kwargs) -> "Checkpoint":
        state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        return cls(model_config=model.cfg, model_state=state, **kwargs)

    def check_compatible(self, model_config: ModelConfig) -> None:
        if self.model_config != model_config:
            raise IncompatibleCheckpoint(
                f"checkpoint model config {self.model_config.to_dict()} != {model_config.to_dict()}"
            )


def _flatten_optimizer(opt_state: dict | None) -> tuple[dict, dict]:
    """Split a torch optimizer state_dict into JSON metadata and named tensors."""
    if opt_state is None:
        return {}, {}
    tensors, meta_state = {}, {}
    for pid, st in opt_state["state"].items():
        meta_state[str(pid)] = {}
        for k, v in st.items():
            if torch.is_tensor(v) and v.ndim > 0:
                tensors[f"optim/{pid}/{k}"] = v
            else:
                meta_state[str(pid)][k] = float(v)
    meta = {"state": meta_state, "param_groups": opt_state["param_groups"]}
    return meta, tensors


def _unflatten_optimizer(meta: dict, tensors: dict) -> dict | None:
    if not meta:
        return None
    state = {}
    for pid, scalars in meta["state"].items():
        st = {k: torch.tensor(v, dtype=torch.float32) for k, v in scalars.items()}
        prefix = f"optim/{pid}/"
        for name, t in tensors.items():
            if name.startswith(prefix):
                st[name[len(prefix):]] = t
        state[int(pid)] = st
    return {"state": state, "param_groups": meta["param_groups"]}


def _zip_write(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_FIXED_TIME)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    tensors = {f"model/{k}": v for k, v in ckpt.model_state.items()}
    opt_meta, opt_tensors = _flatten_optimizer(ckpt.optimizer_state)
    tensors.update(opt_tensors)

    index = {}
    for name, t in tensors.items():
        if t.dtype not in _DTYPES:
            raise IoFailure(f"cannot store tensor {name} of dtype {t.dtype}")
        index[name] = {"dtype": _DTYPES[t.dtype], "shape": list(t.shape)}

    header = {
        "schema_version": SCHEMA_VERSION,
        "model_config": ckpt.model_config.to_dict(),
        "train_config": ckpt.train_config,
        "loss_config": ckpt.loss_config.to_dict(),
        "stats": None if ckpt.stats is None else ckpt.stats.to_json(),
        "epoch": ckpt.epoch,
        "stage": ckpt.stage,
        "seed": ckpt.seed,
        "history": ckpt.history,
        "step_losses": ckpt.step_losses,
        "optimizer": opt_meta,
        "tensors": index,
    }
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        _zip_write(zf, "header.json", json.dumps(header, sort_keys=True, indent=1).encode())
        for name in sorted(tensors):
            arr = tensors[name].detach().cpu().contiguous().numpy()
            _zip_write(zf, f"tensors/{name}.bin", arr.astype(index[name]["dtype"]).tobytes())
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(buf.getvalue())
    except OSError as e:
        raise IoFailure(f"writing {path}: {e}") from e
    return path


def load_checkpoint(path, expected_model_config: ModelConfig | None = None) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"{path} not found")
    try:
        zf = zipfile.ZipFile(path)
    except zipfile.BadZipFile as e:
        raise CorruptArchive(f"{path}: {e}") from e
    with zf:
        header = json.loads(zf.read("header.json"))
        if header.get("schema_version") != SCHEMA_VERSION:
            raise UnsupportedSchema(f"checkpoint schema {header.get('schema_version')!r}")
        model_cfg = ModelConfig.from_dict(header["model_config"])
        if expected_model_config is not None and model_cfg != expected_model_config:
            raise IncompatibleCheckpoint(
                f"checkpoint model config {model_cfg.to_dict()} != {expected_model_config.to_dict()}"
            )
        tensors = {}
        for name, meta in header["tensors"].items():
            raw = zf.read(f"tensors/{name}.bin")
            dtype = np.dtype(meta["dtype"])
            shape = tuple(meta["shape"])
            if len(raw) != int(np.prod(shape)) * dtype.itemsize:
                raise CorruptArchive(f"tensor {name}: byte length mismatch")
            arr = np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
            tensors[name] = torch.from_numpy(arr.copy())

    model_state = {k[len("model/"):]: v for k, v in tensors.items() if k.startswith("model/")}
    opt_tensors = {k: v for k, v in tensors.items() if k.startswith("optim/")}
    return Checkpoint(
        model_config=model_cfg,
        model_state=model_state,
        train_config=header["train_config"],
        loss_config=LossConfig.from_dict(header["loss_config"]),
        stats=None if header["stats"] is None else NormalizationStats.from_json(header["stats"]),
        epoch=header["epoch"],
        stage=header["stage"],
        seed=header["seed"],
        optimizer_state=_unflatten_optimizer(header["optimizer"], opt_tensors),
        history=header["history"],
        step_losses=header["step_losses"],
    )
