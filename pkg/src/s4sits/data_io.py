"""On-disk sample archives and dataset manifests.

A sample archive is a directory::

    header.json   schema_version, location_id, shapes, dtypes, timestamps
    radar.bin     little-endian float32, C-order [T, C, H, W]
    optical.bin   little-endian float32, C-order [T, C, H, W]
    label.bin     little-endian int32 [H, W]            (optional)
    cloud.bin     uint8 [T_optical, H, W], 0/1           (optional)

The byte-level description lives in ``docs/format.md``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import (ChannelMismatch, CorruptArchive, EmptySeries, IoFailure, MissingFile, ShapeMismatch,
                     UnsupportedSchema)
from .sits_core import Modality, ModalitySeries, SitsPair

SCHEMA_VERSION = 1
SPLITS = ("train", "val", "test")

_DTYPES = {"radar": "<f4", "optical": "<f4", "label": "<i4", "cloud_mask": "|u1"}
_FILES = {"radar": "radar.bin", "optical": "optical.bin", "label": "label.bin", "cloud_mask": "cloud.bin"}


def dumps_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_sample(pair: SitsPair, directory) -> Path:
    directory = Path(directory)
    blobs = {
        "radar": pair.radar.data,
        "optical": pair.optical.data,
        "label": pair.label,
        "cloud_mask": None if pair.cloud_mask is None else pair.cloud_mask.astype(np.uint8),
    }
    header = {"schema_version": SCHEMA_VERSION, "location_id": pair.location_id}
    for key, arr in blobs.items():
        entry = {"present": arr is not None, "dtype": _DTYPES[key]}
        if arr is not None:
            entry["shape"] = list(arr.shape)
        if key in ("radar", "optical"):
            entry["timestamps"] = [int(t) for t in pair.series(Modality(key)).timestamps]
        header[key] = entry
    try:
        directory.mkdir(parents=True, exist_ok=True)
        for key, arr in blobs.items():
            path = directory / _FILES[key]
            if arr is None:
                path.unlink(missing_ok=True)
                continue
            path.write_bytes(np.ascontiguousarray(arr, dtype=_DTYPES[key]).tobytes())
        (directory / "header.json").write_text(dumps_json(header))
    except OSError as e:
        raise IoFailure(f"writing {directory}: {e}") from e
    return directory


def _read_blob(directory: Path, key: str, entry: dict) -> np.ndarray:
    path = directory / _FILES[key]
    if not path.exists():
        raise CorruptArchive(f"{path} listed in header but missing")
    shape = tuple(int(s) for s in entry["shape"])
    dtype = np.dtype(entry["dtype"])
    if dtype != np.dtype(_DTYPES[key]):
        raise CorruptArchive(f"{key}: unexpected dtype {entry['dtype']}")
    raw = path.read_bytes()
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(raw) != expected:
        raise CorruptArchive(f"{path}: {len(raw)} bytes, header implies {expected}")
    return np.frombuffer(raw, dtype=dtype).reshape(shape)


def read_sample(directory) -> SitsPair:
    directory = Path(directory)
    header_path = directory / "header.json"
    if not header_path.exists():
        raise MissingFile(f"{header_path} not found")
    try:
        header = json.loads(header_path.read_text())
    except json.JSONDecodeError as e:
        raise CorruptArchive(f"{header_path}: {e}") from e
    if header.get("schema_version") != SCHEMA_VERSION:
        raise UnsupportedSchema(f"schema_version {header.get('schema_version')!r}")

    arrays = {}
    for key in _FILES:
        entry = header.get(key)
        if entry is None:
            raise CorruptArchive(f"header lacks the {key!r} entry")
        arrays[key] = _read_blob(directory, key, entry) if entry["present"] else None

    try:
        radar = ModalitySeries(arrays["radar"].astype(np.float32), header["radar"]["timestamps"], Modality.RADAR)
        optical = ModalitySeries(arrays["optical"].astype(np.float32), header["optical"]["timestamps"],
                                 Modality.OPTICAL)
        label = None if arrays["label"] is None else arrays["label"].astype(np.int32)
        cloud = None if arrays["cloud_mask"] is None else arrays["cloud_mask"].astype(bool)
        if cloud is not None and not np.all(arrays["cloud_mask"] <= 1):
            raise CorruptArchive("cloud mask holds values other than 0/1")
        return SitsPair(header["location_id"], radar, optical, label=label, cloud_mask=cloud)
    except (ValueError, KeyError, ShapeMismatch, ChannelMismatch, EmptySeries) as e:
        raise CorruptArchive(f"{directory}: {e}") from e


@dataclass
class Manifest:
    root: Path
    entries: list[dict]

    def ids(self, split: str | None = None) -> list[str]:
        return [e["sample_id"] for e in self.entries if split is None or e["split"] == split]

    def path_of(self, sample_id: str) -> Path:
        for e in self.entries:
            if e["sample_id"] == sample_id:
                return self.root / e["relative_path"]
        raise KeyError(sample_id)

    def iterate(self, split: str | None = None, seed: int | None = None, epoch: int = 0) -> Iterator[SitsPair]:
        """Yield samples of ``split``; shuffled by ``(seed, epoch)`` when a seed is given."""
        chosen = [e for e in self.entries if split is None or e["split"] == split]
        chosen.sort(key=lambda e: e["sample_id"])
        if seed is not None:
            rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(epoch,)))
            chosen = [chosen[i] for i in rng.permutation(len(chosen))]
        for e in chosen:
            yield read_sample(self.root / e["relative_path"])

    def load(self, split: str | None = None) -> list[SitsPair]:
        return list(self.iterate(split))


def validate_manifest(entries: list[dict]) -> None:
    seen = set()
    for e in entries:
        missing = {"sample_id", "relative_path", "split", "has_label"} - set(e)
        if missing:
            raise ValueError(f"manifest entry lacks {sorted(missing)}")
        if e["split"] not in SPLITS:
            raise ValueError(f"unknown split {e['split']!r}")
        if e["sample_id"] in seen:
            raise ValueError(f"duplicate sample_id {e['sample_id']!r}")
        seen.add(e["sample_id"])


def write_manifest(entries: list[dict], path) -> None:
    validate_manifest(entries)
    try:
        Path(path).write_text(dumps_json(entries))
    except OSError as e:
        raise IoFailure(str(e)) from e


def load_manifest(path) -> Manifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise MissingFile(f"{path} not found")
    entries = json.loads(path.read_text())
    validate_manifest(entries)
    for e in entries:
        if not (path.parent / e["relative_path"]).exists():
            raise MissingFile(f"sample {e['sample_id']} missing at {e['relative_path']}")
    return Manifest(path.parent, entries)
