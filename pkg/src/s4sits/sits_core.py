"""Domain types for paired radar/optical image time series.

Arrays follow the on-disk layout ``[T, C, H, W]`` (frames, channels, rows,
columns).  Timestamps are integer seconds since the Unix epoch (UTC).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from .errors import ChannelMismatch, EmptyDataset, EmptySeries, ShapeMismatch

IGNORE_INDEX = -1


class Modality(str, enum.Enum):
    RADAR = "radar"
    OPTICAL = "optical"

    @property
    def other(self) -> "Modality":
        return Modality.OPTICAL if self is Modality.RADAR else Modality.RADAR

    @property
    def default_channels(self) -> int:
        return 2 if self is Modality.RADAR else 3


@dataclass(frozen=True, eq=False)
class ModalitySeries:
    data: np.ndarray
    timestamps: np.ndarray
    modality: Modality

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        ts = np.asarray(self.timestamps, dtype=np.int64).reshape(-1)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "modality", Modality(self.modality))
        if data.ndim != 4:
            raise ShapeMismatch(f"expected [T, C, H, W] data, got shape {data.shape}")
        if 0 in data.shape:
            raise EmptySeries(f"series has an empty dimension: {data.shape}")
        if ts.shape[0] != data.shape[0]:
            raise ShapeMismatch(f"{ts.shape[0]} timestamps for {data.shape[0]} frames")
        if ts.shape[0] > 1 and not np.all(np.diff(ts) > 0):
            raise ValueError("timestamps must be strictly increasing")
        if not np.all(np.isfinite(data)):
            raise ValueError("series contains non-finite values")

    @property
    def T(self) -> int:
        return self.data.shape[0]

    @property
    def C(self) -> int:
        return self.data.shape[1]

    @property
    def H(self) -> int:
        return self.data.shape[2]

    @property
    def W(self) -> int:
        return self.data.shape[3]

    def equals(self, other: "ModalitySeries") -> bool:
        return (
            self.modality is other.modality
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
            and np.array_equal(self.timestamps, other.timestamps)
        )


@dataclass(frozen=True, eq=False)
class SitsPair:
    location_id: str
    radar: ModalitySeries
    optical: ModalitySeries
    label: np.ndarray | None = None
    cloud_mask: np.ndarray | None = None

    def __post_init__(self):
        if self.radar.modality is not Modality.RADAR or self.optical.modality is not Modality.OPTICAL:
            raise ShapeMismatch("radar/optical slots hold the wrong modality")
        hw = (self.radar.H, self.radar.W)
        if hw != (self.optical.H, self.optical.W):
            raise ShapeMismatch(f"radar is {hw}, optical is {(self.optical.H, self.optical.W)}")
        if self.label is not None:
            label = np.ascontiguousarray(self.label, dtype=np.int32)
            if label.shape != hw:
                raise ShapeMismatch(f"label shape {label.shape} != {hw}")
            if np.any((label < 0) & (label != IGNORE_INDEX)):
                raise ValueError("label holds negative values other than IGNORE_INDEX")
            object.__setattr__(self, "label", label)
        if self.cloud_mask is not None:
            mask = np.ascontiguousarray(self.cloud_mask, dtype=bool)
            expected = (self.optical.T, *hw)
            if mask.shape != expected:
                raise ShapeMismatch(f"cloud mask shape {mask.shape} != {expected}")
            object.__setattr__(self, "cloud_mask", mask)

    @property
    def H(self) -> int:
        return self.radar.H

    @property
    def W(self) -> int:
        return self.radar.W

    def series(self, modality: Modality) -> ModalitySeries:
        return self.radar if Modality(modality) is Modality.RADAR else self.optical

    def check_labels(self, num_classes: int) -> None:
        if self.label is not None and np.any(self.label >= num_classes):
            raise ValueError(f"label value >= num_classes ({num_classes})")

    def equals(self, other: "SitsPair") -> bool:
        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and a.tobytes() == b.tobytes()

        return (
            self.location_id == other.location_id
            and self.radar.equals(other.radar)
            and self.optical.equals(other.optical)
            and same(self.label, other.label)
            and same(self.cloud_mask, other.cloud_mask)
        )


@dataclass(frozen=True, eq=False)
class AlignedPair:
    radar: ModalitySeries
    optical: ModalitySeries
    pairing: list[tuple[int, int]]
    anchor_modality: Modality
    # frames of the original optical series that survived, for re-indexing cloud masks
    optical_frames: np.ndarray = field(default=None)

    @property
    def T(self) -> int:
        return self.radar.T


def nearest_frames(anchor_ts: np.ndarray, other_ts: np.ndarray) -> np.ndarray:
    """Index into ``other_ts`` of the closest timestamp for each anchor time.

    Ties go to the earlier frame.
    """
    anchor_ts = np.asarray(anchor_ts, dtype=np.int64)
    other_ts = np.asarray(other_ts, dtype=np.int64)
    right = np.searchsorted(other_ts, anchor_ts, side="left")
    right = np.clip(right, 0, len(other_ts) - 1)
    left = np.clip(right - 1, 0, len(other_ts) - 1)
    d_left = np.abs(anchor_ts - other_ts[left])
    d_right = np.abs(other_ts[right] - anchor_ts)
    return np.where(d_left <= d_right, left, right)


def nearest_timestamp_align(radar: ModalitySeries, optical: ModalitySeries) -> AlignedPair:
    """Subset the longer series to the frames closest in time to the shorter one.

    The shorter series (radar on equal length) is returned unchanged.  The
    longer one may repeat frames; its kept frames are re-stamped with the
    anchor's timestamps so the result stays strictly increasing.
    """
    if radar.T == 0 or optical.T == 0:
        raise EmptySeries("cannot align an empty series")
    if (radar.H, radar.W) != (optical.H, optical.W):
        raise ShapeMismatch("radar and optical series are not spatially aligned")

    if radar.T <= optical.T:
        matched = nearest_frames(radar.timestamps, optical.timestamps)
        pairing = [(i, int(j)) for i, j in enumerate(matched)]
        opt = ModalitySeries(optical.data[matched], radar.timestamps.copy(), Modality.OPTICAL)
        return AlignedPair(radar, opt, pairing, Modality.RADAR, optical_frames=matched)

    matched = nearest_frames(optical.timestamps, radar.timestamps)
    pairing = [(i, int(j)) for i, j in enumerate(matched)]
    rad = ModalitySeries(radar.data[matched], optical.timestamps.copy(), Modality.RADAR)
    return AlignedPair(rad, optical, pairing, Modality.OPTICAL,
                       optical_frames=np.arange(optical.T))


def cloud_cover_ratio(mask) -> float:
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 3 or 0 in mask.shape:
        raise EmptySeries(f"cloud mask must be a nonempty [T, H, W] array, got {mask.shape}")
    return float(np.count_nonzero(mask)) / mask.size


@dataclass(frozen=True)
class NormalizationStats:
    mean: dict[Modality, np.ndarray]
    std: dict[Modality, np.ndarray]

    def to_json(self) -> dict:
        return {
            m.value: {"mean": self.mean[m].tolist(), "std": self.std[m].tolist()}
            for m in sorted(self.mean, key=lambda m: m.value)
        }

    @classmethod
    def from_json(cls, obj: dict) -> "NormalizationStats":
        mean = {Modality(k): np.asarray(v["mean"], dtype=np.float64) for k, v in obj.items()}
        std = {Modality(k): np.asarray(v["std"], dtype=np.float64) for k, v in obj.items()}
        return cls(mean, std)


def fit_normalization(samples: Iterable[ModalitySeries]) -> NormalizationStats:
    """Per-modality, per-channel population mean/std over all frames and pixels."""
    samples = list(samples)
    sums: dict[Modality, np.ndarray] = {}
    sq: dict[Modality, np.ndarray] = {}
    counts: dict[Modality, int] = {}
    for s in samples:
        x = s.data.astype(np.float64)
        if s.modality in sums and sums[s.modality].shape[0] != s.C:
            raise ChannelMismatch(f"{s.modality.value}: {s.C} channels, expected {sums[s.modality].shape[0]}")
        per_channel = x.transpose(1, 0, 2, 3).reshape(s.C, -1)
        sums.setdefault(s.modality, np.zeros(s.C))
        sq.setdefault(s.modality, np.zeros(s.C))
        sums[s.modality] += per_channel.sum(axis=1)
        counts[s.modality] = counts.get(s.modality, 0) + per_channel.shape[1]
    if not sums:
        raise EmptyDataset("fit_normalization needs at least one series")

    mean = {m: sums[m] / counts[m] for m in sums}
    # second pass for the variance: avoids catastrophic cancellation of E[x^2] - E[x]^2
    for s in samples:
        x = s.data.astype(np.float64).transpose(1, 0, 2, 3).reshape(s.C, -1)
        sq[s.modality] += ((x - mean[s.modality][:, None]) ** 2).sum(axis=1)
    std = {}
    for m in sums:
        sd = np.sqrt(sq[m] / counts[m])
        std[m] = np.where(sd > 0, sd, 1.0)
    return NormalizationStats(mean, std)


def normalize(series: ModalitySeries, stats: NormalizationStats) -> ModalitySeries:
    m = series.modality
    if m not in stats.mean:
        raise ChannelMismatch(f"no statistics for modality {m.value}")
    mean, std = stats.mean[m], stats.std[m]
    if mean.shape[0] != series.C:
        raise ChannelMismatch(f"series has {series.C} channels, stats have {mean.shape[0]}")
    x = (series.data.astype(np.float64) - mean[None, :, None, None]) / std[None, :, None, None]
    return replace(series, data=x.astype(np.float32))
