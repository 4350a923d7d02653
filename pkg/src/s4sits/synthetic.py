"""Synthetic paired radar/optical time series with labels and cloud masks.

Each sample is a small "world": a Voronoi partition of the grid into class
patches, each class following its own vegetation-like seasonal curve.  The
optical sensor sees that curve through a class-specific RGB basis and gets
occluded by clouds; the radar sensor sees a different linear read-out of the
same curve, with multiplicative speckle and no clouds.

All randomness for sample ``i`` is drawn from independent sub-streams of
``SeedSequence(seed, spawn_key=(i, stream))`` so that, e.g., changing the cloud
rate leaves the radar tensors and the cloud-free optical content untouched.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidConfig, IoFailure
from .sits_core import Modality, ModalitySeries, SitsPair

log = logging.getLogger(__name__)

DAY = 86400
YEAR_START = 1546300800  # 2019-01-01T00:00:00Z

_STREAMS = {"world": 0, "time": 1, "optical_noise": 2, "radar_speckle": 3, "clouds": 4, "cloud_brightness": 5}

# (peak day-of-year, amplitude, width in days); class 0 is bare background
DEFAULT_PHENOLOGY = (
    (180.0, 0.05, 120.0),
    (120.0, 0.60, 30.0),
    (170.0, 0.60, 30.0),
    (220.0, 0.60, 30.0),
    (170.0, 0.35, 60.0),
)

_COLOR_BASIS = np.array(
    [
        [0.55, 0.45, 0.35],
        [0.30, 0.70, 0.25],
        [0.35, 0.60, 0.30],
        [0.25, 0.65, 0.40],
        [0.40, 0.55, 0.20],
        [0.45, 0.60, 0.35],
        [0.20, 0.50, 0.30],
        [0.50, 0.70, 0.30],
    ]
)
_SOIL = np.array([0.12, 0.10, 0.08])
_ROUGHNESS = np.array([0.05, 0.15, 0.10, 0.20, 0.12, 0.08, 0.18, 0.22])
CLOUD_LEVEL = 0.9


@dataclass
class WorldConfig:
    height: int = 16
    width: int = 16
    num_classes: int = 5
    patch_count: int = 10
    t_optical: int = 12
    t_radar: int = 20
    phenology: list = field(default_factory=lambda: [list(p) for p in DEFAULT_PHENOLOGY])
    phenology_jitter: float = 10.0
    cloud_rate: float = 0.3
    cloud_radius: tuple = (0.15, 0.45)
    max_cloud_blobs: int = 2
    optical_noise: float = 0.02
    speckle_sigma: float = 0.3
    seed: int = 0

    def validate(self) -> "WorldConfig":
        if self.num_classes < 2:
            raise InvalidConfig("num_classes must be >= 2")
        if self.height < 8 or self.width < 8:
            raise InvalidConfig("height and width must be >= 8")
        if self.patch_count < 1:
            raise InvalidConfig("patch_count must be >= 1")
        if self.t_optical < 1 or self.t_radar < 1:
            raise InvalidConfig("frame counts must be >= 1")
        if not 0.0 <= self.cloud_rate <= 1.0:
            raise InvalidConfig("cloud_rate must lie in [0, 1]")
        if self.optical_noise < 0 or self.speckle_sigma < 0:
            raise InvalidConfig("noise scales must be non-negative")
        if len(self.phenology) < self.num_classes:
            raise InvalidConfig(f"phenology lists {len(self.phenology)} classes, need {self.num_classes}")
        if self.num_classes > len(_COLOR_BASIS):
            raise InvalidConfig(f"at most {len(_COLOR_BASIS)} classes are supported")
        for peak, amp, width in self.phenology[: self.num_classes]:
            if amp <= 0 or width <= 0:
                raise InvalidConfig("phenology amplitudes and widths must be positive")
        lo, hi = self.cloud_radius
        if not 0 < lo <= hi:
            raise InvalidConfig("cloud_radius must satisfy 0 < lo <= hi")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cloud_radius"] = list(self.cloud_radius)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WorldConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfig(f"unknown world config keys: {sorted(unknown)}")
        d = dict(d)
        if "cloud_radius" in d:
            d["cloud_radius"] = tuple(d["cloud_radius"])
        return cls(**d).validate()


@dataclass
class SyntheticWorld:
    class_map: np.ndarray
    peaks: np.ndarray       # per-class peak day, jittered per sample
    amplitudes: np.ndarray
    widths: np.ndarray

    def curve(self, k: int, doy) -> np.ndarray:
        doy = np.asarray(doy, dtype=np.float64)
        z = (doy - self.peaks[k]) / self.widths[k]
        return 0.1 + self.amplitudes[k] * np.exp(-0.5 * z * z)

    def curves(self, doy) -> np.ndarray:
        """[K, len(doy)] curve values."""
        return np.stack([self.curve(k, doy) for k in range(len(self.peaks))])


def _rng(cfg: WorldConfig, index: int, stream: str) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=cfg.seed, spawn_key=(index, _STREAMS[stream]))
    return np.random.default_rng(ss)


def generate_world(cfg: WorldConfig, index: int = 0) -> SyntheticWorld:
    cfg.validate()
    rng = _rng(cfg, index, "world")
    H, W, K = cfg.height, cfg.width, cfg.num_classes
    seeds = rng.uniform(0, 1, size=(cfg.patch_count, 2)) * [H, W]
    seed_class = rng.integers(0, K, size=cfg.patch_count)
    yy, xx = np.mgrid[0:H, 0:W]
    d2 = (yy[..., None] + 0.5 - seeds[:, 0]) ** 2 + (xx[..., None] + 0.5 - seeds[:, 1]) ** 2
    class_map = seed_class[np.argmin(d2, axis=-1)].astype(np.int32)

    phen = np.asarray(cfg.phenology[:K], dtype=np.float64)
    jitter = rng.uniform(-cfg.phenology_jitter, cfg.phenology_jitter, size=K) if cfg.phenology_jitter else 0.0
    return SyntheticWorld(class_map, phen[:, 0] + jitter, phen[:, 1], phen[:, 2])


def _timestamps(cfg: WorldConfig, index: int) -> tuple[np.ndarray, np.ndarray]:
    rng = _rng(cfg, index, "time")

    def series(n: int, hour: int) -> np.ndarray:
        spacing = 365.0 / n
        days = np.arange(n) * spacing + spacing / 2
        days = days + rng.uniform(-spacing / 4, spacing / 4, size=n)
        days = np.floor(days).astype(np.int64)
        for i in range(1, n):
            if days[i] <= days[i - 1]:
                days[i] = days[i - 1] + 1
        return YEAR_START + days * DAY + hour * 3600

    # distinct acquisition hours keep the two sensors' timestamps interleaved but never equal
    return series(cfg.t_optical, 10), series(cfg.t_radar, 6)


def _doy(ts: np.ndarray) -> np.ndarray:
    return (ts - YEAR_START) / DAY


def render_optical(world: SyntheticWorld, cfg: WorldConfig, index: int = 0):
    """Optical RGB series and its cloud mask ``[T, H, W]`` (True = clouded)."""
    ts, _ = _timestamps(cfg, index)
    curves = world.curves(_doy(ts))                      # [K, T]
    colors = _COLOR_BASIS[: cfg.num_classes]             # [K, 3]
    per_class = curves[:, :, None] * colors[:, None, :] + _SOIL  # [K, T, 3]
    data = per_class[world.class_map].transpose(2, 3, 0, 1)      # [T, 3, H, W]

    noise_rng = _rng(cfg, index, "optical_noise")
    if cfg.optical_noise > 0:
        data = data + noise_rng.normal(0.0, cfg.optical_noise, size=data.shape)

    mask = _cloud_mask(cfg, index, len(ts))
    if mask.any():
        cloud_rng = _rng(cfg, index, "cloud_brightness")
        bright = CLOUD_LEVEL + 0.02 * cloud_rng.standard_normal(size=data.shape)
        data = np.where(mask[:, None], bright, data)
    series = ModalitySeries(data.astype(np.float32), ts, Modality.OPTICAL)
    return series, mask


def _cloud_mask(cfg: WorldConfig, index: int, T: int) -> np.ndarray:
    rng = _rng(cfg, index, "clouds")
    H, W = cfg.height, cfg.width
    yy, xx = np.mgrid[0:H, 0:W] + 0.5
    mask = np.zeros((T, H, W), dtype=bool)
    lo, hi = cfg.cloud_radius
    for t in range(T):
        # draw a fixed number of values per frame regardless of outcome, so frames stay independent of cloud_rate
        event = rng.uniform()
        n_blobs = rng.integers(1, cfg.max_cloud_blobs + 1)
        geom = rng.uniform(size=(cfg.max_cloud_blobs, 4))
        if event >= cfg.cloud_rate:
            continue
        for b in range(n_blobs):
            cy, cx = geom[b, 0] * H, geom[b, 1] * W
            ry = (lo + (hi - lo) * geom[b, 2]) * H
            rx = (lo + (hi - lo) * geom[b, 3]) * W
            mask[t] |= ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    return mask


def render_radar(world: SyntheticWorld, cfg: WorldConfig, index: int = 0) -> ModalitySeries:
    _, ts = _timestamps(cfg, index)
    doy = _doy(ts)
    now = world.curves(doy)              # [K, T]
    lagged = world.curves(doy - 30.0)
    rough = _ROUGHNESS[: cfg.num_classes, None]
    ch0 = 0.5 * now + 0.1
    ch1 = 0.25 * lagged + 0.05 + rough
    per_class = np.stack([ch0, ch1], axis=-1)                 # [K, T, 2]
    data = per_class[world.class_map].transpose(2, 3, 0, 1)  # [T, 2, H, W]
    if cfg.speckle_sigma > 0:
        rng = _rng(cfg, index, "radar_speckle")
        s = cfg.speckle_sigma
        data = data * np.exp(s * rng.standard_normal(size=data.shape) - 0.5 * s * s)
    return ModalitySeries(data.astype(np.float32), ts, Modality.RADAR)


def generate_sample(cfg: WorldConfig, index: int) -> SitsPair:
    world = generate_world(cfg, index)
    optical, mask = render_optical(world, cfg, index)
    radar = render_radar(world, cfg, index)
    return SitsPair(f"loc{index:05d}", radar, optical, label=world.class_map, cloud_mask=mask)


def split_assignment(n: int, seed: int) -> list[str]:
    """70/15/15 train/val/test assignment for sample indices ``0..n-1``."""
    n_train = int(round(0.70 * n))
    n_val = int(round(0.15 * n))
    n_val = min(n_val, n - n_train)
    order = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(2**31,))).permutation(n)
    splits = [""] * n
    for rank, i in enumerate(order):
        splits[i] = "train" if rank < n_train else ("val" if rank < n_train + n_val else "test")
    return splits


def _write_one(args):
    from .data_io import write_sample

    cfg, index, out_dir = args
    pair = generate_sample(cfg, index)
    write_sample(pair, Path(out_dir) / pair.location_id)
    return pair.location_id


def generate_dataset(cfg: WorldConfig, n_samples: int, out_dir, workers: int = 1) -> list[dict]:
    """Write ``n_samples`` archives plus ``manifest.json`` under ``out_dir``."""
    from .data_io import write_manifest

    cfg.validate()
    if n_samples < 1:
        raise InvalidConfig("n_samples must be >= 1")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoFailure(str(e)) from e

    jobs = [(cfg, i, str(out_dir)) for i in range(n_samples)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            ids = list(pool.map(_write_one, jobs))
    else:
        ids = [_write_one(j) for j in jobs]

    splits = split_assignment(n_samples, cfg.seed)
    manifest = [
        {"sample_id": sid, "relative_path": sid, "split": split, "has_label": True}
        for sid, split in zip(ids, splits)
    ]
    write_manifest(manifest, out_dir / "manifest.json")
    log.info("wrote %d samples to %s", n_samples, out_dir)
    return manifest
