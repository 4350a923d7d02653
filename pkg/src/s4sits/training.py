"""Pre-training, fine-tuning and single-modality prediction."""
from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .checkpoint import Checkpoint
from .errors import EmptyDataset, InvalidConfig, ModalityMismatch, NonFiniteLoss
from .losses import LossConfig, cross_modal_reconstruction, mmst_contrastive, segmentation_ce
from .models import ModelConfig, S4Net, build_model, pad_input
from .sits_core import (
    IGNORE_INDEX,
    Modality,
    ModalitySeries,
    NormalizationStats,
    SitsPair,
    fit_normalization,
    nearest_timestamp_align,
    normalize,
)

log = logging.getLogger(__name__)


class Ablation(str, enum.Enum):
    JOINT = "joint"
    CONTRASTIVE_ONLY = "contrastive-only"
    RECON_ONLY = "recon-only"
    SINGLE_MODAL = "single-modal"


@dataclass
class TrainConfig:
    pretrain_epochs: int = 100
    finetune_epochs: int = 50
    batch_size: int = 8
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    grad_clip: float = 5.0
    label_fraction: float = 1.0
    inference_modality: str = "optical"
    ablation: str = "joint"
    window: int = 12
    symmetric_recon: bool = False
    augment_noise: float = 0.1
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if self.pretrain_epochs < 0 or self.finetune_epochs < 0:
            raise InvalidConfig("epochs must be >= 0")
        if not 0 < self.label_fraction <= 1:
            raise InvalidConfig("label_fraction must lie in (0, 1]")
        if self.batch_size < 1 or self.window < 1:
            raise InvalidConfig("batch_size and window must be >= 1")
        try:
            Modality(self.inference_modality)
            Ablation(self.ablation)
        except ValueError as e:
            raise InvalidConfig(str(e)) from e
        return self

    @property
    def modality(self) -> Modality:
        return Modality(self.inference_modality)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfig(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d).validate()


@dataclass
class Prepared:
    """Aligned, normalised sample ready for batching."""
    location_id: str
    radar: np.ndarray     # [T, 2, H, W]
    optical: np.ndarray   # [T, 3, H, W]
    label: np.ndarray | None
    cloud_mask: np.ndarray | None  # aligned [T, H, W]

    def series(self, modality: Modality) -> np.ndarray:
        return self.radar if modality is Modality.RADAR else self.optical


def prepare(pairs: Sequence[SitsPair], stats: NormalizationStats) -> list[Prepared]:
    out = []
    for p in pairs:
        al = nearest_timestamp_align(p.radar, p.optical)
        mask = None if p.cloud_mask is None else p.cloud_mask[al.optical_frames]
        out.append(Prepared(
            p.location_id,
            normalize(al.radar, stats).data,
            normalize(al.optical, stats).data,
            p.label,
            mask,
        ))
    return out


def fit_stats(pairs: Sequence[SitsPair]) -> NormalizationStats:
    if not pairs:
        raise EmptyDataset("cannot fit normalisation on an empty dataset")
    return fit_normalization([s for p in pairs for s in (p.radar, p.optical)])


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=tuple(key)))


def window_slice(T: int, window: int, rng: np.random.Generator | None) -> np.ndarray:
    """Frame indices of a length-``window`` crop; random start if ``rng`` else centred.

    Short series are padded by repeating the last frame.
    """
    if T <= window:
        return np.minimum(np.arange(window), T - 1)
    start = int(rng.integers(0, T - window + 1)) if rng is not None else (T - window) // 2
    return np.arange(start, start + window)


def _stack(samples: list[Prepared], frames: list[np.ndarray], modality: Modality) -> torch.Tensor:
    return torch.from_numpy(np.stack([s.series(modality)[f] for s, f in zip(samples, frames)]))


def epoch_batches(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    order = _rng(seed, epoch, 0).permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def make_optimizer(model: S4Net, cfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2),
                            weight_decay=cfg.weight_decay)


def _augment(x: torch.Tensor, rng: np.random.Generator, noise: float) -> tuple[torch.Tensor, np.ndarray]:
    """Horizontal flip (per sample, p=0.5) plus Gaussian noise; returns the flip flags."""
    flips = rng.uniform(size=x.shape[0]) < 0.5
    out = x.clone()
    for i in np.flatnonzero(flips):
        out[i] = out[i].flip(-1)
    out = out + noise * torch.from_numpy(rng.standard_normal(size=tuple(x.shape)).astype(np.float32))
    return out, flips


def _unflip(f: torch.Tensor, flips: np.ndarray) -> torch.Tensor:
    if not flips.any():
        return f
    idx = torch.from_numpy(flips)
    return torch.where(idx[:, None, None, None, None], f.flip(-1), f)


def pretrain_losses(model: S4Net, radar: torch.Tensor, optical: torch.Tensor, cfg: TrainConfig,
                    loss_cfg: LossConfig, rng: np.random.Generator, neg_seed: int = 0):
    """(L_c, L_r) for one batch of conv-layout tensors. Excluded terms come back as ``None``."""
    ablation = Ablation(cfg.ablation)
    mod = cfg.modality
    x = {Modality.RADAR: radar, Modality.OPTICAL: optical}
    loss_c = loss_r = None

    if ablation is Ablation.SINGLE_MODAL:
        view, flips = _augment(x[mod], rng, cfg.augment_noise)
        f1 = model.encode(x[mod], mod)
        f2 = model.encode(view, mod)
        p2 = _unflip(model.project(f2), flips)
        loss_c = mmst_contrastive(model.project(f1), p2, loss_cfg.tau, loss_cfg.max_negatives, neg_seed)
        return loss_c, None

    feats = {}
    if ablation in (Ablation.JOINT, Ablation.CONTRASTIVE_ONLY) or cfg.symmetric_recon:
        feats = {m: model.encode(x[m], m) for m in Modality}
    else:
        feats = {mod: model.encode(x[mod], mod)}
    if ablation in (Ablation.JOINT, Ablation.CONTRASTIVE_ONLY):
        loss_c = mmst_contrastive(model.project(feats[Modality.RADAR]), model.project(feats[Modality.OPTICAL]),
                                  loss_cfg.tau, loss_cfg.max_negatives, neg_seed)
    if ablation in (Ablation.JOINT, Ablation.RECON_ONLY):
        directions = list(Modality) if cfg.symmetric_recon else [mod]
        terms = [cross_modal_reconstruction(model.reconstruct(feats[m]), x[m.other]) for m in directions]
        loss_r = sum(terms) / len(terms)
    return loss_c, loss_r


def _check_finite(loss: torch.Tensor, where: str) -> None:
    if not torch.isfinite(loss):
        raise NonFiniteLoss(f"non-finite loss during {where}")


def _append_log(path: Path | None, record: dict) -> None:
    if path is not None:
        with open(path, "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def init_checkpoint(model_config: ModelConfig, seed: int = 0, stats: NormalizationStats | None = None,
                    loss_config: LossConfig | None = None) -> Checkpoint:
    model = build_model(model_config, seed)
    return Checkpoint.from_model(model, stats=stats, seed=seed, loss_config=loss_config or LossConfig())


def pretrain(dataset: Sequence[SitsPair], model: S4Net | Checkpoint, cfg: TrainConfig,
             loss_cfg: LossConfig | None = None, stats: NormalizationStats | None = None,
             log_path=None, epochs: int | None = None) -> Checkpoint:
    """Self-supervised pre-training on unlabeled pairs.

    ``model`` is a fresh network or a checkpoint to resume from (its epoch,
    optimizer state and loss history carry over).  Runs up to
    ``cfg.pretrain_epochs`` total epochs, or ``epochs`` more if given.
    """
    cfg.validate()
    loss_cfg = (loss_cfg or LossConfig()).validate()
    if not dataset:
        raise EmptyDataset("pre-training needs at least one sample")

    resume = model if isinstance(model, Checkpoint) else None
    if resume is not None:
        net = resume.build_model()
        stats = stats or resume.stats
        start, history, steps = resume.epoch, list(resume.history), list(resume.step_losses)
    else:
        net, start, history, steps = model, 0, [], []
    stats = stats or fit_stats(dataset)
    opt = make_optimizer(net, cfg)
    if resume is not None and resume.optimizer_state is not None and resume.stage == "pretrain":
        opt.load_state_dict(resume.optimizer_state)

    data = prepare(dataset, stats)
    end = cfg.pretrain_epochs if epochs is None else start + epochs
    log_path = Path(log_path) if log_path else None
    params = list(net.parameters())

    for epoch in range(start, end):
        net.train()
        sums = {"loss_c": 0.0, "loss_r": 0.0, "loss_joint": 0.0}
        batches = epoch_batches(len(data), cfg.batch_size, cfg.seed, epoch)
        for step, idx in enumerate(batches):
            rng = _rng(cfg.seed, epoch, step + 1)
            batch = [data[i] for i in idx]
            frames = [window_slice(len(s.optical), cfg.window, rng) for s in batch]
            radar = _stack(batch, frames, Modality.RADAR).permute(0, 2, 1, 3, 4)
            optical = _stack(batch, frames, Modality.OPTICAL).permute(0, 2, 1, 3, 4)
            radar, _ = pad_input(radar, net.cfg.multiples)
            optical, _ = pad_input(optical, net.cfg.multiples)

            neg_seed = int(rng.integers(0, 2**31))
            loss_c, loss_r = pretrain_losses(net, radar, optical, cfg, loss_cfg, rng, neg_seed)
            zero = torch.zeros(())
            lc = loss_c if loss_c is not None else zero
            lr_ = loss_r if loss_r is not None else zero
            lam = loss_cfg.lam if loss_c is not None else 1.0
            loss = lc + lam * lr_
            _check_finite(loss, f"pre-training epoch {epoch}")

            opt.zero_grad(set_to_none=True)
            loss.backward()
            torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
            opt.step()

            steps.append(loss.item())
            sums["loss_c"] += lc.item()
            sums["loss_r"] += lr_.item()
            sums["loss_joint"] += loss.item()
        record = {"epoch": epoch + 1, "split": "train", **{k: v / len(batches) for k, v in sums.items()}}
        history.append(record)
        _append_log(log_path, record)
        log.info("pretrain epoch %d: %s", epoch + 1, record)

    return Checkpoint.from_model(
        net, train_config=cfg.to_dict(), loss_config=loss_cfg, stats=stats, epoch=end if end > start else start,
        stage="pretrain", seed=cfg.seed, optimizer_state=opt.state_dict() if end > start else
        (resume.optimizer_state if resume is not None else None),
        history=history, step_losses=steps,
    )


def select_labeled(ids: Sequence[str], label_fraction: float, seed: int) -> list[str]:
    """Deterministic ``ceil(fraction * K)`` subset of the labeled ids."""
    if not ids:
        raise EmptyDataset("no labeled samples")
    if not 0 < label_fraction <= 1:
        raise InvalidConfig("label_fraction must lie in (0, 1]")
    ordered = sorted(ids)
    n = max(1, math.ceil(label_fraction * len(ordered) - 1e-9))
    perm = _rng(seed, 2**20).permutation(len(ordered))
    return sorted(ordered[i] for i in perm[:n])


def finetune(ckpt: Checkpoint, labeled_dataset: Sequence[SitsPair], cfg: TrainConfig,
             model_config: ModelConfig | None = None, log_path=None) -> Checkpoint:
    """Supervised segmentation training on a label-fraction subset, inference modality only."""
    cfg.validate()
    if model_config is not None:
        ckpt.check_compatible(model_config)
    labeled = [p for p in labeled_dataset if p.label is not None]
    if not labeled:
        raise EmptyDataset("fine-tuning needs labeled samples")
    for p in labeled:
        p.check_labels(ckpt.model_config.num_classes)
    chosen = set(select_labeled([p.location_id for p in labeled], cfg.label_fraction, cfg.seed))
    subset = [p for p in labeled if p.location_id in chosen]

    stats = ckpt.stats or fit_stats(subset)
    net = ckpt.build_model()
    opt = make_optimizer(net, cfg)
    data = prepare(subset, stats)
    mod = cfg.modality
    log_path = Path(log_path) if log_path else None
    history, steps = [], []
    params = list(net.parameters())

    for epoch in range(cfg.finetune_epochs):
        net.train()
        total = 0.0
        batches = epoch_batches(len(data), cfg.batch_size, cfg.seed + 7919, epoch)
        for step, idx in enumerate(batches):
            rng = _rng(cfg.seed + 7919, epoch, step + 1)
            batch = [data[i] for i in idx]
            frames = [window_slice(len(s.series(mod)), cfg.window, rng) for s in batch]
            x = _stack(batch, frames, mod)
            y = torch.from_numpy(np.stack([s.label for s in batch])).long()
            loss = segmentation_ce(net.forward_segment(x, mod), y, IGNORE_INDEX)
            _check_finite(loss, f"fine-tuning epoch {epoch}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
            opt.step()
            steps.append(loss.item())
            total += loss.item()
        record = {"epoch": epoch + 1, "split": "train", "loss_ce": total / len(batches)}
        history.append(record)
        _append_log(log_path, record)
        log.info("finetune epoch %d: %s", epoch + 1, record)

    return Checkpoint.from_model(
        net, train_config={**cfg.to_dict(), "labeled_ids": sorted(chosen)}, loss_config=ckpt.loss_config,
        stats=stats, epoch=cfg.finetune_epochs, stage="finetune", seed=cfg.seed,
        optimizer_state=opt.state_dict(), history=history, step_losses=steps,
    )


class Predictor:
    """Frozen eval-mode network bound to one checkpoint and modality."""

    def __init__(self, ckpt: Checkpoint, modality=None):
        self.ckpt = ckpt
        tc = ckpt.train_config or {}
        self.modality = Modality(modality or tc.get("inference_modality", "optical"))
        self.window = int(tc.get("window", TrainConfig.window))
        self.net = ckpt.build_model().eval()
        if ckpt.stats is None:
            raise InvalidConfig("checkpoint carries no normalisation statistics")

    @torch.no_grad()
    def logits(self, series: ModalitySeries) -> torch.Tensor:
        if series.modality is not self.modality:
            raise ModalityMismatch(f"model predicts from {self.modality.value}, got {series.modality.value}")
        x = normalize(series, self.ckpt.stats).data
        x = x[window_slice(len(x), self.window, None)]
        return self.net.forward_segment(torch.from_numpy(x)[None], self.modality)[0]

    def __call__(self, series: ModalitySeries) -> np.ndarray:
        return self.logits(series).argmax(dim=0).numpy().astype(np.int32)

    def predict_pair(self, pair: SitsPair) -> np.ndarray:
        """Predict from the inference modality of a pair after timestamp alignment."""
        al = nearest_timestamp_align(pair.radar, pair.optical)
        return self(al.radar if self.modality is Modality.RADAR else al.optical)


def predict(ckpt: Checkpoint, series: ModalitySeries) -> np.ndarray:
    return Predictor(ckpt)(series)
