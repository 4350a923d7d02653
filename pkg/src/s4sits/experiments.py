"""Desk-scale synthetic protocol behind the directional acceptance checks.

One call to :func:`run_protocol` generates a world, pre-trains every requested
variant, fine-tunes each on the same label subset and scores them on a held-out
test split plus a clear/cloudy re-rendering of extra test worlds.
"""
from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .evaluation import DEFAULT_BIN_EDGES, cloud_report, evaluate
from .losses import LossConfig
from .models import ModelConfig, build_model
from .synthetic import WorldConfig, generate_sample
from .training import Predictor, TrainConfig, finetune, fit_stats, init_checkpoint, pretrain

log = logging.getLogger(__name__)


@dataclass
class Protocol:
    n_train: int = 64
    n_val: int = 16
    n_test: int = 16
    n_cloud_test: int = 48          # extra worlds rendered once clear and once cloudy
    clear_rate: float = 0.0
    cloudy_rate: float = 0.6
    pretrain_epochs: int = 20
    finetune_epochs: int = 50
    label_fraction: float = 0.1
    lambdas: tuple = (1.0, 10.0, 30.0)
    world: WorldConfig = field(default_factory=WorldConfig)
    model: ModelConfig = field(default_factory=lambda: ModelConfig(base_channels=16, proj_dim=16))


@dataclass
class VariantResult:
    name: str
    lam: float | None
    val_miou: float
    test_miou: float
    cloud_bins: list
    seconds: float


def _samples(cfg: WorldConfig, start: int, n: int) -> list:
    return [generate_sample(cfg, i) for i in range(start, start + n)]


def run_protocol(seed: int, proto: Protocol | None = None,
                 variants=("joint", "recon-only", "contrastive-only", "single-modal", "random-init")) -> dict:
    """Train and score each variant for one seed.

    ``joint`` is run once per value in ``proto.lambdas`` and the run with the
    best validation mIoU is reported as ``joint``; the others stay available as
    ``joint@<lambda>``.  Returns ``{name: VariantResult}``.
    """
    proto = proto or Protocol()
    world = dataclasses.replace(proto.world, seed=seed)
    train = _samples(world, 0, proto.n_train)
    val = _samples(world, proto.n_train, proto.n_val)
    start = proto.n_train + proto.n_val
    test = _samples(world, start, proto.n_test)
    extra = start + proto.n_test
    clear = _samples(dataclasses.replace(world, cloud_rate=proto.clear_rate), extra, proto.n_cloud_test)
    cloudy = _samples(dataclasses.replace(world, cloud_rate=proto.cloudy_rate), extra, proto.n_cloud_test)

    stats = fit_stats(train)
    K = proto.model.num_classes
    tc = TrainConfig(pretrain_epochs=proto.pretrain_epochs, finetune_epochs=proto.finetune_epochs,
                     label_fraction=proto.label_fraction, seed=seed)

    def score(name, lam, ckpt, t0):
        tuned = finetune(ckpt, train, tc)
        p = Predictor(tuned).predict_pair
        bins = cloud_report(p, clear + cloudy, K, DEFAULT_BIN_EDGES).cloud_bins
        res = VariantResult(name, lam, evaluate(p, val, K).miou, evaluate(p, test, K).miou, bins,
                            time.perf_counter() - t0)
        log.info("seed %d %s: val %.4f test %.4f", seed, name, res.val_miou, res.test_miou)
        return res

    results = {}
    for name in variants:
        if name == "joint":
            for lam in proto.lambdas:
                t0 = time.perf_counter()
                ck = pretrain(train, build_model(proto.model, seed), tc, LossConfig(lam=lam), stats=stats)
                results[f"joint@{lam:g}"] = score("joint", lam, ck, t0)
            best = max((r for k, r in results.items() if k.startswith("joint@")), key=lambda r: r.val_miou)
            results["joint"] = best
        elif name == "random-init":
            t0 = time.perf_counter()
            results[name] = score(name, None, init_checkpoint(proto.model, seed, stats), t0)
        else:
            t0 = time.perf_counter()
            cfg = dataclasses.replace(tc, ablation=name)
            ck = pretrain(train, build_model(proto.model, seed), cfg, LossConfig(), stats=stats)
            results[name] = score(name, None, ck, t0)
    return results


def bin_miou(result: VariantResult, lo: float) -> float | None:
    for b in result.cloud_bins:
        if b["ratio_lo"] == lo:
            return b["miou"]
    raise KeyError(lo)


def cloud_gaps(a: VariantResult, b: VariantResult, clear_lo: float = 0.0, cloudy_lo: float = 0.15):
    """(gap on the clear bin, gap on the cloudy bin) of ``a`` over ``b``."""
    return (bin_miou(a, clear_lo) - bin_miou(b, clear_lo), bin_miou(a, cloudy_lo) - bin_miou(b, cloudy_lo))


def median(values) -> float:
    return float(np.median(np.asarray(list(values), dtype=np.float64)))
