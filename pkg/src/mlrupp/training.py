"""Deterministic toy training run on the synthetic blob task."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import ConfigError
from .metrics import dsc, make_blob_task
from .net import SGD, MLRUNet, NetCfg, downsample_labels, save_checkpoint, total_loss
from .tensor import Rng


class DivergenceError(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"loss became non-finite at step {step}")
        self.step = step


@dataclass(frozen=True)
class TrainCfg:
    net: NetCfg = field(default_factory=NetCfg)
    steps: int = 300
    seed: int = 42
    batch: int = 2
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 3e-5
    nesterov: bool = True
    noise: float = 0.2

    def to_json(self) -> dict:
        out = asdict(self)
        out["net"] = self.net.to_json()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "TrainCfg":
        obj = dict(obj)
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown TrainCfg keys {sorted(unknown)}")
        net = NetCfg.from_json(obj.pop("net", {}))
        return cls(net=net, **obj)


def make_batch(cfg: TrainCfg):
    """``batch`` blob volumes with seeds ``seed, seed+1, ...`` stacked on the batch axis."""
    vols, labs = [], []
    for i in range(cfg.batch):
        v, l = make_blob_task(cfg.net.extents, cfg.net.num_classes, cfg.seed + i, noise=cfg.noise)
        vols.append(v)
        labs.append(l)
    return np.stack(vols), np.stack(labs)


def mean_foreground_dice(logits: np.ndarray, labels: np.ndarray) -> float:
    pred = logits.argmax(axis=1)
    return float(np.mean([dsc(labels, pred, c) for c in range(1, logits.shape[1])]))


def demo_train(cfg: TrainCfg = TrainCfg(), trace_path=None, checkpoint_dir=None):
    """Full-batch SGD on the blob task.

    Returns ``(model, trace)``; ``trace`` holds one ``{step, loss, dice, lr}``
    record per evaluated step. Step 0 is the untrained model; record ``k``
    follows ``k`` optimiser updates. Raises :class:`DivergenceError` on a
    non-finite loss.
    """
    model = MLRUNet(cfg.net, Rng(cfg.seed))
    model.train()
    x, labels = make_batch(cfg)
    target = downsample_labels(labels, cfg.net.embed_extents)
    opt = SGD(model.params(), cfg.lr, cfg.momentum, cfg.weight_decay, cfg.nesterov)
    trace = []
    sink = open(trace_path, "w") if trace_path is not None else None
    try:
        for step in range(cfg.steps + 1):
            out = model(x)
            loss = total_loss(out, labels, cfg.net.ds_weights)
            value = float(loss.data)
            if not math.isfinite(value):
                raise DivergenceError(step)
            rec = {"step": step, "loss": value,
                   "dice": mean_foreground_dice(out.logits.data, target), "lr": cfg.lr}
            trace.append(rec)
            if sink is not None:
                sink.write(json.dumps(rec) + "\n")
            if step == cfg.steps:
                break
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
    finally:
        if sink is not None:
            sink.close()
    if checkpoint_dir is not None:
        save_checkpoint(model, Path(checkpoint_dir))
    return model, trace


def decrease_fraction(trace, after: int = 20) -> float:
    losses = [r["loss"] for r in trace if r["step"] >= after]
    if len(losses) < 2:
        return 1.0
    return float(np.mean(np.diff(losses) < 0))
