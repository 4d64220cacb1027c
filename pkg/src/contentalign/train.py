"""Mini-batch Adam training of the three encoders on seen-class records."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .corpus import DatasetView
from .loss import LossConfig, clamp_log_tau, coupled_loss
from .model import ContentAlignModel
from .splits import SplitSpec
from .tokenize import patchify, tokenize_batch

log = logging.getLogger(__name__)

DEFAULT_TEMPLATE = "an image of a {label}."


class SplitLeakage(ValueError):
    pass


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    lr_decay: float = 0.1
    decay_after: int = 5
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    freeze_image_text: bool = False
    loss: LossConfig = field(default_factory=LossConfig)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    template: str = DEFAULT_TEMPLATE

    def __post_init__(self):
        if self.learning_rate < 0 or self.lr_decay <= 0:
            raise ValueError("learning_rate must be >= 0 and lr_decay > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if "{label}" not in self.template:
            raise ValueError("template must contain '{label}'")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("loss"), Mapping):
            d["loss"] = LossConfig(**d["loss"])
        return cls(**d)


def lr_at_epoch(epoch: int, cfg: TrainConfig) -> float:
    """Step schedule: base rate through ``decay_after`` epochs, then multiplied once by ``lr_decay``."""
    if epoch < 1:
        raise ValueError("epochs are 1-based")
    return cfg.learning_rate if epoch <= cfg.decay_after else cfg.learning_rate * cfg.lr_decay


@dataclass
class TrainReport:
    epoch_losses: list[float]
    epoch_losses_per_sample: list[float]
    steps: list[tuple[int, int, float]]
    seed: int
    config: dict
    wall_clock: float = 0.0
    checkpoint: str | None = None
    temperatures: tuple[float, float] = (0.0, 0.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("steps")
        return d

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "train_report.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        with (out / "loss_curve.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "step", "loss"])
            for e, s, l in self.steps:
                w.writerow([e, s, repr(l)])


class Adam:
    def __init__(self, params: Mapping[str, np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray], lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1.0 - b1**self.t, 1.0 - b2**self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            params[k] = params[k] - update


def trainable_names(model: ContentAlignModel, freeze_image_text: bool) -> set[str]:
    if not freeze_image_text:
        return set(model.params)
    frozen = ("image.", "text.", "proj.image", "proj.text")
    return {k for k in model.params if not k.startswith(frozen)}


def prompt_for(template: str, label: str) -> str:
    return template.format(label=label)


def fit(
    view: DatasetView,
    model: ContentAlignModel,
    cfg: TrainConfig,
    split: SplitSpec | None = None,
    checkpoint: str | Path | None = None,
) -> TrainReport:
    """Train ``model`` in place on ``view`` and optionally write a checkpoint.

    Every record of ``view`` must belong to the split's seen classes.
    """
    manifest = view.manifest
    labels = view.labels
    if split is not None:
        leaked = sorted({int(k) for k in labels} - set(split.seen))
        if leaked:
            names = [manifest.classes[k].name for k in leaked]
            raise SplitLeakage(f"split leakage: records of unseen/unknown classes {names} in training data")
    if len(view) < 2:
        raise ValueError("need at least two training records")

    mcfg = model.config
    patches = patchify(view.images(), mcfg.patch)
    content_ids = tokenize_batch(view.texts(), model.vocab, mcfg.content_context)
    class_prompts = tokenize_batch(
        [prompt_for(cfg.template, c.name) for c in manifest.classes], model.vocab, mcfg.text_context
    )
    text_ids = class_prompts[labels]

    trainable = trainable_names(model, cfg.freeze_image_text)
    opt = Adam({k: model.params[k] for k in trainable}, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng(cfg.seed)
    n = len(view)
    steps: list[tuple[int, int, float]] = []
    epoch_losses, epoch_per_sample = [], []
    start = time.perf_counter()
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        lr = lr_at_epoch(epoch, cfg)
        order = rng.permutation(n)
        batches = [order[s:s + cfg.batch_size] for s in range(0, n, cfg.batch_size)]
        if len(batches[-1]) < 2:
            batches.pop()
        totals, counts = [], []
        for idx in batches:
            loss = _train_step(model, opt, trainable, patches[idx], text_ids[idx], content_ids[idx], cfg, lr)
            step += 1
            steps.append((epoch, step, loss))
            totals.append(loss)
            counts.append(len(idx))
        epoch_losses.append(float(np.mean(totals)))
        epoch_per_sample.append(float(np.sum(totals) / np.sum(counts)))
        log.info("epoch %d lr %.2e mean loss %.4f", epoch, lr, epoch_losses[-1])

    report = TrainReport(
        epoch_losses=epoch_losses,
        epoch_losses_per_sample=epoch_per_sample,
        steps=steps,
        seed=cfg.seed,
        config=cfg.to_dict(),
        wall_clock=time.perf_counter() - start,
        temperatures=model.temperatures,
    )
    if checkpoint is not None:
        provenance = {
            "split": None if split is None else split.name,
            "seen": None if split is None else sorted(manifest.classes[k].name for k in split.seen),
            "channel": view.channel,
            "train_config": cfg.to_dict(),
        }
        report.checkpoint = str(model.save(checkpoint, provenance))
    return report


def _train_step(model, opt, trainable, patches, text_ids, content_ids, cfg: TrainConfig, lr: float) -> float:
    p = model.leaves(trainable)
    img = model.project_normalize_t(model.image_cls(patches, p), "I", p)
    txt = model.project_normalize_t(model.text_cls(text_ids, p), "T", p)
    con = model.project_normalize_t(model.content_cls(content_ids, p), "C", p)
    res = coupled_loss(
        img.data, txt.data, con.data, model.params["log_tau_ic"], model.params["log_tau_tc"], cfg.loss
    )
    if not np.isfinite(res.total):
        raise TrainingDiverged(f"non-finite loss {res.total}")
    surrogate = (con * res.grad_content).sum()
    if img.requires_grad:
        surrogate = surrogate + (img * res.grad_image).sum()
    if txt.requires_grad:
        surrogate = surrogate + (txt * res.grad_text).sum()
    surrogate.backward()

    grads = {}
    for k in trainable:
        g = p[k].grad
        grads[k] = g if g is not None else np.zeros_like(model.params[k])
    grads["log_tau_ic"] = np.asarray(res.grad_log_tau_ic)
    grads["log_tau_tc"] = np.asarray(res.grad_log_tau_tc)
    grads = {k: v for k, v in grads.items() if k in trainable}
    opt.step(model.params, grads, lr)
    for k in ("log_tau_ic", "log_tau_tc"):
        model.params[k] = clamp_log_tau(model.params[k])
    for k in trainable:
        if not np.all(np.isfinite(model.params[k])):
            raise TrainingDiverged(f"parameter {k} became non-finite")
    return res.total
