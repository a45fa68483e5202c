"""Three-stage training: freeze schedule, per-group learning rates,
checkpointing, and checkpoint evaluation.

Stage 1 trains only the enhancer; stages 2 and 3 unfreeze everything
with the encoder at ``encoder_lr_ratio`` times the base rate. Stage
boundaries always round-trip through the on-disk checkpoint so that a
resumed run is bit-identical to an unbroken one.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import data, metrics, nn
from .model import CaptionModel, build_vocabulary
from .optim import AdamW
from .tensor_io import read_cct1, write_cct1


class NumericAbort(RuntimeError):
    """Training hit a non-finite loss."""


@dataclass
class StageConfig:
    stage: int
    base_lr: float
    epochs: int
    batch_size: int = 8
    mode: str = "flatten"
    encoder_lr_ratio: float = 0.2
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    trainable_groups: tuple = None  # None -> schedule default

    def __post_init__(self):
        if self.stage not in (1, 2, 3):
            raise ValueError("stage must be 1, 2 or 3")
        if self.trainable_groups is None:
            self.trainable_groups = ("enhancer",) if self.stage == 1 else tuple(nn.GROUPS)

    def lr_map(self):
        lrs = {}
        for g in nn.GROUPS:
            if g not in self.trainable_groups:
                lrs[g] = 0.0
            elif g == "encoder" and self.stage != 1:
                lrs[g] = self.encoder_lr_ratio * self.base_lr
            else:
                lrs[g] = self.base_lr
        return lrs


@dataclass
class StageReport:
    stage: int
    epoch_losses: list = field(default_factory=list)
    wall_time: float = 0.0
    steps: int = 0


def _batches(items, size):
    for i in range(0, len(items), size):
        yield items[i:i + size]


def train_stage(model: CaptionModel, stage_cfg: StageConfig, records, data_dir,
                seed=0, optimizer=None, max_steps=None) -> StageReport:
    t0 = time.time()
    params = list(model.store.params.values())
    if optimizer is None:
        optimizer = AdamW(params, weight_decay=stage_cfg.weight_decay)
    lr_map = stage_cfg.lr_map()
    report = StageReport(stage=stage_cfg.stage)
    images = {rec.id: data.load_images(rec, data_dir) for rec in records}
    for epoch in range(stage_cfg.epochs):
        mode = data.IterationMode(stage_cfg.mode, seed)
        stream = data.iterate(records, mode, epoch)
        losses = []
        for batch in _batches(stream, stage_cfg.batch_size):
            samples = []
            for rec, cap in batch:
                i1, i2 = images[rec.id]
                samples.append((i1, i2, model.caption_ids(cap)))
            model.store.zero_grad()
            loss = model.batch_loss(samples)
            val = loss.item()
            if not np.isfinite(val):
                raise NumericAbort(
                    f"non-finite loss at stage {stage_cfg.stage} epoch {epoch} "
                    f"batch starting with {batch[0][0].id}")
            loss.backward()
            nn.clip_grads(params, stage_cfg.grad_clip)
            optimizer.step(lr_map)
            losses.append(val)
            report.steps += 1
            if max_steps is not None and report.steps >= max_steps:
                break
        report.epoch_losses.append(float(np.mean(losses)))
        if max_steps is not None and report.steps >= max_steps:
            break
    report.wall_time = time.time() - t0
    return report


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(model: CaptionModel, optimizer: AdamW, path, meta=None):
    path = Path(path)
    (path / "params").mkdir(parents=True, exist_ok=True)
    (path / "optim").mkdir(parents=True, exist_ok=True)
    for p in model.store.params.values():
        write_cct1(path / "params" / f"{p.name}.cct1", p.tensor.data)
        write_cct1(path / "optim" / f"{p.name}.m.cct1", optimizer.m[p.name])
        write_cct1(path / "optim" / f"{p.name}.v.cct1", optimizer.v[p.name])
    state = {"t": optimizer.t}
    state.update(meta or {})
    (path / "state").write_text(json.dumps(state, sort_keys=True) + "\n")
    model.vocab.save(path / "vocab.txt")


def load_checkpoint(model: CaptionModel, optimizer: AdamW, path):
    path = Path(path)
    state = json.loads((path / "state").read_text())
    for p in model.store.params.values():
        arr = read_cct1(path / "params" / f"{p.name}.cct1")
        if arr.shape != p.tensor.shape:
            raise ValueError(f"checkpoint shape mismatch for {p.name}")
        p.tensor.data = arr
        optimizer.m[p.name] = read_cct1(path / "optim" / f"{p.name}.m.cct1")
        optimizer.v[p.name] = read_cct1(path / "optim" / f"{p.name}.v.cct1")
    optimizer.t = int(state["t"])
    return state


# ------------------------------------------------------------------- pipeline

def build_model(cfg, seed=None):
    vocab = build_vocabulary()
    return CaptionModel(
        cfgmod.encoder_config(cfg), cfgmod.enhancer_config(cfg),
        cfgmod.decoder_config(cfg), vocab,
        seed=cfg["train.seed"] if seed is None else seed)


def stage_config(cfg, stage):
    s = f"stage{stage}"
    return StageConfig(
        stage=stage,
        base_lr=cfg[f"{s}.base_lr"],
        epochs=cfg[f"{s}.epochs"],
        batch_size=cfg[f"{s}.batch_size"],
        mode=cfg[f"{s}.mode"],
        encoder_lr_ratio=cfg["train.encoder_lr_ratio"],
        weight_decay=cfg["train.weight_decay"],
        grad_clip=cfg["train.grad_clip"],
    )


def run_pipeline(cfg, stages=(1, 2, 3), resume_from=None, log=None):
    """Run the staged schedule; returns (final checkpoint dir, reports)."""
    out = Path(cfg["train.out"])
    out.mkdir(parents=True, exist_ok=True)
    records = data.load_manifest(cfg["data.manifest"])
    data_dir = Path(cfg["data.manifest"]).parent
    model = build_model(cfg)
    optimizer = AdamW(list(model.store.params.values()),
                      weight_decay=cfg["train.weight_decay"])
    if resume_from is not None:
        load_checkpoint(model, optimizer, resume_from)
    reports = []
    ckpt = Path(resume_from) if resume_from else None
    for stage in stages:
        scfg = stage_config(cfg, stage)
        optimizer.reset()  # each stage is a fresh optimization run
        report = train_stage(model, scfg, records, data_dir,
                             seed=cfg["train.seed"], optimizer=optimizer)
        reports.append(report)
        if log:
            for epoch, loss in enumerate(report.epoch_losses):
                log(f"stage={stage} epoch={epoch} loss={loss:.6f}")
        ckpt = out / f"stage{stage}"
        save_checkpoint(model, optimizer, ckpt,
                        meta={"stage": stage, "fingerprint": cfgmod.fingerprint(cfg)})
        # round-trip so later stages start from exactly the stored state
        load_checkpoint(model, optimizer, ckpt)
    return ckpt, reports


def evaluate_checkpoint(model: CaptionModel, records, data_dir,
                        split=None) -> metrics.MetricReport:
    items = []
    for rec in records:
        if split is not None and rec.split != split:
            continue
        i1, i2 = data.load_images(rec, data_dir)
        hyp, _, _ = model.generate(i1, i2)
        items.append((rec.id, hyp, rec.captions))
    if not items:
        raise ValueError("no records in the requested split")
    return metrics.evaluate(metrics.make_corpus(items))
