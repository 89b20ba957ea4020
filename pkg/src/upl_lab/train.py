"""Minibatch Adam training of the transducer under any of the three losses."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .corpus import Corpus, Utterance
from .errors import EmptyPathSetError, TrainingError
from .losses import LossKind, Vanilla, compute_loss
from .model import LogitLattice, ModelConfig, Transducer, batch_backward, batch_forward

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.003
    epochs: int = 60
    batch_size: int = 8
    seed: int = 0
    ep_training: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def training_target(utt: Utterance, cfg: ModelConfig, ep_training: bool):
    """(target tokens, per-token ground-truth frames); <eos> is aligned to the last token's end."""
    target = list(utt.transcript)
    frames = list(utt.label_frames)
    if ep_training:
        if cfg.eos_id is None:
            raise TrainingError("ep_training requires a model with has_eos")
        target.append(cfg.eos_id)
        frames.append(utt.speech_end_frame)
    return target, frames


def batch_loss_and_grad(model: Transducer, utts, loss_kind: LossKind, ep_training: bool, epoch: int | None = None):
    """Mean loss over the batch and its gradient with respect to the flat parameters."""
    items = [training_target(u, model.config, ep_training) for u in utts]
    targets = [t for t, _ in items]
    Z, tp, cache = batch_forward(model, [u.frames for u in utts], targets)
    dZ = np.zeros_like(Z)
    total = 0.0
    B = len(utts)
    for b, (u, (target, frames)) in enumerate(zip(utts, items)):
        lat = LogitLattice(Z[b, : tp[b], : len(target) + 1], model.config.stride, u.num_frames)
        try:
            res = compute_loss(loss_kind, lat, target, frames)
        except EmptyPathSetError as exc:
            raise TrainingError(f"empty path set: {exc}", epoch, u.id) from exc
        if not math.isfinite(res.value) or not np.all(np.isfinite(res.grad)):
            raise TrainingError("non-finite loss", epoch, u.id)
        total += res.value
        dZ[b, : tp[b], : len(target) + 1] = res.grad / B
    return total / B, batch_backward(model, cache, dZ)


def train(
    corpus: Corpus,
    model_cfg: ModelConfig,
    loss_kind: LossKind = Vanilla(),
    opt: TrainConfig = TrainConfig(),
    init: Transducer | None = None,
):
    """Returns (model, training log). The log holds one entry per epoch."""
    model = init.copy() if init is not None else Transducer.init(model_cfg, opt.seed)
    adam = nn.Adam(model.layout.size, opt.learning_rate)
    rng = np.random.default_rng(opt.seed)
    utts = list(corpus)
    history = []
    for epoch in range(opt.epochs):
        order = rng.permutation(len(utts))
        losses = []
        for start in range(0, len(utts), opt.batch_size):
            batch = [utts[i] for i in order[start : start + opt.batch_size]]
            value, grad = batch_loss_and_grad(model, batch, loss_kind, opt.ep_training, epoch)
            losses.append(value * len(batch))
            if opt.learning_rate != 0.0:
                adam.step(model.params, grad)
        mean = float(sum(losses) / max(len(utts), 1))
        history.append({"epoch": epoch, "mean_loss": mean})
        log.info("epoch %d mean loss %.4f", epoch, mean)
    return model, history
