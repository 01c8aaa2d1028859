"""Diagnosis-head training on frozen tile embeddings."""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..contrastive.optim import SGDMomentum
from ..errors import NonFinite, SchemaMismatch, SingleClassSplit
from ..evaluation.metrics import roc_auc
from .attention import (
    DiagnosisHead,
    GatedAttentionParams,
    SlideBag,
    attention_scores,
    bag_loss_and_grads,
    diagnose,
    diagnosis_loss,
    pool,
)

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class DiagConfig:
    pooling: str = "gated"
    attn_dim: int = 256
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.pooling not in ("gated", "mean", "max"):
            raise ValueError(f"pooling must be gated, mean or max, got {self.pooling!r}")
        if self.attn_dim < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("attn_dim, max_epochs and patience must be positive")
        if not self.lr > 0:
            raise ValueError("lr must be positive")


@dataclass
class DiagnosisModel:
    config: DiagConfig
    head: DiagnosisHead
    params: GatedAttentionParams | None = None
    history: list = field(default_factory=list)  # (epoch, train_loss, val_score)
    best_epoch: int = -1

    def pool(self, H):
        return pool(H, self.config.pooling, self.params)

    def predict(self, bags) -> np.ndarray:
        return np.array([diagnose(self.pool(b.H)[0], self.head) for b in bags])

    def attention(self, bag: SlideBag) -> np.ndarray | None:
        return self.pool(bag.H)[1]

    def attention_scores(self, bag: SlideBag) -> np.ndarray | None:
        return None if self.params is None else attention_scores(bag.H, self.params)

    def arrays(self) -> dict:
        out = dict(self.head.arrays())
        if self.params is not None:
            out.update(self.params.arrays())
        return out


def _val_score(model, bags):
    # (AUC, -loss) compared lexicographically; AUC is skipped when val is single-class
    if not bags:
        return None
    y = np.array([b.label for b in bags])
    p = model.predict(bags)
    loss = diagnosis_loss(y, p) / len(bags)
    auc = roc_auc(y, p) if 0 < y.sum() < len(y) else 0.0
    return (auc, -loss)


def _snapshot(model):
    return {k: v.copy() for k, v in model.arrays().items()}


def _restore(model, snap):
    for k, v in model.arrays().items():
        v[...] = snap[k]


def train_diagnosis(train_bags, val_bags=(), config: DiagConfig = DiagConfig()) -> DiagnosisModel:
    """Fit pooling and head by SGD-momentum, one bag per step.

    Early stopping keeps the parameters of the best validation epoch, scored
    by AUC with mean loss as tie-break; training stops after ``patience``
    epochs without improvement.
    """
    train_bags, val_bags = list(train_bags), list(val_bags)
    labels = {b.label for b in train_bags}
    if len(train_bags) < 2 or labels != {0, 1}:
        raise SingleClassSplit(f"training split needs both classes, got labels {sorted(labels)} over {len(train_bags)} bags")
    dim = train_bags[0].H.shape[1]
    rng = np.random.default_rng([config.seed, 31])
    params = GatedAttentionParams.init(dim, config.attn_dim, rng) if config.pooling == "gated" else None
    model = DiagnosisModel(config, DiagnosisHead.init(dim, rng), params)
    names = list(model.arrays())
    opt = SGDMomentum(config.lr, config.momentum, config.weight_decay)

    best, best_snap, stale = None, _snapshot(model), 0
    step = 0
    for epoch in range(config.max_epochs):
        order = np.random.default_rng([config.seed, 37, epoch]).permutation(len(train_bags))
        total = 0.0
        for i in order:
            bag = train_bags[i]
            loss, grads = bag_loss_and_grads(bag.H, bag.label, model.params, model.head, config.pooling)
            if not np.isfinite(loss):
                raise NonFinite("non-finite diagnosis loss", step=step)
            arrays = model.arrays()
            opt.step([arrays[n] for n in names], [grads[n] for n in names], step_index=step)
            total += loss
            step += 1
        score = _val_score(model, val_bags)
        model.history.append((epoch, total / len(train_bags), score))
        log.debug("epoch %d train loss %.4f val %s", epoch, total / len(train_bags), score)
        if score is None:
            best_snap, model.best_epoch = _snapshot(model), epoch
            continue
        if best is None or score > best:
            best, best_snap, stale, model.best_epoch = score, _snapshot(model), 0, epoch
        else:
            stale += 1
            if stale >= config.patience:
                break
    _restore(model, best_snap)
    return model


def save_model(path, model: DiagnosisModel) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(
            fh,
            format_version=np.array(CHECKPOINT_VERSION),
            config=np.array(json.dumps(asdict(model.config), sort_keys=True)),
            best_epoch=np.array(model.best_epoch),
            **model.arrays(),
        )
    os.replace(tmp, path)


def load_model(path) -> DiagnosisModel:
    with np.load(path, allow_pickle=False) as f:
        if int(f["format_version"]) != CHECKPOINT_VERSION:
            raise SchemaMismatch(f"{path}: unsupported diagnosis checkpoint version {int(f['format_version'])}")
        config = DiagConfig(**json.loads(str(f["config"])))
        head = DiagnosisHead(f["W"].copy(), f["b"].copy())
        params = GatedAttentionParams(f["V"].copy(), f["U"].copy(), f["w"].copy()) if config.pooling == "gated" else None
        return DiagnosisModel(config, head, params, best_epoch=int(f["best_epoch"]))


def write_attention(path, coords, attention, scores=None) -> None:
    """CSV ``x,y,attention[,score]`` with one row per tile, in manifest order.

    ``score`` holds the pre-softmax attention scores when given.
    """
    coords = np.asarray(coords).reshape(-1, 2)
    if len(coords) != len(attention) or (scores is not None and len(scores) != len(attention)):
        raise ValueError(f"{len(coords)} coords for {len(attention)} attention weights")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "attention"] + ([] if scores is None else ["score"]))
        for i, ((x, y), a) in enumerate(zip(coords, attention)):
            w.writerow([int(x), int(y), repr(float(a))] + ([] if scores is None else [repr(float(scores[i]))]))


def read_attention(path, column: str = "attention"):
    """``(coords, values)`` for one column of an attention CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and column not in rows[0]:
        raise KeyError(f"{path}: no {column!r} column")
    coords = np.array([[int(r["x"]), int(r["y"])] for r in rows], dtype=np.int64).reshape(-1, 2)
    return coords, np.array([float(r[column]) for r in rows])
