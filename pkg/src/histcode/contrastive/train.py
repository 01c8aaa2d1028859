"""Alternating min-max pretraining: the encoder descends the contrastive loss,
the bank of negatives ascends it."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..errors import NonFinite
from .augment import AugmentParams, augment_pair
from .bank import MemoryBank, init_bank
from .encoder import TileEncoder, build_encoder, to_tensor
from .loss import contrastive_loss_and_grads, update_negatives
from .optim import SGDMomentum

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class PretrainConfig:
    tau: float = 0.12
    lr: float = 0.03
    momentum: float = 0.9
    weight_decay: float = 1e-4
    bank_lr: float = 3.0
    bank_size: int = 256
    bank_fraction: float = 0.1
    batch_size: int = 64
    epochs: int = 10
    seed: int = 0
    encoder: str = "small"
    embed_dim: int = 1024
    proj_dim: int = 128
    input_px: int = 64
    weights_path: str | None = None

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not (self.lr > 0 and self.bank_lr > 0):
            raise ValueError("learning rates must be positive")
        if not 0 < self.bank_fraction <= 1:
            raise ValueError("bank_fraction must be in (0, 1]")


@dataclass
class PretrainResult:
    model: TileEncoder
    bank: MemoryBank
    trace: list = field(default_factory=list)  # (step, epoch, loss)
    steps: int = 0


def write_trace(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "epoch", "loss"])
        for step, epoch, loss in trace:
            w.writerow([step, epoch, repr(float(loss))])


def save_checkpoint(path, model, bank, optimizer, config, step):
    torch.save(
        {
            "format_version": CHECKPOINT_VERSION,
            "encoder": model.state_dict(),
            "bank": torch.from_numpy(np.asarray(bank.vectors)),
            "bank_lr": bank.lr,
            "optimizer": optimizer.state_dict(),
            "config": asdict(config),
            "step": step,
        },
        path,
    )


def load_checkpoint(path):
    """Return ``(model, bank, config, step)`` from a pretraining checkpoint."""
    from ..errors import SchemaMismatch

    state = torch.load(path, map_location="cpu", weights_only=False)
    if state.get("format_version") != CHECKPOINT_VERSION:
        raise SchemaMismatch(f"{path}: unsupported checkpoint version {state.get('format_version')!r}")
    config = PretrainConfig(**state["config"])
    model = build_encoder(config.encoder, config.embed_dim, config.proj_dim, config.input_px, None, config.seed)
    model.load_state_dict(state["encoder"])
    model.eval()
    bank = MemoryBank(state["bank"].numpy(), state["bank_lr"])
    return model, bank, config, state["step"]


def pretrain(config: PretrainConfig, tile_pool: dict, out_dir=None, augment: AugmentParams = AugmentParams()):
    """Pretrain an encoder on ``tile_pool`` (slide id -> uint8 tile array).

    Writes ``checkpoint_epoch{NNN}.pt`` and ``loss_trace.csv`` into ``out_dir``
    when given.
    """
    keys = [(s, i) for s, tiles in tile_pool.items() for i in range(len(tiles))]
    if len(keys) < config.batch_size:
        raise ValueError(f"need at least batch_size={config.batch_size} tiles, have {len(keys)}")
    model = build_encoder(config.encoder, config.embed_dim, config.proj_dim, config.input_px, config.weights_path, config.seed)
    bank = init_bank(model, tile_pool, config.bank_size, config.bank_fraction, [config.seed, 17], config.bank_lr)
    opt = SGDMomentum(config.lr, config.momentum, config.weight_decay)
    params = [p for p in model.parameters() if p.requires_grad]
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    trace = []
    step = 0
    steps_per_epoch = len(keys) // config.batch_size
    model.train()
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, 23, epoch]).permutation(len(keys))
        for b in range(steps_per_epoch):
            batch = [keys[j] for j in order[b * config.batch_size : (b + 1) * config.batch_size]]
            views_a, views_b = zip(
                *(augment_pair(tile_pool[s][i], [config.seed, epoch, step, j], augment) for j, (s, i) in enumerate(batch))
            )
            xa, xb = to_tensor(np.stack(views_a)), to_tensor(np.stack(views_b))
            _, qa = model(xa)
            _, qb = model(xb)
            try:
                loss, d_q, d_qpos, d_bank = contrastive_loss_and_grads(
                    qa.detach().double().numpy(), qb.detach().double().numpy(), bank.vectors, config.tau
                )
            except NonFinite as exc:
                raise NonFinite(str(exc), step=step) from exc
            model.zero_grad(set_to_none=True)
            torch.autograd.backward([qa, qb], [torch.from_numpy(d_q).float(), torch.from_numpy(d_qpos).float()])
            opt.step(params, [p.grad for p in params], step_index=step)
            bank.vectors = update_negatives(bank.vectors, None, None, config.tau, bank.lr, grad=d_bank)
            trace.append((step, epoch, loss))
            step += 1
        log.info("epoch %d: mean loss %.4f", epoch, np.mean([t[2] for t in trace[-steps_per_epoch:]]))
        if out_dir is not None:
            save_checkpoint(out_dir / f"checkpoint_epoch{epoch:03d}.pt", model, bank, opt, config, step)
            write_trace(trace, out_dir / "loss_trace.csv")
    model.eval()
    return PretrainResult(model, bank, trace, step)
