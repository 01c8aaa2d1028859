"""Tile encoders and the projection head."""

from __future__ import annotations

import hashlib

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import NonFinite, NumericalDegeneracy


def _block(c_in, c_out):
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 3, padding=1, bias=False),
        nn.BatchNorm2d(c_out),
        nn.ReLU(inplace=True),
        nn.MaxPool2d(2),
    )


class SmallCNN(nn.Module):
    """Four conv blocks, global pooling and a linear map to ``embed_dim``.

    Tiles are area-resampled to ``input_px`` first so the cost does not grow
    with the tile size.
    """

    def __init__(self, embed_dim=1024, input_px=64, widths=(16, 32, 64, 128)):
        super().__init__()
        self.input_px = input_px
        layers, c = [], 3
        for w in widths:
            layers.append(_block(c, w))
            c = w
        self.features = nn.Sequential(*layers)
        self.embed = nn.Linear(c, embed_dim)
        self.embed_dim = embed_dim

    def forward(self, x):
        if x.shape[-1] != self.input_px or x.shape[-2] != self.input_px:
            x = F.adaptive_avg_pool2d(x, self.input_px)
        x = self.features(x)
        return self.embed(torch.flatten(F.adaptive_avg_pool2d(x, 1), 1))


class TruncatedResNet50(nn.Module):
    """ResNet-50 stem plus layer1-layer3 (1024 channels), average pooled."""

    def __init__(self, weights_path=None):
        super().__init__()
        from torchvision.models import resnet50

        net = resnet50(weights=None)
        if weights_path:
            net.load_state_dict(torch.load(weights_path, map_location="cpu"))
        self.body = nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool, net.layer1, net.layer2, net.layer3)
        self.embed_dim = 1024
        self.input_px = None

    def forward(self, x):
        return torch.flatten(F.adaptive_avg_pool2d(self.body(x), 1), 1)


class ProjectionHead(nn.Module):
    def __init__(self, embed_dim=1024, proj_dim=128):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(embed_dim, embed_dim), nn.ReLU(inplace=True), nn.Linear(embed_dim, proj_dim))

    def forward(self, h):
        return self.net(h)


def normalize_rows(z, eps=1e-12):
    norms = z.norm(dim=1, keepdim=True)
    if bool((norms < eps).any()):
        raise NumericalDegeneracy("projection produced a zero vector")
    return z / norms


class TileEncoder(nn.Module):
    def __init__(self, backbone: nn.Module, proj_dim=128):
        super().__init__()
        self.backbone = backbone
        self.head = ProjectionHead(backbone.embed_dim, proj_dim)
        self.embed_dim = backbone.embed_dim
        self.proj_dim = proj_dim

    def forward(self, x):
        h = self.backbone(x)
        return h, normalize_rows(self.head(h))


def build_encoder(kind="small", embed_dim=1024, proj_dim=128, input_px=64, weights_path=None, seed=0):
    torch.manual_seed(seed)
    if kind == "small":
        backbone = SmallCNN(embed_dim, input_px)
    elif kind == "resnet50":
        backbone = TruncatedResNet50(weights_path)
    else:
        raise ValueError(f"unknown encoder kind {kind!r}")
    return TileEncoder(backbone, proj_dim)


def to_tensor(tiles) -> torch.Tensor:
    """uint8 N x H x W x 3 (or a single tile) -> float N x 3 x H x W, roughly centered."""
    arr = np.asarray(tiles)
    if arr.ndim == 3:
        arr = arr[None]
    x = torch.from_numpy(np.ascontiguousarray(arr)).permute(0, 3, 1, 2).float()
    return (x / 255.0 - 0.5) / 0.25


@torch.no_grad()
def encode(model: TileEncoder, tiles, batch_size=256) -> np.ndarray:
    """Embeddings ``h`` (N x D, float32) in inference mode; row order follows ``tiles``."""
    if len(tiles) == 0:
        raise ValueError("encode needs a nonempty batch")
    was_training = model.training
    model.eval()
    out = []
    for i in range(0, len(tiles), batch_size):
        out.append(model.backbone(to_tensor(tiles[i : i + batch_size])).numpy())
    model.train(was_training)
    h = np.concatenate(out).astype(np.float32)
    if not np.all(np.isfinite(h)):
        raise NonFinite("encoder produced non-finite embeddings")
    return h


@torch.no_grad()
def project(model: TileEncoder, h) -> np.ndarray:
    """Unit-norm projections ``q`` for embeddings ``h``."""
    h = torch.as_tensor(np.asarray(h, dtype=np.float32))
    if not bool(torch.isfinite(h).all()):
        raise NonFinite("non-finite embeddings")
    was_training = model.training
    model.eval()
    z = model.head(h).double()
    model.train(was_training)
    return normalize_rows(z).numpy()


def encoder_checksum(model: nn.Module) -> str:
    digest = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()
