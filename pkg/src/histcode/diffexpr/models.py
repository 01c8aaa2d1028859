"""Per-gene linear models on DE features.

Regression fits ridge-penalized least squares on standardized features,
``J(w, b) = (1/Q) * sum (y - Xw - b)^2 + (alpha/Q) * |w|^2``, in closed form
through one SVD of the shared design matrix; a gradient-descent solver of the
same objective exists as an independent route. Classification fits a two-node
softmax by gradient descent. Weights are stored in raw feature space, so
prediction is ``w . f + b``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionMismatch, NonFinite

DEFAULT_ALPHAS = (1e-2, 1e-1, 1.0, 10.0, 100.0, 1e3, 1e4)


@dataclass
class DEConfig:
    mode: str = "regression"
    alphas: tuple = DEFAULT_ALPHAS
    default_alpha: float = 10.0
    solver: str = "closed"
    gd_iters: int = 500

    def __post_init__(self):
        if self.mode not in ("regression", "classification"):
            raise ValueError(f"mode must be regression or classification, got {self.mode!r}")
        if self.solver not in ("closed", "gd"):
            raise ValueError(f"solver must be closed or gd, got {self.solver!r}")
        if min(self.alphas) < 0 or self.default_alpha < 0:
            raise ValueError("ridge penalties must be nonnegative")


@dataclass
class GeneModel:
    gene: str
    mode: str
    weights: np.ndarray  # (F,) regression, (2, F) classification
    bias: np.ndarray | float
    alpha: float = 0.0
    degenerate: bool = False

    @property
    def n_features(self) -> int:
        return int(self.weights.shape[-1])


@dataclass
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X):
        X = np.asarray(X, dtype=np.float64)
        scale = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(scale > 0, scale, 1.0))

    def transform(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.scale

    def to_raw(self, w, b):
        """Map weights on standardized inputs back to raw inputs."""
        w_raw = w / self.scale
        return w_raw, b - w_raw @ self.mean


def de_loss_and_grad(X, y, w, b, alpha: float = 0.0):
    """Mean squared error (plus ridge term) and its gradient in ``(w, b)``."""
    X = np.asarray(X, dtype=np.float64)
    r = np.asarray(y, dtype=np.float64) - X @ w - b
    q = len(r)
    loss = float(r @ r / q + alpha * (w @ w) / q)
    return loss, (-2.0 * (X.T @ r) + 2.0 * alpha * w) / q, float(-2.0 * r.sum() / q)


class RidgePath:
    """SVD of a centered design, reused across genes and penalties."""

    def __init__(self, Xs):
        self.U, self.s, self.Vt = np.linalg.svd(np.asarray(Xs, dtype=np.float64), full_matrices=False)
        self.keep = self.s > self.s.max(initial=0.0) * max(Xs.shape) * np.finfo(float).eps

    def solve(self, y, alpha: float):
        """Minimizer ``(w, b)`` of J for one target vector (minimum-norm when alpha is 0)."""
        y = np.asarray(y, dtype=np.float64)
        b = float(y.mean())
        s = self.s[self.keep]
        coef = s / (s**2 + alpha)
        w = self.Vt[self.keep].T @ (coef * (self.U[:, self.keep].T @ (y - b)))
        return w, b


def fit_ridge_gd(Xs, y, alpha: float, iters: int = 200_000, tol: float = 1e-13):
    """Gradient descent on J with step ``1 / Lipschitz``; expects centered columns."""
    Xs = np.asarray(Xs, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    q = len(y)
    lip = 2.0 * (np.linalg.norm(Xs, 2) ** 2 + alpha) / q
    lip = max(lip, 2.0)  # bias direction has curvature 2
    w, b = np.zeros(Xs.shape[1]), 0.0
    for _ in range(iters):
        _, gw, gb = de_loss_and_grad(Xs, y, w, b, alpha)
        if np.sqrt(gw @ gw + gb * gb) < tol:
            break
        w -= gw / lip
        b -= gb / lip
    return w, b


def _softmax_rows(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def softmax_loss_and_grad(X, labels, W, b, alpha: float = 0.0):
    """Mean two-class cross-entropy with ``(alpha / 2Q) |W|^2``."""
    q = len(labels)
    P = _softmax_rows(X @ W.T + b)
    Y = np.eye(2)[np.asarray(labels, dtype=np.int64)]
    loss = float(-np.sum(Y * np.log(np.clip(P, 1e-12, 1.0))) / q + 0.5 * alpha * np.sum(W * W) / q)
    D = (P - Y) / q
    return loss, D.T @ X + alpha * W / q, D.sum(axis=0)


def fit_softmax_gd(Xs, labels, alpha: float, iters: int = 500):
    Xs = np.asarray(Xs, dtype=np.float64)
    q = len(labels)
    lip = 0.5 * (np.linalg.norm(Xs, 2) ** 2 / q + 1.0) + alpha / q
    W, b = np.zeros((2, Xs.shape[1])), np.zeros(2)
    for _ in range(iters):
        _, gW, gb = softmax_loss_and_grad(Xs, labels, W, b, alpha)
        W -= gW / lip
        b -= gb / lip
    return W, b


def _check_targets(Y, genes):
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[1] != len(genes):
        raise ValueError(f"target matrix must be patients x {len(genes)} genes")
    missing = [g for g, ok in zip(genes, np.all(np.isfinite(Y), axis=0)) if not ok]
    if missing:
        raise ValueError(f"missing targets for genes {missing[:5]}")
    return Y


def train_gene_models(X, Y, genes, config: DEConfig = DEConfig(), X_val=None, Y_val=None) -> dict:
    """One independent linear model per gene.

    ``X`` is patients x features, ``Y`` patients x genes. For regression the
    ridge penalty is chosen per gene by validation MSE when validation data
    is given. Genes whose training targets are all equal get a constant model
    flagged ``degenerate``.
    """
    X = np.asarray(X, dtype=np.float64)
    if len(X) < 2:
        raise ValueError("need at least two training patients")
    if not np.all(np.isfinite(X)):
        raise NonFinite("non-finite DE feature")
    Y = _check_targets(Y, genes)
    if len(Y) != len(X):
        raise ValueError("features and targets disagree on patient count")
    std = Standardizer.fit(X)
    Xs = std.transform(X)
    path = RidgePath(Xs) if config.mode == "regression" and config.solver == "closed" else None
    use_val = X_val is not None and Y_val is not None and len(X_val) > 0
    if use_val:
        Xv = std.transform(X_val)
        Yv = np.asarray(Y_val, dtype=np.float64)

    models = {}
    for j, gene in enumerate(genes):
        y = Y[:, j]
        if config.mode == "regression":
            if np.ptp(y) == 0:
                models[gene] = GeneModel(gene, "regression", np.zeros(X.shape[1]), float(y[0]), config.default_alpha, True)
                continue
            alphas = config.alphas if use_val and np.all(np.isfinite(Yv[:, j])) else (config.default_alpha,)
            best = None
            for alpha in alphas:
                w, b = path.solve(y, alpha) if path is not None else fit_ridge_gd(Xs, y, alpha)
                err = float(np.mean((Yv[:, j] - Xv @ w - b) ** 2)) if len(alphas) > 1 else 0.0
                if best is None or err < best[0]:
                    best = (err, alpha, w, b)
            _, alpha, w, b = best
            w_raw, b_raw = std.to_raw(w, b)
            models[gene] = GeneModel(gene, "regression", w_raw, float(b_raw), alpha, False)
        else:
            labels = y.astype(np.int64)
            W, b = fit_softmax_gd(Xs, labels, config.default_alpha, config.gd_iters)
            W_raw = W / std.scale
            b_raw = b - W_raw @ std.mean
            models[gene] = GeneModel(gene, "classification", W_raw, b_raw, config.default_alpha, len(set(labels.tolist())) < 2)
    return models


def predict_de(feature, model: GeneModel):
    """Predicted target (regression) or probability of differential expression."""
    f = np.asarray(feature, dtype=np.float64)
    if f.shape[-1] != model.n_features:
        raise DimensionMismatch(f"feature length {f.shape[-1]} != model input {model.n_features}")
    if model.mode == "regression":
        out = f @ model.weights + model.bias
    else:
        logits = f @ model.weights.T + model.bias
        out = _softmax_rows(np.atleast_2d(logits))[:, 1]
        out = out if f.ndim > 1 else out[0]
    if not np.all(np.isfinite(out)):
        raise NonFinite(f"{model.gene}: non-finite prediction")
    return float(out) if np.ndim(out) == 0 else out


def save_gene_models(path, models: dict) -> None:
    genes = list(models)
    arrays = {}
    for i, g in enumerate(genes):
        m = models[g]
        arrays[f"w{i}"] = m.weights
        arrays[f"b{i}"] = np.asarray(m.bias)
    meta = np.array([[g, models[g].mode, repr(models[g].alpha), str(int(models[g].degenerate))] for g in genes]).reshape(-1, 4)
    with open(path, "wb") as fh:
        np.savez(fh, format_version=np.array(1), meta=meta, **arrays)


def load_gene_models(path) -> dict:
    with np.load(path, allow_pickle=False) as f:
        out = {}
        for i, (g, mode, alpha, degenerate) in enumerate(f["meta"]):
            bias = f[f"b{i}"]
            out[str(g)] = GeneModel(
                str(g), str(mode), f[f"w{i}"].copy(), float(bias) if bias.ndim == 0 else bias.copy(), float(alpha), degenerate == "1"
            )
        return out

