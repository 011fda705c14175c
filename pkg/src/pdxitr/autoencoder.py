"""Nonlinear dimension reduction with a reconstruction autoencoder.

A small tanh MLP (p -> 4h -> h -> 4h -> p) trained by Adam on standardized
inputs, with the bottleneck width chosen by k-fold cross-validation.  A
rank-h PCA reconstruction provides the linear baseline for the same
bottleneck.  Zero-variance features are standardized to constant zero and
excluded from the loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class AutoencoderError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    learning_rate: float = 1e-2
    batch_size: int = 32
    seed: int = 0
    bottleneck_grid: tuple[int, ...] = (1, 2, 4)
    cv_folds: int = 5
    hidden_factor: int = 4

    def __post_init__(self):
        if self.epochs <= 0 or self.learning_rate <= 0 or self.batch_size <= 0:
            raise AutoencoderError("training parameters must be positive")
        if any(h <= 0 for h in self.bottleneck_grid):
            raise AutoencoderError("bottleneck widths must be positive")


@dataclass
class Encoder:
    """Trained reconstruction network plus input standardization."""

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    mean: np.ndarray
    sd: np.ndarray  # zero for dead features
    version: str = "pdxitr-encoder-1"

    @property
    def bottleneck(self) -> int:
        return min(self.layer_sizes[1:-1])

    def standardize(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.layer_sizes[0]:
            raise AutoencoderError(
                f"input width {X.shape[1]} does not match encoder ({self.layer_sizes[0]})"
            )
        safe = np.where(self.sd > 0, self.sd, 1.0)
        Z = (X - self.mean) / safe
        Z[:, self.sd == 0] = 0.0
        return Z

    def _forward(self, Z: np.ndarray) -> list[np.ndarray]:
        acts = [Z]
        a = Z
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            pre = a @ W + b
            a = pre if i == last else np.tanh(pre)
            acts.append(a)
        return acts

    def reconstruct(self, X: np.ndarray) -> np.ndarray:
        return self._forward(self.standardize(X))[-1]

    def save(self, path) -> None:
        arrays = {"layer_sizes": np.array(self.layer_sizes), "mean": self.mean, "sd": self.sd}
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            arrays[f"W{i}"] = W
            arrays[f"b{i}"] = b
        np.savez(path, version=np.array(self.version), n_layers=np.array(len(self.weights)), **arrays)

    @classmethod
    def load(cls, path) -> "Encoder":
        with np.load(path, allow_pickle=False) as data:
            version = str(data["version"])
            if version != "pdxitr-encoder-1":
                raise AutoencoderError(f"unsupported encoder format {version!r}")
            n = int(data["n_layers"])
            return cls(
                layer_sizes=tuple(int(s) for s in data["layer_sizes"]),
                weights=[data[f"W{i}"].copy() for i in range(n)],
                biases=[data[f"b{i}"].copy() for i in range(n)],
                mean=data["mean"].copy(),
                sd=data["sd"].copy(),
                version=version,
            )


def encode(enc: Encoder, X: np.ndarray) -> np.ndarray:
    """Forward pass through the encoder half: n x bottleneck latents."""
    Z = enc.standardize(X)
    bottleneck_layer = int(np.argmin(enc.layer_sizes[1:-1])) + 1
    a = Z
    for i in range(bottleneck_layer):
        a = np.tanh(a @ enc.weights[i] + enc.biases[i])
    return a


def reconstruction_error(enc: Encoder, X: np.ndarray) -> float:
    """Mean squared standardized reconstruction residual over live features."""
    Z = enc.standardize(X)
    out = enc._forward(Z)[-1]
    live = enc.sd > 0
    if not live.any():
        return 0.0
    return float(((out[:, live] - Z[:, live]) ** 2).mean())


def _loss_and_grads(weights, biases, Z, live):
    """Reconstruction MSE over live columns and its analytic gradients."""
    acts = [Z]
    a = Z
    last = len(weights) - 1
    for i, (W, b) in enumerate(zip(weights, biases)):
        pre = a @ W + b
        a = pre if i == last else np.tanh(pre)
        acts.append(a)
    n, _ = Z.shape
    n_live = int(live.sum())
    diff = np.zeros_like(acts[-1])
    diff[:, live] = acts[-1][:, live] - Z[:, live]
    loss = float((diff[:, live] ** 2).mean())

    gW = [None] * len(weights)
    gb = [None] * len(weights)
    delta = 2.0 * diff / (n * n_live)  # d loss / d output
    for i in range(last, -1, -1):
        gW[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ weights[i].T) * (1.0 - acts[i] ** 2)
    return loss, gW, gb


def _init_params(sizes, rng):
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return weights, biases


def _train_single(Z, live, h, cfg: TrainConfig, seed: int):
    """Adam training of one network on pre-standardized data."""
    n, p = Z.shape
    sizes = (p, cfg.hidden_factor * h, h, cfg.hidden_factor * h, p)
    rng = np.random.default_rng(seed)
    weights, biases = _init_params(sizes, rng)

    mW = [np.zeros_like(W) for W in weights]
    vW = [np.zeros_like(W) for W in weights]
    mb = [np.zeros_like(b) for b in biases]
    vb = [np.zeros_like(b) for b in biases]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0

    full_batch = n < 64
    for epoch in range(cfg.epochs):
        if full_batch:
            batches = [np.arange(n)]
        else:
            order = rng.permutation(n)
            batches = [order[k : k + cfg.batch_size] for k in range(0, n, cfg.batch_size)]
        for idx in batches:
            loss, gW, gb = _loss_and_grads(weights, biases, Z[idx], live)
            if not np.isfinite(loss):
                raise AutoencoderError(f"training diverged at epoch {epoch}")
            step += 1
            for i in range(len(weights)):
                mW[i] = beta1 * mW[i] + (1 - beta1) * gW[i]
                vW[i] = beta2 * vW[i] + (1 - beta2) * gW[i] ** 2
                mb[i] = beta1 * mb[i] + (1 - beta1) * gb[i]
                vb[i] = beta2 * vb[i] + (1 - beta2) * gb[i] ** 2
                corr1 = 1 - beta1**step
                corr2 = 1 - beta2**step
                weights[i] -= cfg.learning_rate * (mW[i] / corr1) / (np.sqrt(vW[i] / corr2) + eps)
                biases[i] -= cfg.learning_rate * (mb[i] / corr1) / (np.sqrt(vb[i] / corr2) + eps)
    return sizes, weights, biases


def train_autoencoder(X: np.ndarray, cfg: TrainConfig | None = None) -> Encoder:
    """Train the reconstruction network, choosing the bottleneck by CV.

    The bottleneck grid is scored by k-fold validation MSE (ties to the
    smaller width); the winning width is retrained on all rows.
    Deterministic given the config seed.
    """
    cfg = cfg or TrainConfig()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, p = X.shape
    grid = tuple(h for h in cfg.bottleneck_grid if h < p)
    if not grid:
        raise AutoencoderError("no bottleneck width below the feature dimension")
    if n < max(grid) + 1:
        raise AutoencoderError("need more rows than the widest bottleneck")

    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    live = sd > 0
    safe = np.where(live, sd, 1.0)
    Z = (X - mean) / safe
    Z[:, ~live] = 0.0

    best_h = grid[0]
    if len(grid) > 1:
        rng = np.random.default_rng(cfg.seed)
        order = rng.permutation(n)
        folds = np.array_split(order, min(cfg.cv_folds, n))
        scores = []
        for h in grid:
            fold_mse = []
            for f, hold in enumerate(folds):
                train = np.setdiff1d(order, hold)
                if len(train) < 2:
                    continue
                _, W, b = _train_single(Z[train], live, h, cfg, cfg.seed + 997 * f + h)
                acts = Z[hold]
                last = len(W) - 1
                for i in range(len(W)):
                    pre = acts @ W[i] + b[i]
                    acts = pre if i == last else np.tanh(pre)
                fold_mse.append(float(((acts[:, live] - Z[hold][:, live]) ** 2).mean()))
            scores.append((float(np.mean(fold_mse)), h))
        scores.sort(key=lambda sh: (sh[0], sh[1]))  # ties to smaller h
        best_h = scores[0][1]

    sizes, weights, biases = _train_single(Z, live, best_h, cfg, cfg.seed)
    return Encoder(sizes, weights, biases, mean, sd)


def pca_error(X: np.ndarray, h: int) -> float:
    """Reconstruction MSE of a rank-h principal component projection.

    Computed on the same standardization as the autoencoder; equals the
    trailing eigenvalue mass of the standardized covariance divided by p.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, p = X.shape
    if h >= p:
        raise AutoencoderError(f"h={h} must be below the feature dimension {p}")
    sd = X.std(axis=0)
    safe = np.where(sd > 0, sd, 1.0)
    Z = (X - X.mean(axis=0)) / safe
    Z[:, sd == 0] = 0.0
    _, s, Vt = np.linalg.svd(Z, full_matrices=False)
    recon = (Z @ Vt[:h].T) @ Vt[:h]
    live = sd > 0
    if not live.any():
        return 0.0
    return float(((Z - recon) ** 2)[:, live].mean())
