"""Embedded supervised learners.

Penalized linear regression (cyclic coordinate descent), random forest
regression (scikit-learn behind a thin wrapper), reward-weighted hinge-loss
classifiers (linear and Gaussian-kernel), and random-forest outcome
smoothing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist, pdist
from sklearn.ensemble import RandomForestRegressor

from .core import PdxDataset, ResponseRecord


class LearnerError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Lasso


@dataclass
class LinearModel:
    """Linear regressor on the original feature scale."""

    intercept: float
    coefficients: np.ndarray
    penalty: float
    objective_path: tuple[float, ...] = ()

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != len(self.coefficients):
            raise LearnerError(
                f"feature width {X.shape[1]} does not match model ({len(self.coefficients)})"
            )
        return X @ self.coefficients + self.intercept


def _soft_threshold(z: float, gamma: float) -> float:
    return np.sign(z) * max(abs(z) - gamma, 0.0)


def lasso_lambda_max(X: np.ndarray, y: np.ndarray) -> float:
    """Smallest penalty that shrinks every coefficient to zero."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    xc = X - X.mean(axis=0)
    scale = np.sqrt((xc**2).mean(axis=0))
    scale[scale == 0] = 1.0
    yc = y - y.mean()
    return float(np.max(np.abs((xc / scale).T @ yc / n))) if X.shape[1] else 0.0


def fit_lasso(
    X: np.ndarray,
    y: np.ndarray,
    lam: float,
    tol: float = 1e-8,
    max_sweeps: int = 10_000,
) -> LinearModel:
    """Cyclic coordinate descent for (1/2n)||y - b0 - Xb||^2 + lam * ||b||_1.

    Columns are standardized internally (mean 0, root-mean-square 1); the
    intercept is unpenalized.  Iterates until the relative objective change
    per sweep drops below ``tol``.  The recorded objective path is on the
    standardized problem, where it is non-increasing by construction.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != len(y):
        raise LearnerError("X rows must match y length")
    if len(y) < 2:
        raise LearnerError("need at least 2 observations")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise LearnerError("non-finite inputs")
    if lam < 0:
        raise LearnerError("penalty must be non-negative")

    n, p = X.shape
    xmean = X.mean(axis=0)
    xc = X - xmean
    scale = np.sqrt((xc**2).mean(axis=0))
    live = scale > 0
    scale_safe = np.where(live, scale, 1.0)
    Z = xc / scale_safe
    ymean = y.mean()
    r = y - ymean  # residual, beta = 0 start

    beta = np.zeros(p)
    path = []

    def objective() -> float:
        return float((r**2).sum() / (2 * n) + lam * np.abs(beta).sum())

    path.append(objective())
    for _ in range(max_sweeps):
        for j in range(p):
            if not live[j]:
                continue
            zj = Z[:, j]
            rho = (zj @ r) / n + beta[j]
            new = _soft_threshold(rho, lam)
            if new != beta[j]:
                r -= (new - beta[j]) * zj
                beta[j] = new
        path.append(objective())
        if path[-2] - path[-1] <= tol * max(abs(path[-2]), 1e-30):
            break

    coef = beta / scale_safe
    coef[~live] = 0.0
    intercept = ymean - coef @ xmean
    return LinearModel(float(intercept), coef, lam, tuple(path))


# ---------------------------------------------------------------------------
# Random forest


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    min_leaf: int = 1
    feature_fraction: float = 1.0
    max_depth: int | None = None  # 0 = single root leaf


@dataclass
class Forest:
    """Bagged regression trees; prediction is the mean over trees."""

    params: ForestParams
    seed: int
    _model: RandomForestRegressor | None = field(default=None, repr=False)
    _constant: float | None = None

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self._constant is not None:
            return np.full(X.shape[0], self._constant)
        return self._model.predict(X)

    def tree_predictions(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self._constant is not None:
            return np.full((1, X.shape[0]), self._constant)
        return np.stack([t.predict(X) for t in self._model.estimators_])


def fit_random_forest(X: np.ndarray, y: np.ndarray, params: ForestParams, seed: int) -> Forest:
    """Bootstrap-aggregated regression trees, deterministic given seed."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) < 2:
        raise LearnerError("need at least 2 observations")
    if params.min_leaf > len(y):
        raise LearnerError(f"min_leaf={params.min_leaf} exceeds n={len(y)}")
    if params.max_depth == 0:
        return Forest(params, seed, _constant=float(y.mean()))
    max_features = max(1, int(round(params.feature_fraction * X.shape[1])))
    model = RandomForestRegressor(
        n_estimators=params.n_trees,
        min_samples_leaf=params.min_leaf,
        max_features=max_features,
        max_depth=params.max_depth,
        random_state=seed,
        bootstrap=True,
    )
    model.fit(X, y)
    return Forest(params, seed, _model=model)


# ---------------------------------------------------------------------------
# Weighted hinge-loss classifiers


@dataclass
class DecisionFunction:
    """Binary decision rule sign(f(x)); sign(0) resolves to +1 (left arm)."""

    form: str  # "linear" | "gaussian"
    penalty: float
    bias: float
    weights: np.ndarray | None = None  # linear
    support: np.ndarray | None = None  # kernel training points
    dual_coef: np.ndarray | None = None
    bandwidth: float | None = None
    objective_path: tuple[float, ...] = ()

    def decision_values(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.form == "linear":
            if X.shape[1] != len(self.weights):
                raise LearnerError("feature width mismatch")
            return X @ self.weights + self.bias
        if X.shape[1] != self.support.shape[1]:
            raise LearnerError("feature width mismatch")
        K = _gaussian_kernel(X, self.support, self.bandwidth)
        return K @ self.dual_coef + self.bias

    def predict(self, X: np.ndarray) -> np.ndarray:
        f = self.decision_values(X)
        return np.where(f >= 0, 1, -1)


def _gaussian_kernel(A: np.ndarray, B: np.ndarray, sigma: float) -> np.ndarray:
    d2 = cdist(A, B, "sqeuclidean")
    return np.exp(-d2 / (2.0 * sigma**2))


def median_bandwidth(X: np.ndarray) -> float:
    """Median pairwise Euclidean distance, guarded away from zero."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] < 2:
        return 1.0
    d = pdist(X)
    med = float(np.median(d))
    return med if med > 0 else 1.0


def weighted_hinge_objective(
    f_values: np.ndarray, labels: np.ndarray, rewards: np.ndarray, ridge: float
) -> float:
    """Reward-weighted hinge surrogate: negative rewards flip the target sign."""
    s = np.where(rewards >= 0, labels, -labels)
    margins = 1.0 - s * f_values
    return float(np.mean(np.abs(rewards) * np.maximum(margins, 0.0)) + ridge)


def fit_weighted_classifier(
    X: np.ndarray,
    labels: np.ndarray,
    rewards: np.ndarray,
    form: str = "linear",
    lam: float = 1e-3,
    sigma: float | None = None,
    tol: float = 1e-6,
    max_iter: int = 5000,
) -> DecisionFunction:
    """Minimize the reward-weighted hinge loss plus a squared-norm penalty.

    Observations with negative reward contribute with flipped target sign
    and weight |reward|.  Optimization is subgradient descent with a
    monotone backtracking line search: a step is only accepted if it does
    not increase the objective, so the recorded objective path is
    non-increasing by construction.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    labels = np.asarray(labels, dtype=float)
    rewards = np.asarray(rewards, dtype=float)
    if not set(np.unique(labels)) <= {-1.0, 1.0}:
        raise LearnerError("labels must be in {-1, +1}")
    if not np.isfinite(rewards).all():
        raise LearnerError("rewards must be finite")
    if np.all(rewards == 0):
        raise LearnerError("degenerate weights: all rewards zero")
    if form not in ("linear", "gaussian"):
        raise LearnerError(f"unknown function class {form!r}")

    n = X.shape[0]
    s = np.where(rewards >= 0, labels, -labels)
    w_abs = np.abs(rewards)

    if form == "gaussian":
        sigma = sigma if sigma is not None else median_bandwidth(X)
        K = _gaussian_kernel(X, X, sigma)
        dim = n
    else:
        K = None
        dim = X.shape[1]

    theta = np.zeros(dim)
    bias = 0.0

    def f_values(th, b):
        return (K @ th if form == "gaussian" else X @ th) + b

    def full_objective(th, b):
        ridge = lam * float(th @ K @ th if form == "gaussian" else th @ th)
        return weighted_hinge_objective(f_values(th, b), labels, rewards, ridge)

    def subgradient(th, b):
        f = f_values(th, b)
        active = (s * f) < 1.0
        coef = -(w_abs * s * active) / n
        if form == "gaussian":
            g_th = K @ coef + 2.0 * lam * (K @ th)
        else:
            g_th = X.T @ coef + 2.0 * lam * th
        return g_th, float(coef.sum())

    obj = full_objective(theta, bias)
    path = [obj]
    step = 1.0
    for _ in range(max_iter):
        g_th, g_b = subgradient(theta, bias)
        gnorm2 = float(g_th @ g_th) + g_b**2
        if gnorm2 == 0:
            break
        accepted = False
        trial = step
        for _ in range(60):
            cand_th = theta - trial * g_th
            cand_b = bias - trial * g_b
            cand_obj = full_objective(cand_th, cand_b)
            if cand_obj <= obj:
                accepted = True
                break
            trial *= 0.5
        if not accepted:
            break
        improved = obj - cand_obj
        theta, bias, obj = cand_th, cand_b, cand_obj
        path.append(obj)
        step = trial * 1.5
        if improved <= tol * max(abs(obj), 1e-30):
            break
    if not np.isfinite(obj):
        raise LearnerError("weighted-hinge optimization diverged")

    if form == "linear":
        return DecisionFunction("linear", lam, float(bias), weights=theta, objective_path=tuple(path))
    return DecisionFunction(
        "gaussian",
        lam,
        float(bias),
        support=X.copy(),
        dual_coef=theta,
        bandwidth=sigma,
        objective_path=tuple(path),
    )


# ---------------------------------------------------------------------------
# Outcome smoothing


def smooth_outcomes(dataset: PdxDataset, seed: int, params: ForestParams | None = None) -> PdxDataset:
    """Replace observed responses with random-forest fitted values.

    The forest regresses response on (line features, one-hot treatment);
    the application mask and auxiliary responses are unchanged.
    """
    params = params or ForestParams(n_trees=200, min_leaf=2)
    line_index = {l: j for j, l in enumerate(dataset.features.line_ids)}
    trt_index = {t: i for i, t in enumerate(dataset.treatments)}
    rows = []
    y = []
    for r in dataset.records:
        onehot = np.zeros(dataset.P)
        onehot[trt_index[r.treatment]] = 1.0
        rows.append(np.concatenate([dataset.features.values[line_index[r.line_id]], onehot]))
        y.append(r.response)
    forest = fit_random_forest(np.array(rows), np.array(y), params, seed)
    fitted = forest.predict(np.array(rows))
    records = [
        ResponseRecord(r.line_id, r.treatment, float(fit), r.response_aux)
        for r, fit in zip(dataset.records, fitted)
    ]
    return dataset.with_records(records)
