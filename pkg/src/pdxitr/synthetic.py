"""Synthetic PDX-style data with known conditional mean structure.

The generator draws standard-normal features and produces responses
Y_ij = h0(x_j) + h_i(x_j) + noise, with an untreated arm whose treatment
effect is identically zero.  The oracle exposes the true conditional means
and the true grouping of treatments into effect-equivalence classes, and a
brute-force optimal-value evaluator used by the partition property tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import FeatureMatrix, PdxDataset, ResponseRecord, TreatmentId


class SyntheticError(ValueError):
    pass


@dataclass(frozen=True)
class MeanFunction:
    """Evaluable conditional-mean piece: linear, single-threshold step, or constant."""

    kind: str  # "linear" | "step" | "const"
    params: tuple[float, ...] = ()
    weights: tuple[float, ...] = ()

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kind == "const":
            return np.full(X.shape[0], self.params[0])
        if self.kind == "linear":
            w = np.zeros(X.shape[1])
            w[: len(self.weights)] = self.weights
            return X @ w + self.params[0]
        if self.kind == "step":
            j, threshold, low, high = self.params
            return np.where(X[:, int(j)] > threshold, high, low)
        raise SyntheticError(f"unknown mean function kind {self.kind!r}")


def linear_mean(intercept: float, *weights: float) -> MeanFunction:
    return MeanFunction("linear", (intercept,), tuple(weights))


def step_mean(feature: int, threshold: float, low: float, high: float) -> MeanFunction:
    return MeanFunction("step", (feature, threshold, low, high))


def const_mean(value: float) -> MeanFunction:
    return MeanFunction("const", (value,))


@dataclass(frozen=True)
class SyntheticOracle:
    """True data-generating process for a synthetic PDX study."""

    baseline: MeanFunction
    effects: tuple[MeanFunction, ...]  # one per non-null treatment
    noise_sd: float
    true_grouping: tuple[tuple[int, ...], ...] = field(default=())

    def __post_init__(self):
        if self.noise_sd < 0:
            raise SyntheticError("noise sd must be non-negative")
        if not self.true_grouping:
            object.__setattr__(self, "true_grouping", tuple((i,) for i in range(len(self.effects))))

    def conditional_means(self, X: np.ndarray) -> np.ndarray:
        """Treatment effect means, treatments x rows (baseline excluded)."""
        return np.stack([h(X) for h in self.effects])


def make_grouped_oracle(
    n_treatments: int,
    n_groups: int,
    noise_sd: float = 0.1,
    n_informative: int = 2,
    effect_scale: float = 2.0,
    baseline_scale: float = 1.0,
) -> SyntheticOracle:
    """Oracle whose treatments fall into effect-equivalence classes.

    Treatments are split into ``n_groups`` contiguous classes; class k
    shares a linear effect pointing along direction 2*pi*k/n_groups in the
    plane of the first informative features (a single axis when
    ``n_informative`` is 1), so different feature-space regions favor
    different classes.  A shared linear baseline (all arms, untreated
    included) models per-line response heterogeneity that null-centering
    is meant to remove.
    """
    if not 1 <= n_groups <= n_treatments:
        raise SyntheticError("need 1 <= n_groups <= n_treatments")
    if n_informative < 1:
        raise SyntheticError("need at least one informative feature")
    chunks = np.array_split(np.arange(n_treatments), n_groups)
    effects = [None] * n_treatments
    for k, chunk in enumerate(chunks):
        angle = 2.0 * np.pi * k / n_groups
        if n_informative == 1:
            weights = (effect_scale * np.cos(angle),)
        else:
            weights = (effect_scale * np.cos(angle), effect_scale * np.sin(angle))
        h = linear_mean(0.0, *weights)
        for i in chunk:
            effects[i] = h
    if baseline_scale:
        base = (
            linear_mean(0.0, baseline_scale)
            if n_informative == 1
            else linear_mean(0.0, baseline_scale, baseline_scale)
        )
    else:
        base = const_mean(0.0)
    return SyntheticOracle(
        baseline=base,
        effects=tuple(effects),
        noise_sd=noise_sd,
        true_grouping=tuple(tuple(int(i) for i in chunk) for chunk in chunks),
    )


def generate(
    m: int,
    n_treatments: int,
    p: int,
    oracle: SyntheticOracle,
    seed: int,
    missing_rate: float = 0.0,
    bivariate: bool = True,
) -> tuple[PdxDataset, SyntheticOracle]:
    """Draw a synthetic dataset from the oracle.

    Features are standard normal; an untreated arm (effect 0) is always
    appended.  ``missing_rate`` drops non-untreated (line, treatment)
    entries at random.  With ``bivariate`` the records also carry a second,
    independently-noised copy of the mean as the auxiliary response.
    """
    if m < 2 or n_treatments < 2 or p < 1:
        raise SyntheticError("need m >= 2, treatments >= 2, p >= 1")
    if len(oracle.effects) != n_treatments:
        raise SyntheticError("oracle must define one effect per non-null treatment")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((m, p))
    line_ids = tuple(f"L{j:03d}" for j in range(m))
    feature_names = tuple(f"g{i:03d}.rna" for i in range(p))
    features = FeatureMatrix(line_ids, feature_names, X)

    treatments = tuple(TreatmentId(f"T{i + 1}") for i in range(n_treatments)) + (
        TreatmentId("untreated", is_untreated=True),
    )
    base = oracle.baseline(X)
    means = np.vstack([oracle.conditional_means(X), np.zeros(m)]) + base[None, :]

    records = []
    for i, t in enumerate(treatments):
        for j, line in enumerate(line_ids):
            if not t.is_untreated and missing_rate > 0 and rng.random() < missing_rate:
                continue
            y = means[i, j] + rng.normal(0, oracle.noise_sd)
            aux = means[i, j] + rng.normal(0, oracle.noise_sd) if bivariate else None
            records.append(ResponseRecord(line, t, float(y), aux))
    return PdxDataset(features, tuple(records), treatments=treatments), oracle


def oracle_optimal_value(
    oracle: SyntheticOracle,
    grouping: tuple[tuple[int, ...], ...],
    X: np.ndarray | None = None,
    n_draws: int = 10_000,
    seed: int = 0,
    p: int = 2,
) -> float:
    """Optimal value of a treatment grouping under the oracle.

    V*(G) = E[max over groups of the group-mean conditional reward].
    Exact summation over the rows of ``X`` when given, otherwise Monte
    Carlo over ``n_draws`` standard-normal feature draws.
    """
    flat = [a for g in grouping for a in g]
    if sorted(flat) != list(range(len(oracle.effects))):
        raise SyntheticError("grouping must partition the non-null treatments")
    if any(len(g) == 0 for g in grouping):
        raise SyntheticError("empty group")
    if X is None:
        X = np.random.default_rng(seed).standard_normal((n_draws, p))
    means = oracle.conditional_means(X)  # treatments x rows
    group_means = np.stack([means[list(g)].mean(axis=0) for g in grouping])
    return float(group_means.max(axis=0).mean())
