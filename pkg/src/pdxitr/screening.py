"""Feature and treatment filtering, plus gene ranking by distance covariance.

Unsupervised filtering drops low-variance features (and low-mean expression
features), and treatments applied in too few lines.  Supervised screening
ranks genes by the sample Brownian distance covariance between a gene's
multi-platform predictor block and the (bivariate) treatment response.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .core import DatasetError, FeatureMatrix, PdxDataset, assemble_response_matrix

PLATFORM_SUFFIXES = (".rna", ".cn", ".mut")


class ScreeningError(ValueError):
    pass


@dataclass(frozen=True)
class ScreeningCriteria:
    """Thresholds for unsupervised feature/treatment filtering."""

    min_variance_quantile: float = 0.2
    min_mean_expression: float = 0.0
    treatment_coverage: float = 0.90

    def __post_init__(self):
        if not 0.0 <= self.min_variance_quantile < 1.0:
            raise ScreeningError("min_variance_quantile must be in [0, 1)")
        if not 0.0 <= self.treatment_coverage <= 1.0:
            raise ScreeningError("treatment_coverage must be in [0, 1]")


@dataclass(frozen=True)
class GeneFeatureSet:
    """Top-ranked genes and all their platform features."""

    genes: tuple[str, ...]
    feature_names: tuple[str, ...]

    @property
    def L_sup(self) -> int:
        return len(self.genes)


def gene_of(feature_name: str) -> str:
    """Strip the platform suffix from a feature name."""
    for suffix in PLATFORM_SUFFIXES:
        if feature_name.endswith(suffix):
            return feature_name[: -len(suffix)]
    return feature_name


def filter_features(features: FeatureMatrix, criteria: ScreeningCriteria) -> FeatureMatrix:
    """Drop features with low variance, and .rna features with low mean.

    The variance threshold is the ``min_variance_quantile`` quantile of the
    observed feature variances; order is preserved.
    """
    variances = features.values.var(axis=0)
    threshold = np.quantile(variances, criteria.min_variance_quantile)
    means = features.values.mean(axis=0)
    keep = []
    for j, name in enumerate(features.feature_names):
        if variances[j] < threshold:
            continue
        if name.endswith(".rna") and means[j] < criteria.min_mean_expression:
            continue
        keep.append(name)
    if not keep:
        raise ScreeningError("empty feature set after filtering")
    return features.subset_features(keep)


def filter_treatments(dataset: PdxDataset, coverage: float) -> PdxDataset:
    """Drop treatments applied in fewer than coverage * m lines.

    The untreated arm is exempt: the treatment tree needs it.
    """
    counts = dataset.applied.sum(axis=0)
    keep = {
        t
        for i, t in enumerate(dataset.treatments)
        if t.is_untreated or counts[i] >= coverage * dataset.m
    }
    if len(keep) < 2:
        raise ScreeningError("fewer than 2 treatments remain after coverage filtering")
    records = [r for r in dataset.records if r.treatment in keep]
    return dataset.with_records(records)


def dcov(x: np.ndarray, y: np.ndarray) -> float:
    """Sample (Brownian) distance covariance between paired samples.

    Both arguments are n x p / n x q arrays (1-D input is treated as a
    single column).  Uses the biased V-statistic with 1/n^2 normalization:
    double-centered Euclidean distance matrices A, B and
    V^2 = (1/n^2) sum A_ij B_ij; returns sqrt(V^2).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if y.ndim == 1:
        y = y[:, None]
    n = x.shape[0]
    if y.shape[0] != n:
        raise ScreeningError("x and y must have the same number of rows")
    if n < 2:
        raise ScreeningError("distance covariance needs n >= 2")
    a = cdist(x, x)
    b = cdist(y, y)
    A = a - a.mean(axis=0) - a.mean(axis=1)[:, None] + a.mean()
    B = b - b.mean(axis=0) - b.mean(axis=1)[:, None] + b.mean()
    v2 = (A * B).mean()
    return float(np.sqrt(max(v2, 0.0)))


def _gene_blocks(features: FeatureMatrix) -> dict[str, np.ndarray]:
    """Group feature columns by gene, preserving first-seen gene order."""
    cols: dict[str, list[int]] = {}
    for j, name in enumerate(features.feature_names):
        cols.setdefault(gene_of(name), []).append(j)
    return {g: features.values[:, idx] for g, idx in cols.items()}


def _response_columns(dataset: PdxDataset) -> tuple[np.ndarray, np.ndarray | None]:
    primary = assemble_response_matrix(dataset)
    has_aux = any(r.response_aux is not None for r in dataset.records)
    aux = assemble_response_matrix(dataset, aux=True) if has_aux else None
    return primary, aux


def _stack_response(primary_col, aux_col):
    if aux_col is None:
        return primary_col[:, None]
    return np.column_stack([primary_col, aux_col])


def rank_genes(dataset: PdxDataset, mode: str = "combined") -> list[tuple[str, float]]:
    """Rank genes by distance covariance with treatment response.

    ``prognostic`` scores a gene by the maximum over treatments of
    dcov(gene block, response); ``predictive`` by the maximum over treatment
    pairs of dcov(gene block, response difference); ``combined`` takes the
    maximum of the two.  The response is bivariate when the dataset carries
    both outcome kinds.  Lines with missing responses are dropped pairwise
    within each treatment or pair.  Returns (gene, score) sorted by
    descending score, ties by gene name.
    """
    if mode not in ("prognostic", "predictive", "combined"):
        raise ScreeningError(f"unknown ranking mode {mode!r}")
    primary, aux = _response_columns(dataset)
    blocks = _gene_blocks(dataset.features)
    non_null = [i for i, t in enumerate(dataset.treatments) if not t.is_untreated]

    targets = []  # (line mask, response block) pairs shared by all genes
    if mode in ("prognostic", "combined"):
        for i in non_null:
            ok = np.isfinite(primary[i])
            if aux is not None:
                ok &= np.isfinite(aux[i])
            if ok.sum() >= 2:
                y = _stack_response(primary[i, ok], aux[i, ok] if aux is not None else None)
                targets.append((ok, y))
    if mode in ("predictive", "combined"):
        for a_idx, i in enumerate(non_null):
            for i2 in non_null[a_idx + 1 :]:
                ok = np.isfinite(primary[i]) & np.isfinite(primary[i2])
                if aux is not None:
                    ok &= np.isfinite(aux[i]) & np.isfinite(aux[i2])
                if ok.sum() >= 2:
                    d1 = primary[i, ok] - primary[i2, ok]
                    d2 = aux[i, ok] - aux[i2, ok] if aux is not None else None
                    targets.append((ok, _stack_response(d1, d2)))
    if not targets:
        raise ScreeningError("no treatment or pair has >= 2 complete lines")

    scored = []
    for gene, block in blocks.items():
        score = max(dcov(block[ok], y) for ok, y in targets)
        scored.append((gene, float(score)))
    scored.sort(key=lambda gs: (-gs[1], gs[0]))
    return scored


def select_top(ranked: list[tuple[str, float]], L_sup: int, features: FeatureMatrix) -> GeneFeatureSet:
    """Take the first L_sup ranked genes and all their platform features."""
    if L_sup > len(ranked):
        raise ScreeningError(f"L_sup={L_sup} exceeds {len(ranked)} available genes")
    genes = tuple(g for g, _ in ranked[:L_sup])
    gene_set = set(genes)
    names = tuple(n for n in features.feature_names if gene_of(n) in gene_set)
    return GeneFeatureSet(genes, names)
