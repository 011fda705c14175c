"""Shared builders and independent oracles for the test suite."""

import itertools

import numpy as np
import pytest

from pdxitr import FeatureMatrix, PdxDataset, ResponseRecord, TreatmentId


def make_dataset(Y, X=None, untreated_row=None, aux=None):
    """Build a dataset from a treatments x lines response matrix.

    NaN entries in ``Y`` are absent records.  ``untreated_row`` marks one
    row as the untreated arm (default: the last row).  ``X`` defaults to a
    seeded standard-normal feature matrix with 3 columns.
    """
    Y = np.asarray(Y, dtype=float)
    P, m = Y.shape
    if untreated_row is None:
        untreated_row = P - 1
    if X is None:
        X = np.random.default_rng(123).standard_normal((m, 3))
    line_ids = tuple(f"L{j}" for j in range(m))
    feature_names = tuple(f"g{k}.rna" for k in range(X.shape[1]))
    treatments = tuple(
        TreatmentId("untreated", True) if i == untreated_row else TreatmentId(f"T{i + 1}")
        for i in range(P)
    )
    records = []
    for i in range(P):
        for j in range(m):
            if np.isfinite(Y[i, j]):
                a = aux[i][j] if aux is not None else None
                records.append(ResponseRecord(line_ids[j], treatments[i], float(Y[i, j]), a))
    features = FeatureMatrix(line_ids, feature_names, X)
    return PdxDataset(features, tuple(records), treatments=treatments)


def brute_dcov(x, y):
    """Independent elementwise double-centering implementation of dcov."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if x.shape[0] == 1:
        x = x.T
    if y.shape[0] == 1:
        y = y.T
    n = x.shape[0]
    a = np.zeros((n, n))
    b = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            a[i, j] = np.sqrt(((x[i] - x[j]) ** 2).sum())
            b[i, j] = np.sqrt(((y[i] - y[j]) ** 2).sum())
    A = np.zeros((n, n))
    B = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            A[i, j] = a[i, j] - a[i].mean() - a[:, j].mean() + a.mean()
            B[i, j] = b[i, j] - b[i].mean() - b[:, j].mean() + b.mean()
    v2 = (A * B).sum() / n**2
    return np.sqrt(max(v2, 0.0))


def all_partitions(items):
    """Every partition of a list, as lists of blocks."""
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in all_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [part[i] + [first]] + part[i + 1 :]
        yield part + [[first]]


def canonical(partition):
    return tuple(sorted(tuple(sorted(block)) for block in partition))


def refines(fine, coarse):
    """True when every block of ``fine`` sits inside a block of ``coarse``."""
    return all(any(set(f) <= set(c) for c in coarse) for f in fine)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
