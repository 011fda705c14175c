"""Domain types for multi-treatment study data.

A dataset couples a line-by-feature matrix with per-(line, treatment)
response records and an application mask.  Lines are the experimental unit;
each line may receive many treatments.  All types are immutable after
construction and safe to share across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DatasetError(ValueError):
    """Raised when a dataset violates a structural invariant."""


@dataclass(frozen=True, order=True)
class TreatmentId:
    """A treatment label, unique within a dataset."""

    id: str
    is_untreated: bool = False


@dataclass(frozen=True)
class ResponseRecord:
    """One observed response for a (line, treatment) pair.

    ``response`` is the primary analysis outcome (negated best average
    response in percent, or log time-to-doubling).  ``response_aux``
    optionally carries the other outcome kind so screening can use the
    bivariate response.
    """

    line_id: str
    treatment: TreatmentId
    response: float
    response_aux: float | None = None


@dataclass(frozen=True)
class FeatureMatrix:
    """Lines-by-features numeric matrix with named rows and columns.

    Feature names carry a platform suffix (``.rna``, ``.cn``, ``.mut``);
    the stem before the suffix identifies the gene.
    """

    line_ids: tuple[str, ...]
    feature_names: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (len(self.line_ids), len(self.feature_names)):
            raise DatasetError(
                f"feature matrix shape {values.shape} does not match "
                f"{len(self.line_ids)} lines x {len(self.feature_names)} features"
            )
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n_lines(self) -> int:
        return len(self.line_ids)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def row(self, line_id: str) -> np.ndarray:
        return self.values[self.line_ids.index(line_id)]

    def subset_features(self, names) -> "FeatureMatrix":
        names = tuple(names)
        idx = [self.feature_names.index(n) for n in names]
        return FeatureMatrix(self.line_ids, names, self.values[:, idx])

    def subset_lines(self, line_ids) -> "FeatureMatrix":
        line_ids = tuple(line_ids)
        idx = [self.line_ids.index(l) for l in line_ids]
        return FeatureMatrix(line_ids, self.feature_names, self.values[idx])


@dataclass(frozen=True)
class PdxDataset:
    """A feature matrix plus response records over many treatments.

    ``treatments`` is the ordered treatment list; ``applied`` is the
    lines x treatments boolean mask of which pairs were observed.
    """

    features: FeatureMatrix
    records: tuple[ResponseRecord, ...]
    treatments: tuple[TreatmentId, ...] = field(default=())
    applied: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        records = tuple(self.records)
        object.__setattr__(self, "records", records)
        if not self.treatments:
            seen: dict[TreatmentId, None] = {}
            for r in records:
                seen.setdefault(r.treatment, None)
            object.__setattr__(self, "treatments", tuple(seen))
        if self.applied is None:
            mask = np.zeros((self.features.n_lines, len(self.treatments)), dtype=bool)
            line_index = {l: j for j, l in enumerate(self.features.line_ids)}
            trt_index = {t: i for i, t in enumerate(self.treatments)}
            for r in records:
                if r.line_id in line_index and r.treatment in trt_index:
                    mask[line_index[r.line_id], trt_index[r.treatment]] = True
            mask.setflags(write=False)
            object.__setattr__(self, "applied", mask)

    @property
    def m(self) -> int:
        """Number of lines."""
        return self.features.n_lines

    @property
    def P(self) -> int:
        """Number of treatments."""
        return len(self.treatments)

    @property
    def line_ids(self) -> tuple[str, ...]:
        return self.features.line_ids

    def untreated(self) -> TreatmentId:
        arms = [t for t in self.treatments if t.is_untreated]
        if len(arms) != 1:
            raise DatasetError(f"expected exactly one untreated arm, found {len(arms)}")
        return arms[0]

    def subset_lines(self, line_ids) -> "PdxDataset":
        keep = set(line_ids)
        feats = self.features.subset_lines(line_ids)
        recs = tuple(r for r in self.records if r.line_id in keep)
        return PdxDataset(feats, recs, treatments=self.treatments)

    def with_records(self, records) -> "PdxDataset":
        return PdxDataset(self.features, tuple(records))


def validate_dataset(dataset: PdxDataset) -> list[str]:
    """Return every invariant violation, ordered by (line, treatment).

    An empty list means the dataset is valid for all downstream stages.
    """
    violations: list[str] = []
    if dataset.m < 2:
        violations.append(f"m >= 2 violated: {dataset.m} line(s)")
    if dataset.P < 2:
        violations.append(f"P >= 2 violated: {dataset.P} treatment(s)")
    n_untreated = sum(t.is_untreated for t in dataset.treatments)
    if n_untreated != 1:
        violations.append(f"exactly one untreated arm required, found {n_untreated}")

    known_lines = set(dataset.features.line_ids)
    per_record = []
    seen_pairs: dict[tuple[str, str], int] = {}
    for r in dataset.records:
        key = (r.line_id, r.treatment.id)
        if r.line_id not in known_lines:
            per_record.append((key, f"record ({r.line_id}, {r.treatment.id}): unknown line"))
        if not np.isfinite(r.response):
            per_record.append((key, f"record ({r.line_id}, {r.treatment.id}): non-finite response"))
        if r.response_aux is not None and not np.isfinite(r.response_aux):
            per_record.append(
                (key, f"record ({r.line_id}, {r.treatment.id}): non-finite auxiliary response")
            )
        seen_pairs[key] = seen_pairs.get(key, 0) + 1
    for key in sorted(k for k, c in seen_pairs.items() if c > 1):
        per_record.append((key, f"duplicate record for ({key[0]}, {key[1]})"))

    lines_with_records = {r.line_id for r in dataset.records}
    for line in dataset.features.line_ids:
        if line not in lines_with_records:
            per_record.append(((line, ""), f"line {line} has no response records"))

    violations.extend(msg for _, msg in sorted(per_record))
    return violations


def assemble_response_matrix(dataset: PdxDataset, aux: bool = False) -> np.ndarray:
    """Rearrange records into a treatments x lines matrix (NaN = absent).

    Entry (i, j) is the response of line j to treatment i.  Raises on
    duplicate (line, treatment) pairs; the mapping between records and
    present entries is a bijection.
    """
    out = np.full((dataset.P, dataset.m), np.nan)
    line_index = {l: j for j, l in enumerate(dataset.features.line_ids)}
    trt_index = {t: i for i, t in enumerate(dataset.treatments)}
    for r in dataset.records:
        i, j = trt_index[r.treatment], line_index[r.line_id]
        if not np.isnan(out[i, j]):
            raise DatasetError(f"duplicate record for ({r.line_id}, {r.treatment.id})")
        value = r.response_aux if aux else r.response
        out[i, j] = np.nan if value is None else value
    return out
