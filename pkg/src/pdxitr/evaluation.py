"""Cross-validated value estimation and tuning.

The value of a rule on held-out mice is the ratio of empirical means
E_n[R * I{A in D(X)}] / E_n[I{A in D(X)}], where a mouse is concordant
when its received treatment belongs to the recommended group for its line.
Outer K-fold CV over lines wraps an inner CV for tuning parameters
(c1, c2, penalty); held-out folds are centered with training-derived scale
and null group.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .core import PdxDataset
from .itr import FitError, LearnerSpec, fit_off_the_shelf, fit_tree_owl, fit_tree_qlearning
from .learners import LearnerError, smooth_outcomes
from .tree import (
    CenteredRewards,
    TreeError,
    build_tree,
    center_with_template,
    cut_tree,
    standardize_and_center,
)


class ValueError_(ValueError):
    pass


class NoConcordantMiceError(ValueError_):
    pass


def estimate_value(recommend, rewards: CenteredRewards, dataset: PdxDataset | None = None) -> float:
    """Value of a rule over the mice of a (fold's) centered rewards.

    ``recommend`` maps a line index to the recommended treatment
    collection.  Null-treated mice participate with reward 0 when the
    originating dataset is supplied (their responses are centered by their
    own group mean).
    """
    num = 0.0
    den = 0
    total = 0
    for j in range(rewards.m):
        rec = set(recommend(j))
        for i, t in enumerate(rewards.treatments):
            if np.isfinite(rewards.R[i, j]):
                total += 1
                if t in rec:
                    num += rewards.R[i, j]
                    den += 1
        if dataset is not None:
            line_row = dataset.features.line_ids.index(rewards.line_ids[j])
            for t in rewards.null_group:
                ti = dataset.treatments.index(t)
                if dataset.applied[line_row, ti]:
                    total += 1
                    if t in rec:
                        den += 1  # reward 0 contributes nothing to num
    if total == 0:
        raise NoConcordantMiceError("empty holdout")
    if den == 0:
        raise NoConcordantMiceError("no concordant mice")
    return num / den


def rule_recommender(rule, X: np.ndarray):
    """Adapt a fitted rule with .recommend(x) to a line-index recommender."""

    def rec(j: int):
        return rule.recommend(X[j])

    return rec


def summarize_values(rewards: CenteredRewards) -> tuple[float, float]:
    """(v_obs, v_opt): mean reward of non-null mice, and mean of per-line best rewards."""
    R = rewards.R
    finite = np.isfinite(R)
    v_obs = float(R[finite].mean()) if finite.any() else float("nan")
    col_ok = finite.any(axis=0)
    with np.errstate(invalid="ignore"):
        v_opt = float(np.nanmax(R[:, col_ok], axis=0).mean()) if col_ok.any() else float("nan")
    return v_obs, v_opt


@dataclass(frozen=True)
class MethodSpec:
    """One estimation method cell: algorithm, embedded learner, variants."""

    method: str  # "ql1" | "ql2" | "owl" | "flat"
    learner: str  # "lasso" | "rf" for ql/flat; "linear" | "gaussian" for owl
    smoothed: bool = False

    @property
    def name(self) -> str:
        tags = [self.method, self.learner]
        if self.smoothed:
            tags.append("smoothed")
        return "_".join(tags)

    @property
    def uses_tree(self) -> bool:
        return self.method != "flat"


@dataclass(frozen=True)
class TuningGrid:
    c1: tuple[int, ...] = (0,)
    c2: tuple[int, ...] = (1, 2)
    lam: tuple[float, ...] = (0.01, 0.1)

    def points(self, uses_tree: bool):
        c2_values = self.c2 if uses_tree else (0,)
        return [
            {"c1": c1, "c2": c2, "lam": lam}
            for c1, c2, lam in itertools.product(self.c1, c2_values, self.lam)
        ]


@dataclass
class ValueReport:
    """Per-fold value estimates and the derived comparison metrics."""

    per_fold_values: tuple[float, ...]
    v_bar: float
    sd: float
    v_obs: float
    v_opt: float
    p_opt: float
    p_obs: float
    config: dict = field(default_factory=dict)
    skipped_folds: tuple[int, ...] = ()
    fold_params: tuple[dict, ...] = ()

    def to_dict(self) -> dict:
        return {
            "per_fold_values": list(self.per_fold_values),
            "v_bar": self.v_bar,
            "sd": self.sd,
            "v_obs": self.v_obs,
            "v_opt": self.v_opt,
            "p_opt": self.p_opt,
            "p_obs": self.p_obs,
            "config": self.config,
            "skipped_folds": list(self.skipped_folds),
            "fold_params": list(self.fold_params),
        }


def _fit_rule(spec: MethodSpec, rewards: CenteredRewards, X: np.ndarray, params: dict, seed: int):
    """Fit one rule per the method spec; returns an object with .recommend(x)."""
    if spec.method in ("ql1", "ql2"):
        learner = LearnerSpec(kind=spec.learner, lam=params["lam"] if spec.learner == "lasso" else None)
        dend = build_tree(rewards)
        grouping = cut_tree(rewards, dend, params["c2"])
        return fit_tree_qlearning(rewards, grouping, X, variant=spec.method, learner=learner, seed=seed)
    if spec.method == "owl":
        dend = build_tree(rewards)
        grouping = cut_tree(rewards, dend, params["c2"])
        return fit_tree_owl(
            rewards, grouping, X, form=spec.learner, lam_grid=(params["lam"],), seed=seed
        )
    if spec.method == "flat":
        learner = LearnerSpec(kind=spec.learner, lam=params["lam"] if spec.learner == "lasso" else None)
        return fit_off_the_shelf(rewards, X, learner=learner, seed=seed)
    raise ValueError_(f"unknown method {spec.method!r}")


def _evaluate_split(
    spec: MethodSpec,
    train_ds: PdxDataset,
    test_ds: PdxDataset,
    params: dict,
    seed: int,
) -> float:
    train_rewards = standardize_and_center(train_ds, params["c1"])
    rule = _fit_rule(spec, train_rewards, train_ds.features.values, params, seed)
    test_rewards = center_with_template(test_ds, train_rewards)
    return estimate_value(
        rule_recommender(rule, test_ds.features.values), test_rewards, dataset=test_ds
    )


def tune(
    spec: MethodSpec,
    train_ds: PdxDataset,
    grid: TuningGrid,
    seed: int,
    inner_folds: int = 3,
) -> dict:
    """Inner-CV grid search; ties broken toward (smaller c2, smaller c1, larger lam)."""
    points = grid.points(spec.uses_tree)
    if not points:
        raise ValueError_("empty tuning grid")
    lines = list(train_ds.features.line_ids)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(lines))
    folds = np.array_split(order, inner_folds)

    scored = []
    failures = []
    for params in points:
        values = []
        for f, hold in enumerate(folds):
            hold_lines = [lines[i] for i in hold]
            inner_train = [l for l in lines if l not in set(hold_lines)]
            try:
                values.append(
                    _evaluate_split(
                        spec,
                        train_ds.subset_lines(inner_train),
                        train_ds.subset_lines(hold_lines),
                        params,
                        seed + 101 * f,
                    )
                )
            except (FitError, LearnerError, TreeError, NoConcordantMiceError) as exc:
                failures.append(f"{params}: {exc}")
        if values:
            scored.append((float(np.mean(values)), params))
    if not scored:
        raise ValueError_("all grid points failed: " + "; ".join(failures[:10]))
    scored.sort(key=lambda vp: (-vp[0], vp[1]["c2"], vp[1]["c1"], -vp[1]["lam"]))
    return scored[0][1]


def cross_validate(
    spec: MethodSpec,
    dataset: PdxDataset,
    K: int = 5,
    seed: int = 0,
    grid: TuningGrid | None = None,
    inner_folds: int = 3,
) -> ValueReport:
    """Outer K-fold CV over lines with inner-CV tuning per training split.

    Smoothing (when the method spec requests it) is applied to each training split
    only; held-out folds are always scored on observed rewards.  V_obs and
    V_opt are averaged over the held-out folds' centered rewards.
    """
    grid = grid or TuningGrid()
    if not 2 <= K <= dataset.m:
        raise ValueError_(f"need 2 <= K <= m, got K={K}, m={dataset.m}")
    lines = list(dataset.features.line_ids)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(lines))
    folds = np.array_split(order, K)

    per_fold = []
    fold_params = []
    skipped = []
    v_obs_parts = []
    v_opt_parts = []
    for f, hold in enumerate(folds):
        hold_lines = [lines[i] for i in hold]
        train_lines = [l for l in lines if l not in set(hold_lines)]
        train_ds = dataset.subset_lines(train_lines)
        test_ds = dataset.subset_lines(hold_lines)
        if spec.smoothed:
            train_ds = smooth_outcomes(train_ds, seed + 7 * f)
        try:
            best = tune(spec, train_ds, grid, seed + 1000 * f, inner_folds=inner_folds)
            value = _evaluate_split(spec, train_ds, test_ds, best, seed + 1000 * f + 500)
            train_rewards = standardize_and_center(train_ds, best["c1"])
            test_rewards = center_with_template(test_ds, train_rewards)
            vo, vp = summarize_values(test_rewards)
        except (FitError, LearnerError, TreeError, NoConcordantMiceError, ValueError_):
            skipped.append(f)
            continue
        per_fold.append(value)
        fold_params.append(best)
        v_obs_parts.append(vo)
        v_opt_parts.append(vp)

    if not per_fold:
        raise ValueError_("every fold failed")
    v_bar = float(np.mean(per_fold))
    sd = float(np.std(per_fold, ddof=1)) if len(per_fold) > 1 else 0.0
    v_obs = float(np.mean(v_obs_parts))
    v_opt = float(np.mean(v_opt_parts))
    return ValueReport(
        per_fold_values=tuple(per_fold),
        v_bar=v_bar,
        sd=sd,
        v_obs=v_obs,
        v_opt=v_opt,
        p_opt=v_bar / v_opt if v_opt != 0 else float("nan"),
        p_obs=v_bar / v_obs if v_obs != 0 else float("nan"),
        config={"method": spec.name, "K": K, "seed": seed},
        skipped_folds=tuple(skipped),
        fold_params=tuple(fold_params),
    )
