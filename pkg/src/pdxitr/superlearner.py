"""Weighted combination of fitted tree rules, tuned by simulated annealing.

Each sub-rule contributes a latent score per treatment group: the fitted
arm-reward prediction at the node whose direct children include the group
(signed margin for OWL nodes), and the negated step-0 prediction for the
null group.  The combined rule recommends the group with the highest
weighted score; weights live on the simplex and are chosen to maximize the
cross-validated value.  Annealing chains start from every unit-weight
vertex plus random points, so the best combination never scores below the
best single input rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import PdxDataset
from .itr import NULL_GROUP, TreeItr
from .tree import CenteredRewards


class SuperLearnerError(ValueError):
    pass


@dataclass(frozen=True)
class SAConfig:
    chains: int = 4
    iterations: int = 2000
    gamma: float = 0.95
    proposal_sd: float = 0.4
    t0: float | None = None  # None = score scale
    seed: int = 0


def latent_score(itr: TreeItr, x: np.ndarray, group: int) -> float:
    """Score of a leaf group (or NULL_GROUP) under one sub-rule at x.

    For a leaf group this is the arm prediction at its parent decision
    node, oriented toward the group; for the null group it is the negated
    step-0 prediction, so positive favors recommending no treatment.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if group == NULL_GROUP:
        return -float(itr.step0_model.predict(x)[0])
    grouping = itr.grouping
    if not 0 <= group < grouping.n_groups:
        raise SuperLearnerError(f"group {group} not in grouping")
    target = grouping.groups[group]
    for node in grouping.internal_nodes:
        rule = itr.node_rules[node]
        left, right = rule.left_child, rule.right_child
        if grouping.dendrogram.members(left) == target:
            return rule.arm_predictions(x)[0]
        if grouping.dendrogram.members(right) == target:
            return rule.arm_predictions(x)[1]
    raise SuperLearnerError(f"group {group} has no parent decision node")


@dataclass
class SuperLearner:
    """Simplex-weighted ensemble of tree rules over a shared grouping."""

    sub_itrs: tuple[TreeItr, ...]
    weights: np.ndarray
    sa_config: SAConfig
    objective: float = float("nan")

    def __post_init__(self):
        if len(self.sub_itrs) < 2:
            raise SuperLearnerError("need at least 2 sub-rules")
        w = np.asarray(self.weights, dtype=float)
        if w.min() < 0 or abs(w.sum() - 1.0) > 1e-9:
            raise SuperLearnerError("weights must be non-negative and sum to 1")
        self.weights = w

    @property
    def grouping(self):
        return self.sub_itrs[0].grouping

    def scores(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(per-itr null scores, per-itr x per-group scores) at x."""
        null = np.array([latent_score(itr, x, NULL_GROUP) for itr in self.sub_itrs])
        groups = np.array(
            [
                [latent_score(itr, x, g) for g in range(self.grouping.n_groups)]
                for itr in self.sub_itrs
            ]
        )
        return null, groups

    def recommend_group(self, x: np.ndarray) -> int:
        null, groups = self.scores(x)
        if float(self.weights @ null) >= 0.0:
            return NULL_GROUP
        return int(np.argmax(self.weights @ groups))  # argmax ties -> lower index

    def recommend(self, x: np.ndarray):
        g = self.recommend_group(x)
        if g == NULL_GROUP:
            return self.grouping.null_group
        return self.grouping.group_treatments(g)


def _check_common_grouping(sub_itrs) -> None:
    ref = sub_itrs[0].grouping
    for itr in sub_itrs[1:]:
        g = itr.grouping
        if g.groups != ref.groups or g.treatments != ref.treatments or g.null_group != ref.null_group:
            raise SuperLearnerError("sub-rules must share a common treatment grouping")


def _precompute(sub_itrs, rewards: CenteredRewards, X: np.ndarray, dataset: PdxDataset | None):
    """Score and reward tensors so the annealing objective is pure numpy."""
    grouping = sub_itrs[0].grouping
    M, m, G = len(sub_itrs), rewards.m, grouping.n_groups
    null_scores = np.zeros((M, m))
    group_scores = np.zeros((M, m, G))
    for mi, itr in enumerate(sub_itrs):
        for j in range(m):
            null_scores[mi, j] = latent_score(itr, X[j], NULL_GROUP)
            for g in range(G):
                group_scores[mi, j, g] = latent_score(itr, X[j], g)

    R = rewards.R
    sum_R = np.zeros((G, m))
    cnt = np.zeros((G, m))
    for g, members in enumerate(grouping.groups):
        block = R[list(members)]
        fin = np.isfinite(block)
        sum_R[g] = np.where(fin, block, 0.0).sum(axis=0)
        cnt[g] = fin.sum(axis=0)
    null_cnt = np.zeros(m)
    if dataset is not None:
        for j, line in enumerate(rewards.line_ids):
            row = dataset.features.line_ids.index(line)
            for t in rewards.null_group:
                if dataset.applied[row, dataset.treatments.index(t)]:
                    null_cnt[j] += 1
    return null_scores, group_scores, sum_R, cnt, null_cnt


def _cv_value(w, null_scores, group_scores, sum_R, cnt, null_cnt, folds) -> float:
    """Mean over folds of the value of the weighted rule."""
    null_comb = w @ null_scores  # (m,)
    comb = np.einsum("i,ijg->jg", w, group_scores)  # (m, G)
    rec = comb.argmax(axis=1)
    is_null = null_comb >= 0.0
    fold_values = []
    for hold in folds:
        num = 0.0
        den = 0.0
        for j in hold:
            if is_null[j]:
                den += null_cnt[j]
            else:
                num += sum_R[rec[j], j]
                den += cnt[rec[j], j]
        if den > 0:
            fold_values.append(num / den)
    return float(np.mean(fold_values)) if fold_values else -np.inf


def _softmax(theta: np.ndarray) -> np.ndarray:
    z = np.exp(theta - theta.max())
    return z / z.sum()


def fit_superlearner(
    sub_itrs,
    rewards: CenteredRewards,
    X: np.ndarray,
    dataset: PdxDataset | None = None,
    folds: int = 3,
    sa_config: SAConfig | None = None,
) -> SuperLearner:
    """Optimize simplex weights by simulated annealing against CV value.

    Geometric cooling with Gaussian proposals on softmax logits.  The exact
    unit-weight vertices are always evaluated and chains start from them,
    so the returned objective is at least the best single sub-rule's.
    """
    sub_itrs = tuple(sub_itrs)
    if len(sub_itrs) < 2:
        raise SuperLearnerError("need at least 2 sub-rules")
    _check_common_grouping(sub_itrs)
    cfg = sa_config or SAConfig()
    M = len(sub_itrs)
    pre = _precompute(sub_itrs, rewards, X, dataset)

    rng = np.random.default_rng(cfg.seed)
    fold_order = rng.permutation(rewards.m)
    fold_idx = [list(part) for part in np.array_split(fold_order, folds)]

    def objective(w):
        return _cv_value(w, *pre, fold_idx)

    best_w = None
    best_obj = -np.inf
    for mi in range(M):
        w = np.zeros(M)
        w[mi] = 1.0
        obj = objective(w)
        if obj > best_obj:
            best_obj, best_w = obj, w

    t0 = cfg.t0 if cfg.t0 is not None else max(abs(best_obj), 1.0) * 0.1
    kappa = 30.0
    for chain in range(cfg.chains):
        if chain < M:
            theta = np.full(M, -kappa)
            theta[chain] = kappa
        else:
            theta = rng.normal(0, 1, M)
        w = _softmax(theta)
        obj = objective(w)
        if obj > best_obj:
            best_obj, best_w = obj, w
        temp = t0
        for _ in range(cfg.iterations):
            cand_theta = theta + rng.normal(0, cfg.proposal_sd, M)
            cand_w = _softmax(cand_theta)
            cand_obj = objective(cand_w)
            delta = cand_obj - obj
            if delta >= 0 or rng.random() < np.exp(delta / max(temp, 1e-12)):
                theta, w, obj = cand_theta, cand_w, cand_obj
                if obj > best_obj:
                    best_obj, best_w = obj, w.copy()
            temp *= cfg.gamma

    return SuperLearner(sub_itrs, best_w, cfg, objective=float(best_obj))
