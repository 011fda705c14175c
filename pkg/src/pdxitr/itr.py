"""Tree-based ITR estimation: Q-learning, outcome weighted learning, and
flat off-the-shelf baselines.

A fitted tree rule holds one binary decision per internal dendrogram node
above the cut plus a step-0 rule deciding null vs non-null.  Fitting
proceeds bottom-up (each node's arm rewards may depend on decisions already
fitted below it); prediction runs top-down from the root.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .learners import (
    DecisionFunction,
    ForestParams,
    LearnerError,
    LinearModel,
    fit_lasso,
    fit_random_forest,
    fit_weighted_classifier,
    lasso_lambda_max,
)
from .tree import CenteredRewards, TreatmentGrouping, group_rewards

NULL_GROUP = -1  # sentinel group index for the null recommendation


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class LearnerSpec:
    """Which regressor to embed at tree nodes (and step 0)."""

    kind: str = "lasso"  # "lasso" | "rf"
    lam: float | None = None  # None = 0.1 * lambda_max, per fit
    forest: ForestParams = field(default_factory=lambda: ForestParams(n_trees=100, min_leaf=2))

    def fit(self, X: np.ndarray, y: np.ndarray, seed: int):
        if self.kind == "lasso":
            lam = self.lam if self.lam is not None else 0.1 * lasso_lambda_max(X, y)
            return fit_lasso(X, y, lam)
        if self.kind == "rf":
            return fit_random_forest(X, y, self.forest, seed)
        raise FitError(f"unknown learner kind {self.kind!r}")


@dataclass
class NodeRule:
    """Binary decision at one internal node.

    Left (arm 1) covers the first merge child, right (arm 0) the second.
    Regression nodes store one fitted model per arm; OWL nodes store a
    single decision function whose positive sign selects the left arm.
    """

    node_id: int
    left_child: int
    right_child: int
    kind: str  # "regression" | "owl"
    left_model: object | None = None
    right_model: object | None = None
    decision: DecisionFunction | None = None

    def choose_left(self, x: np.ndarray) -> bool:
        x = np.atleast_2d(x)
        if self.kind == "regression":
            return float(self.left_model.predict(x)[0]) >= float(self.right_model.predict(x)[0])
        return float(self.decision.decision_values(x)[0]) >= 0.0

    def arm_predictions(self, x: np.ndarray) -> tuple[float, float]:
        """(left, right) latent scores at x."""
        x = np.atleast_2d(x)
        if self.kind == "regression":
            return (
                float(self.left_model.predict(x)[0]),
                float(self.right_model.predict(x)[0]),
            )
        f = float(self.decision.decision_values(x)[0])
        return f, -f


@dataclass
class TreeItr:
    """A fitted sequence of node rules over a treatment grouping."""

    grouping: TreatmentGrouping
    node_rules: dict[int, NodeRule]
    step0_model: object
    variant: str  # "ql1" | "ql2" | "owl"
    learner: LearnerSpec | None
    n_features: int
    seed: int = 0

    def _check_width(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        if len(x) != self.n_features:
            raise FitError(f"feature width {len(x)} does not match training ({self.n_features})")
        return x

    def recommend_group(self, x: np.ndarray) -> int:
        """Group index of the recommendation; NULL_GROUP for the null group."""
        x = self._check_width(x)
        if float(self.step0_model.predict(np.atleast_2d(x))[0]) <= 0.0:
            return NULL_GROUP
        return descend(self.node_rules, self.grouping, self.grouping.internal_nodes[0], x)

    def recommend(self, x: np.ndarray):
        """Recommended treatment set (a cut group, or the null group)."""
        g = self.recommend_group(x)
        if g == NULL_GROUP:
            return self.grouping.null_group
        return self.grouping.group_treatments(g)


def descend(node_rules: dict[int, NodeRule], grouping: TreatmentGrouping, node: int, x: np.ndarray) -> int:
    """Follow node rules from ``node`` down to a cut-leaf group index."""
    while True:
        leaf = grouping.leaf_group_of(node)
        if leaf is not None:
            return leaf
        rule = node_rules[node]
        node = rule.left_child if rule.choose_left(x) else rule.right_child


def _node_value(node_rules: dict[int, NodeRule], node: int, x: np.ndarray) -> float:
    """Predicted reward of the already-selected arm at a fitted node."""
    return max(node_rules[node].arm_predictions(x))


def _arm_rewards(
    child: int,
    grouping: TreatmentGrouping,
    grouped: np.ndarray,
    X: np.ndarray,
    node_rules: dict[int, NodeRule],
    variant: str,
    propagation: str,
) -> np.ndarray:
    """Per-line reward attributed to one arm of a node being fitted.

    A leaf-group arm uses the observed group-mean reward.  An internal-node
    arm propagates the reward of the descendant group selected by the
    already-fitted subtree (observed for ql1/owl, model-predicted for ql2),
    or the observed maximum over descendant groups when
    ``propagation='max'``.
    """
    m = grouped.shape[1]
    leaf = grouping.leaf_group_of(child)
    if leaf is not None:
        return grouped[leaf].copy()
    if propagation == "max":
        groups = _descendant_groups(child, grouping)
        with np.errstate(invalid="ignore"):
            return np.nanmax(grouped[groups], axis=0)
    out = np.full(m, np.nan)
    for j in range(m):
        sel = descend(node_rules, grouping, child, X[j])
        if variant == "ql2":
            out[j] = _node_value(node_rules, child, X[j])
        else:
            out[j] = grouped[sel, j]
    return out


def _descendant_groups(node: int, grouping: TreatmentGrouping) -> list[int]:
    leaf = grouping.leaf_group_of(node)
    if leaf is not None:
        return [leaf]
    left, right = grouping.node_children(node)
    return _descendant_groups(left, grouping) + _descendant_groups(right, grouping)


def _fit_step0(
    rewards: CenteredRewards,
    grouping: TreatmentGrouping,
    grouped: np.ndarray,
    X: np.ndarray,
    node_rules: dict[int, NodeRule],
    variant: str,
    learner: LearnerSpec,
    seed: int,
):
    """Regression of the optimal non-null reward on features.

    Step 0 recommends a non-null group iff the predicted reward of the
    selected non-null group exceeds 0 (the null group is centered to zero).
    """
    root = grouping.internal_nodes[0] if grouping.internal_nodes else None
    m = X.shape[0]
    y = np.full(m, np.nan)
    for j in range(m):
        if root is None:
            sel = 0
        else:
            sel = descend(node_rules, grouping, root, X[j])
        if variant == "ql2" and root is not None:
            y[j] = _node_value(node_rules, root, X[j])
        else:
            y[j] = grouped[sel, j]
    ok = np.isfinite(y)
    if ok.sum() < 2:
        raise FitError("unfittable step-0 rule: fewer than 2 lines with rewards")
    return learner.fit(X[ok], y[ok], seed + 9001)


def fit_tree_qlearning(
    rewards: CenteredRewards,
    grouping: TreatmentGrouping,
    X: np.ndarray,
    variant: str = "ql1",
    learner: LearnerSpec | None = None,
    seed: int = 0,
    propagation: str = "selected",
) -> TreeItr:
    """Fit tree-based Q-learning (observed rewards for ql1, pseudo-values for ql2).

    At each internal node, one regressor per arm maps features to the arm's
    attributed reward; the node decision is the argmax of the two
    predictions (ties to the left arm).  Lines missing an arm's reward are
    dropped from that arm's fit.
    """
    if variant not in ("ql1", "ql2"):
        raise FitError(f"unknown Q-learning variant {variant!r}")
    learner = learner or LearnerSpec()
    X = np.asarray(X, dtype=float)
    grouped = group_rewards(rewards, grouping)
    node_rules: dict[int, NodeRule] = {}
    for node in reversed(grouping.internal_nodes):
        left, right = grouping.node_children(node)
        models = []
        for arm, child in ((1, left), (0, right)):
            y = _arm_rewards(child, grouping, grouped, X, node_rules, variant, propagation)
            ok = np.isfinite(y)
            if ok.sum() < 2:
                raise FitError(f"unfittable node {node}: arm {arm} has {int(ok.sum())} observation(s)")
            models.append(learner.fit(X[ok], y[ok], seed + 13 * node + arm))
        node_rules[node] = NodeRule(
            node, left, right, "regression", left_model=models[0], right_model=models[1]
        )
    step0 = _fit_step0(rewards, grouping, grouped, X, node_rules, variant, learner, seed)
    return TreeItr(grouping, node_rules, step0, variant, learner, X.shape[1], seed)


def _owl_node_cv_value(X, labels, rewards_w, lines, form, lam, sigma, folds, seed) -> float:
    """Mean achieved reward of the node rule under a small CV split."""
    rng = np.random.default_rng(seed)
    uniq = np.unique(lines)
    perm = rng.permutation(len(uniq))
    achieved = []
    for f in range(folds):
        hold = set(uniq[perm[f::folds]])
        train = ~np.isin(lines, list(hold))
        if train.sum() < 2 or np.all(rewards_w[train] == 0):
            continue
        try:
            dfn = fit_weighted_classifier(
                X[train], labels[train], rewards_w[train], form=form, lam=lam, sigma=sigma
            )
        except LearnerError:
            continue
        test = ~train
        if not test.any():
            continue
        picks = dfn.predict(X[test])
        matched = picks == labels[test]
        if matched.any():
            achieved.extend(rewards_w[test][matched].tolist())
    return float(np.mean(achieved)) if achieved else -np.inf


def fit_tree_owl(
    rewards: CenteredRewards,
    grouping: TreatmentGrouping,
    X: np.ndarray,
    form: str = "linear",
    lam_grid: tuple[float, ...] = (1e-3,),
    sigma: float | None = None,
    step0_learner: LearnerSpec | None = None,
    seed: int = 0,
) -> TreeItr:
    """Fit tree-based OWL: one weighted-hinge decision function per node.

    Each line contributes one observation per arm, labeled +1 (left) or -1
    (right) and weighted by the arm's attributed reward; negative rewards
    flip the target sign inside the solver.  The penalty is selected per
    node by a small CV over lines when the grid has several values.  Step 0
    reuses the Q-learning construction (reward regression against zero).
    """
    step0_learner = step0_learner or LearnerSpec(kind="lasso")
    X = np.asarray(X, dtype=float)
    grouped = group_rewards(rewards, grouping)
    node_rules: dict[int, NodeRule] = {}
    for node in reversed(grouping.internal_nodes):
        left, right = grouping.node_children(node)
        rows, labels, obs_rewards, lines = [], [], [], []
        for arm_label, child in ((1.0, left), (-1.0, right)):
            y = _arm_rewards(child, grouping, grouped, X, node_rules, "ql1", "selected")
            for j in np.flatnonzero(np.isfinite(y)):
                rows.append(X[j])
                labels.append(arm_label)
                obs_rewards.append(y[j])
                lines.append(j)
        if not rows:
            raise FitError(f"unfittable node {node}: no observations")
        Xo = np.array(rows)
        labels_arr = np.array(labels)
        rewards_arr = np.array(obs_rewards)
        lines_arr = np.array(lines)
        lam = lam_grid[0]
        if len(lam_grid) > 1:
            scores = [
                (
                    _owl_node_cv_value(
                        Xo, labels_arr, rewards_arr, lines_arr, form, l, sigma, 3, seed + node
                    ),
                    l,
                )
                for l in lam_grid
            ]
            scores.sort(key=lambda sl: (-sl[0], -sl[1]))
            lam = scores[0][1]
        dfn = fit_weighted_classifier(Xo, labels_arr, rewards_arr, form=form, lam=lam, sigma=sigma)
        node_rules[node] = NodeRule(node, left, right, "owl", decision=dfn)
    step0 = _fit_step0(rewards, grouping, grouped, X, node_rules, "ql1", step0_learner, seed)
    return TreeItr(grouping, node_rules, step0, "owl", None, X.shape[1], seed)


# ---------------------------------------------------------------------------
# Flat off-the-shelf baselines


@dataclass
class FlatItr:
    """One regression over (features, treatment encodings); argmax recommendation."""

    model: object
    learner: LearnerSpec
    treatments: tuple
    null_group: tuple
    n_features: int
    interactions: bool

    def _design_row(self, x: np.ndarray, t_idx: int) -> np.ndarray:
        onehot = np.zeros(len(self.treatments))
        onehot[t_idx] = 1.0
        parts = [x, onehot]
        if self.interactions:
            inter = np.zeros(len(x) * len(self.treatments))
            inter[t_idx * len(x) : (t_idx + 1) * len(x)] = x
            parts.append(inter)
        return np.concatenate(parts)

    def recommend(self, x: np.ndarray):
        x = np.asarray(x, dtype=float).reshape(-1)
        if len(x) != self.n_features:
            raise FitError("feature width mismatch")
        rows = np.array([self._design_row(x, i) for i in range(len(self.treatments))])
        preds = self.model.predict(rows)
        best = int(np.argmax(preds))  # np.argmax keeps the lowest index on ties
        return (self.treatments[best],)


def fit_off_the_shelf(
    rewards: CenteredRewards,
    X: np.ndarray,
    learner: LearnerSpec | None = None,
    seed: int = 0,
) -> FlatItr:
    """Fit the flat baseline over all (line, treatment) observations.

    The lasso variant regresses reward on features, treatment one-hots, and
    feature-by-treatment interactions; the forest variant omits explicit
    interactions.  Recommendation is the argmax over single treatments.
    """
    learner = learner or LearnerSpec()
    X = np.asarray(X, dtype=float)
    interactions = learner.kind == "lasso"
    stub = FlatItr(None, learner, rewards.treatments, rewards.null_group, X.shape[1], interactions)
    rows, y = [], []
    for i in range(len(rewards.treatments)):
        for j in range(rewards.m):
            if np.isfinite(rewards.R[i, j]):
                rows.append(stub._design_row(X[j], i))
                y.append(rewards.R[i, j])
    if len(y) < 2:
        raise FitError("too few observations for the flat baseline")
    stub.model = learner.fit(np.array(rows), np.array(y), seed)
    return stub
