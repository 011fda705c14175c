"""Reward centering and the treatment tree.

Each treatment's response vector is scaled to standard deviation 1, the
untreated arm plus its c1 nearest neighbors form the null group, and
per-line rewards are the standardized responses minus the null-group mean.
Agglomerative (average-linkage) clustering of the centered treatment rows
gives a dendrogram; cutting c2 steps from the root yields c2 + 1 groups.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import PdxDataset, TreatmentId, assemble_response_matrix


class TreeError(ValueError):
    pass


@dataclass(frozen=True)
class CenteredRewards:
    """Standardized, null-centered reward matrix.

    ``R`` is non-null treatments x lines (NaN where not applied);
    ``scale`` holds the per-treatment standard deviations used, indexed
    like ``treatments``; ``null_mean`` is the per-line null-group mean of
    standardized responses.
    """

    treatments: tuple[TreatmentId, ...]  # non-null, row order of R
    line_ids: tuple[str, ...]
    R: np.ndarray
    null_group: tuple[TreatmentId, ...]  # untreated first
    null_mean: np.ndarray
    scale: np.ndarray  # indexed by scale_treatments
    c1: int
    scale_treatments: tuple[TreatmentId, ...] = ()

    def __post_init__(self):
        for name in ("R", "null_mean", "scale"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def m(self) -> int:
        return len(self.line_ids)

    def subset_lines(self, line_ids) -> "CenteredRewards":
        idx = [self.line_ids.index(l) for l in line_ids]
        return CenteredRewards(
            self.treatments,
            tuple(line_ids),
            self.R[:, idx],
            self.null_group,
            self.null_mean[idx],
            self.scale,
            self.c1,
            self.scale_treatments,
        )


@dataclass(frozen=True)
class Dendrogram:
    """Merge history over the non-null treatment leaves.

    Leaves are numbered 0..n_leaves-1 (row order of the reward matrix);
    merge i creates cluster id n_leaves + i from (left, right) at the
    given height.  Average linkage keeps heights non-decreasing.
    """

    n_leaves: int
    merges: tuple[tuple[int, int, float], ...]

    def __post_init__(self):
        if len(self.merges) != self.n_leaves - 1:
            raise TreeError("dendrogram must contain exactly n_leaves - 1 merges")

    def members(self, node: int) -> tuple[int, ...]:
        """Leaf indices under a cluster id, ascending."""
        if node < self.n_leaves:
            return (node,)
        left, right, _ = self.merges[node - self.n_leaves]
        return tuple(sorted(self.members(left) + self.members(right)))

    def export_text(self, leaf_labels) -> str:
        lines = ["# treatment dendrogram v1"]
        for i, label in enumerate(leaf_labels):
            lines.append(f"leaf\t{i}\t{label}")
        for i, (left, right, height) in enumerate(self.merges):
            lines.append(f"merge\t{self.n_leaves + i}\t{left}\t{right}\t{height!r}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class TreatmentGrouping:
    """A cut of the dendrogram into c2 + 1 treatment groups.

    ``groups`` holds tuples of row indices into the reward matrix, ordered
    by smallest member index.  ``internal_nodes`` are the undone merge
    cluster ids, root first (prediction runs top-down, fitting bottom-up).
    """

    dendrogram: Dendrogram
    treatments: tuple[TreatmentId, ...]
    null_group: tuple[TreatmentId, ...]
    groups: tuple[tuple[int, ...], ...]
    internal_nodes: tuple[int, ...]
    c1: int
    c2: int

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    def group_treatments(self, g: int) -> tuple[TreatmentId, ...]:
        return tuple(self.treatments[i] for i in self.groups[g])

    def node_children(self, node: int) -> tuple[int, int]:
        left, right, _ = self.dendrogram.merges[node - self.dendrogram.n_leaves]
        return left, right

    def leaf_group_of(self, node: int) -> int | None:
        """Group index whose member set equals this cluster, if it is a cut leaf."""
        members = self.dendrogram.members(node)
        for g, grp in enumerate(self.groups):
            if grp == members:
                return g
        return None


def _complete_lines(Y: np.ndarray) -> np.ndarray:
    return np.isfinite(Y).all(axis=0)


def standardize_and_center(dataset: PdxDataset, c1: int) -> CenteredRewards:
    """Scale responses, pick the null group, and center rewards.

    Each treatment's response vector is scaled to sd 1 over the lines where
    it was applied.  The null group is the untreated arm plus its c1
    nearest treatments by Euclidean distance over complete lines (ties by
    treatment index).  Rewards are standardized responses minus the
    per-line null-group mean.
    """
    if c1 < 0 or c1 > dataset.P - 2:
        raise TreeError(f"c1={c1} out of range for {dataset.P} treatments")
    untreated = dataset.untreated()
    Y = assemble_response_matrix(dataset)
    sds = np.array([np.nanstd(row, ddof=1) if np.isfinite(row).sum() > 1 else 0.0 for row in Y])
    for i, t in enumerate(dataset.treatments):
        if not np.isfinite(sds[i]) or sds[i] <= 0:
            raise TreeError(f"degenerate response vector for treatment {t.id}")
    Ystd = Y / sds[:, None]

    u_idx = dataset.treatments.index(untreated)
    complete = _complete_lines(Ystd)
    if not complete.any():
        raise TreeError("no complete lines for null-group construction")
    null_idx = [u_idx]
    if c1 > 0:
        dists = []
        for i in range(dataset.P):
            if i == u_idx:
                continue
            d = np.linalg.norm(Ystd[i, complete] - Ystd[u_idx, complete])
            dists.append((d, i))
        dists.sort()  # ties broken by treatment index
        null_idx.extend(i for _, i in dists[:c1])

    null_mean = np.nanmean(Ystd[null_idx], axis=0)
    non_null = [i for i in range(dataset.P) if i not in null_idx]
    if not non_null:
        raise TreeError("no non-null treatments remain")
    R = Ystd[non_null] - null_mean[None, :]
    return CenteredRewards(
        treatments=tuple(dataset.treatments[i] for i in non_null),
        line_ids=dataset.features.line_ids,
        R=R,
        null_group=tuple(dataset.treatments[i] for i in null_idx),
        null_mean=null_mean,
        scale=sds,
        c1=c1,
        scale_treatments=dataset.treatments,
    )


def center_with_template(dataset: PdxDataset, template: CenteredRewards) -> CenteredRewards:
    """Center a dataset's rewards with another fit's scale and null group.

    Used to score held-out lines with training-derived standardization:
    per-treatment scales and null-group membership come from the template,
    while the null mean is computed per held-out line from its own
    null-treatment responses.
    """
    scale_map = dict(zip(template.scale_treatments, template.scale))
    missing = [t for t in template.treatments + template.null_group if t not in dataset.treatments]
    if missing:
        raise TreeError(f"dataset lacks treatments {[t.id for t in missing]}")
    Y = assemble_response_matrix(dataset)
    sds = np.array([scale_map.get(t, np.nan) for t in dataset.treatments])
    Ystd = Y / sds[:, None]
    null_idx = [dataset.treatments.index(t) for t in template.null_group]
    with np.errstate(invalid="ignore"):
        null_mean = np.nanmean(Ystd[null_idx], axis=0)
    rows = [dataset.treatments.index(t) for t in template.treatments]
    R = Ystd[rows] - null_mean[None, :]
    return CenteredRewards(
        treatments=template.treatments,
        line_ids=dataset.features.line_ids,
        R=R,
        null_group=template.null_group,
        null_mean=null_mean,
        scale=template.scale,
        c1=template.c1,
        scale_treatments=template.scale_treatments,
    )


def build_tree(rewards: CenteredRewards) -> Dendrogram:
    """Average-linkage agglomerative clustering of centered reward rows.

    Distances are Euclidean over lines complete across all non-null
    treatments; ties are broken by smallest cluster id.
    """
    R = rewards.R
    n = R.shape[0]
    if n < 2:
        raise TreeError("need at least 2 non-null treatments to build a tree")
    complete = np.isfinite(R).all(axis=0)
    if not complete.any():
        raise TreeError("no complete lines for clustering")
    X = R[:, complete]

    # Lance-Williams UPGMA on a growing distance table keyed by cluster id.
    dist: dict[tuple[int, int], float] = {}
    for i in range(n):
        for j in range(i + 1, n):
            dist[(i, j)] = float(np.linalg.norm(X[i] - X[j]))
    size = {i: 1 for i in range(n)}
    active = set(range(n))
    merges = []
    for step in range(n - 1):
        best = min(dist[key] for key in dist if key[0] in active and key[1] in active)
        i, j = min(
            key for key in dist if key[0] in active and key[1] in active and dist[key] == best
        )
        new = n + step
        merges.append((i, j, dist[(i, j)]))
        for k in active:
            if k in (i, j):
                continue
            dik = dist[(min(i, k), max(i, k))]
            djk = dist[(min(j, k), max(j, k))]
            dist[(k, new)] = (size[i] * dik + size[j] * djk) / (size[i] + size[j])
        size[new] = size[i] + size[j]
        active.discard(i)
        active.discard(j)
        active.add(new)
    return Dendrogram(n_leaves=n, merges=tuple(merges))


def cut_tree(rewards: CenteredRewards, dend: Dendrogram, c2: int) -> TreatmentGrouping:
    """Undo the top c2 merges to form c2 + 1 groups.

    Internal nodes are the undone merges, ordered root-down (descending
    merge index; average linkage keeps heights non-decreasing in merge
    order, so the last merges are the highest).
    """
    n = dend.n_leaves
    if not 1 <= c2 <= n - 1:
        raise TreeError(f"c2={c2} out of range [1, {n - 1}]")
    kept = len(dend.merges) - c2
    undone = tuple(n + i for i in range(len(dend.merges) - 1, kept - 1, -1))

    # Replay the kept merges; the surviving cluster roots are the groups.
    roots = set(range(n))
    for idx in range(kept):
        left, right, _ = dend.merges[idx]
        roots.discard(left)
        roots.discard(right)
        roots.add(n + idx)
    groups = sorted((dend.members(c) for c in roots), key=lambda g: g[0])
    return TreatmentGrouping(
        dendrogram=dend,
        treatments=rewards.treatments,
        null_group=rewards.null_group,
        groups=tuple(groups),
        internal_nodes=undone,
        c1=rewards.c1,
        c2=c2,
    )


def group_rewards(rewards: CenteredRewards, grouping: TreatmentGrouping) -> np.ndarray:
    """Per-line mean reward within each cut group: (c2 + 1) x m, NaN if none applied."""
    out = np.full((grouping.n_groups, rewards.m), np.nan)
    for g, members in enumerate(grouping.groups):
        block = rewards.R[list(members)]
        any_obs = np.isfinite(block).any(axis=0)
        if any_obs.any():
            out[g, any_obs] = np.nanmean(block[:, any_obs], axis=0)
    return out
