"""Dual-level contrastive machinery.

Instance level: each original/augmented pair is the sole positive against
all other 2N-1 texts. Cluster level: pseudo-labels come from connected
components of the symmetric nearest-neighbor graph within each view, and the
two views swap label matrices as supervision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .numerics import Tensor

POOL_VIEW = "view"
POOL_BOTH = "both"


@dataclass
class ClusterAssignment:
    """Connected-component ids for one view plus the induced indicator matrix."""

    view: str
    component_id: np.ndarray
    indicator: np.ndarray  # [N x N] bool, True iff same component

    def validate(self) -> None:
        y = self.indicator
        if not np.array_equal(y, y.T) or not np.all(np.diag(y)):
            raise ValueError("indicator must be symmetric with unit diagonal")


@dataclass
class PseudoLabelAssignment:
    org: ClusterAssignment
    aug: ClusterAssignment


class UnionFind:
    """Path-compressing disjoint sets over 0..n-1."""

    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


# ---------------------------------------------------------------------------
# instance-level contrastive loss
# ---------------------------------------------------------------------------

def icl_loss(z_norm: Tensor, pairing: np.ndarray, tau: float) -> Tensor:
    """NT-Xent over all 2N anchors.

    ``pairing[i]`` is the row of anchor i's positive. The denominator sums
    over every other row; the per-anchor log-sum-exp is stabilized with a
    detached row max, which cancels exactly in the singleton case.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be > 0, got {tau}")
    n_rows = z_norm.data.shape[0]
    pairing = np.asarray(pairing, dtype=np.intp)
    if pairing.shape != (n_rows,) or not np.array_equal(np.sort(pairing), np.arange(n_rows)):
        raise ValueError("pairing must be a permutation of all rows")
    if np.any(pairing == np.arange(n_rows)):
        raise ValueError("pairing must not map a row to itself")

    sims = nm.scale(nm.similarity(z_norm), 1.0 / tau)

    off_diag = 1.0 - np.eye(n_rows)
    masked = np.where(off_diag > 0, sims.data, -np.inf)
    row_max = masked.max(axis=1, keepdims=True)  # detached; constant shift

    shifted = nm.sub(sims, nm.constant(np.broadcast_to(row_max, sims.data.shape).copy()))
    exp_masked = nm.mul(nm.exp(shifted), nm.constant(off_diag))
    denom = nm.matmul(exp_masked, nm.constant(np.ones((n_rows, 1))))
    log_denom = nm.add(nm.log(denom), nm.constant(row_max))

    pos_mask = np.zeros((n_rows, n_rows))
    pos_mask[np.arange(n_rows), pairing] = 1.0
    positives = nm.matmul(nm.mul(sims, nm.constant(pos_mask)), nm.constant(np.ones((n_rows, 1))))

    per_anchor = nm.sub(log_denom, positives)
    return nm.scale(nm.sum_all(per_anchor), 1.0 / n_rows)


# ---------------------------------------------------------------------------
# pseudo-cluster labels
# ---------------------------------------------------------------------------

def build_pseudo_labels(embeddings: np.ndarray, view: str) -> ClusterAssignment:
    """Nearest-neighbor graph components for one view.

    near(i) is the cosine argmax over j != i with lowest-index tie-break; an
    undirected edge {i, j} exists when either endpoint nominates the other.
    Component ids are renumbered by first appearance for determinism.
    """
    n = embeddings.shape[0]
    if n < 2:
        raise ValueError(f"nearest neighbor undefined for {n} document(s)")
    norms = np.linalg.norm(embeddings, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    sims = (embeddings @ embeddings.T) / np.outer(safe, safe)
    sims[norms == 0, :] = 0.0
    sims[:, norms == 0] = 0.0
    np.fill_diagonal(sims, -np.inf)
    nearest = np.argmax(sims, axis=1)  # lowest index wins ties

    uf = UnionFind(n)
    for i, j in enumerate(nearest):
        uf.union(i, int(j))

    component_id = np.empty(n, dtype=np.int64)
    relabel: dict[int, int] = {}
    for i in range(n):
        root = uf.find(i)
        if root not in relabel:
            relabel[root] = len(relabel)
        component_id[i] = relabel[root]

    indicator = component_id[:, None] == component_id[None, :]
    assignment = ClusterAssignment(view=view, component_id=component_id, indicator=indicator)
    assignment.validate()
    return assignment


def dump_assignments(path: str, doc_ids_org, doc_ids_aug, labels: PseudoLabelAssignment) -> None:
    """TSV dump (doc_id, view, component_id) for inspection."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("doc_id\tview\tcomponent_id\n")
        for doc_id, comp in zip(doc_ids_org, labels.org.component_id):
            fh.write(f"{doc_id}\torg\t{comp}\n")
        for doc_id, comp in zip(doc_ids_aug, labels.aug.component_id):
            fh.write(f"{doc_id}\taug\t{comp}\n")


# ---------------------------------------------------------------------------
# cluster-level contrastive loss
# ---------------------------------------------------------------------------

def _swap_view_loss(
    anchors: Tensor,
    other_view: Tensor,
    indicator: np.ndarray,
    tau: float,
    mean_positives: bool,
    pool: str,
) -> Tensor:
    """Sum over anchors of the swapped-supervision terms for one view.

    Positives are same-view rows sharing the (swapped) pseudo-label, self
    excluded; the denominator pools same-view rows (k != i), optionally
    extended with every row of the other view.
    """
    n = anchors.data.shape[0]
    sims = nm.scale(nm.similarity(anchors), 1.0 / tau)
    off_diag = 1.0 - np.eye(n)

    cross = None
    if pool == POOL_BOTH:
        cross = nm.scale(nm.matmul_nt(anchors, other_view), 1.0 / tau)
        stacked = np.concatenate(
            [np.where(off_diag > 0, sims.data, -np.inf), cross.data], axis=1
        )
        row_max = stacked.max(axis=1, keepdims=True)
    else:
        row_max = np.where(off_diag > 0, sims.data, -np.inf).max(axis=1, keepdims=True)

    shift = nm.constant(np.broadcast_to(row_max, sims.data.shape).copy())
    exp_own = nm.mul(nm.exp(nm.sub(sims, shift)), nm.constant(off_diag))
    denom = nm.matmul(exp_own, nm.constant(np.ones((n, 1))))
    if cross is not None:
        shift_x = nm.constant(np.broadcast_to(row_max, cross.data.shape).copy())
        exp_cross = nm.exp(nm.sub(cross, shift_x))
        denom = nm.add(denom, nm.matmul(exp_cross, nm.constant(np.ones((n, 1)))))
    log_denom = nm.add(nm.log(denom), nm.constant(row_max))

    pos_mask = indicator.astype(float) * off_diag
    if mean_positives:
        counts = pos_mask.sum(axis=1, keepdims=True)
        pos_mask = np.divide(pos_mask, counts, out=np.zeros_like(pos_mask), where=counts > 0)

    # -sum_{i,j in positives} (s_ij - log_denom_i); anchors with no positive
    # rows contribute nothing.
    broadcast_denom = nm.matmul(log_denom, nm.constant(np.ones((1, n))))
    terms = nm.mul(nm.sub(sims, broadcast_denom), nm.constant(pos_mask))
    return nm.scale(nm.sum_all(terms), -1.0)


def ccl_loss(
    u_org: Tensor,
    u_aug: Tensor,
    y_org: np.ndarray,
    y_aug: np.ndarray,
    tau: float,
    mean_positives: bool = False,
    pool: str = POOL_VIEW,
) -> Tensor:
    """Swapped-supervision cluster loss averaged over the N pairs.

    Original anchors take the augmented view's indicator matrix and vice
    versa. With ``pool='both'`` the denominators also range over the other
    view's rows.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be > 0, got {tau}")
    if pool not in (POOL_VIEW, POOL_BOTH):
        raise ValueError(f"unknown pool {pool!r}")
    n = u_org.data.shape[0]
    if u_aug.data.shape[0] != n or y_org.shape != (n, n) or y_aug.shape != (n, n):
        raise ValueError("view sizes and indicator shapes must agree")
    if n < 2:
        # No candidate positives or negatives within a view of one document.
        return nm.constant(np.asarray(0.0))
    loss_org = _swap_view_loss(u_org, u_aug, y_aug, tau, mean_positives, pool)
    loss_aug = _swap_view_loss(u_aug, u_org, y_org, tau, mean_positives, pool)
    return nm.scale(nm.add(loss_org, loss_aug), 1.0 / n)
