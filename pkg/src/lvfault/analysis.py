"""PCA via cyclic Jacobi eigendecomposition and agglomerative hierarchical clustering."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LINKAGES = ("single", "complete", "average")


def jacobi_eigh(A, tol: float = 1e-12, max_sweeps: int = 100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps stop once the off-diagonal Frobenius norm drops below ``tol`` (or below
    machine precision relative to the matrix norm, for matrices with large entries).
    Returns (eigenvalues, eigenvectors as columns), unsorted.
    """
    A = np.array(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(1.0, np.abs(A).max())):
        raise ValueError("matrix is not symmetric")
    A = 0.5 * (A + A.T)
    n = A.shape[0]
    V = np.eye(n)
    stop = max(tol, 4 * np.finfo(float).eps * np.linalg.norm(A))

    mask = ~np.eye(n, dtype=bool)

    def off(M):
        return float(np.linalg.norm(M[mask]))

    for _ in range(max_sweeps):
        if off(A) < stop:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                diff = A[q, q] - A[p, p]
                if abs(apq) < 1e-150 * max(abs(diff), 1.0):
                    A[p, q] = A[q, p] = 0.0  # negligible; theta would overflow
                    continue
                theta = diff / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.hypot(theta, 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                Ap, Aq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * Ap - s * Aq
                A[:, q] = s * Ap + c * Aq
                Ap, Aq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * Ap - s * Aq
                A[q, :] = s * Ap + c * Aq
                A[p, q] = A[q, p] = 0.0
                Vp, Vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * Vp - s * Vq
                V[:, q] = s * Vp + c * Vq
    else:
        if off(A) >= stop:
            raise RuntimeError(f"Jacobi did not converge in {max_sweeps} sweeps")
    return np.diag(A).copy(), V


@dataclass
class PCAModel:
    mean: np.ndarray
    components: np.ndarray  # (k, d), orthonormal rows
    eigenvalues: np.ndarray  # all d eigenvalues, descending
    explained_variance_ratio: np.ndarray  # for the kept components

    @property
    def n_components(self) -> int:
        return self.components.shape[0]


def pca_fit(X, n_components: int | None = None) -> PCAModel:
    """Principal components of the sample covariance (ddof=1).

    Components are sorted by eigenvalue, largest first, and each is signed so
    that its largest-magnitude entry is positive.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("PCA needs a 2-D array with at least two rows")
    d = X.shape[1]
    k = d if n_components is None else n_components
    if not 1 <= k <= d:
        raise ValueError(f"n_components={k} must be in 1..{d}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (X.shape[0] - 1)
    vals, vecs = jacobi_eigh(cov)
    order = np.argsort(-vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order].T
    for row in vecs:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1
    total = vals.sum()
    ratios = vals / total if total > 0 else np.zeros_like(vals)
    return PCAModel(mean, vecs[:k], vals, ratios[:k])


def components_for_variance(model: PCAModel, threshold: float = 0.95) -> int:
    """Smallest number of leading components whose explained variance reaches ``threshold``."""
    total = model.eigenvalues.sum()
    if total <= 0:
        return 1
    cum = np.cumsum(model.eigenvalues) / total
    return int(min(np.searchsorted(cum, threshold - 1e-12) + 1, model.eigenvalues.size))


def pca_transform(model: PCAModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != model.mean.size:
        raise ValueError(f"expected {model.mean.size} features, got {X.shape[-1]}")
    return (X - model.mean) @ model.components.T


def pca_inverse(model: PCAModel, scores) -> np.ndarray:
    return np.asarray(scores) @ model.components + model.mean


@dataclass
class Dendrogram:
    """Merge steps in scipy's convention: leaves are 0..n-1, the cluster created by
    step i gets id n+i."""

    merges: list  # (cluster_a, cluster_b, distance) with a < b
    leaf_count: int
    linkage: str = "average"

    def to_csv(self) -> str:
        rows = ["step,cluster_a,cluster_b,distance"]
        rows += [f"{i},{a},{b},{d!r}" for i, (a, b, d) in enumerate(self.merges)]
        return "\n".join(rows) + "\n"

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())


def pairwise_distances(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    diff = X[:, None, :] - X[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def hierarchical_cluster(X, linkage: str = "average") -> Dendrogram:
    """Agglomerative clustering with Euclidean distances and Lance-Williams updates.

    Equal distances are resolved toward the smallest (cluster a, cluster b) pair.
    """
    if linkage not in LINKAGES:
        raise ValueError(f"linkage must be one of {LINKAGES}")
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if n < 2:
        raise ValueError("clustering needs at least two points")
    D = pairwise_distances(X)
    np.fill_diagonal(D, np.inf)
    ids = np.arange(n)  # cluster id living in each slot
    size = np.ones(n)
    alive = np.ones(n, dtype=bool)
    merges = []
    for step in range(n - 1):
        live = np.flatnonzero(alive)
        sub = D[np.ix_(live, live)]
        m = sub.min()
        cand = np.argwhere(sub == m)
        pairs = [tuple(sorted((ids[live[i]], ids[live[j]]))) + (live[i], live[j]) for i, j in cand if i != j]
        a_id, b_id, si, sj = min(pairs)
        merges.append((int(a_id), int(b_id), float(m)))
        # the merged cluster takes slot si
        if linkage == "single":
            new = np.minimum(D[si], D[sj])
        elif linkage == "complete":
            new = np.maximum(D[si], D[sj])
        else:
            new = (size[si] * D[si] + size[sj] * D[sj]) / (size[si] + size[sj])
        D[si, :] = new
        D[:, si] = new
        D[si, si] = np.inf
        D[sj, :] = np.inf
        D[:, sj] = np.inf
        alive[sj] = False
        size[si] += size[sj]
        ids[si] = n + step
    return Dendrogram(merges, n, linkage)


def cut_dendrogram(dendrogram: Dendrogram, k: int) -> np.ndarray:
    """Flat labels for k clusters (undo the last k-1 merges), numbered by first appearance in leaf order."""
    n = dendrogram.leaf_count
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must be in 1..{n}")
    parent = list(range(2 * n - 1))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for step, (a, b, _) in enumerate(dendrogram.merges[: n - k]):
        parent[find(a)] = n + step
        parent[find(b)] = n + step
    labels = np.empty(n, dtype=int)
    seen: dict[int, int] = {}
    for leaf in range(n):
        root = find(leaf)
        labels[leaf] = seen.setdefault(root, len(seen))
    return labels
