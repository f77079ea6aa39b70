"""k-NN graphs, plane-fit normals and normal-similarity edge weights."""
from dataclasses import dataclass

import numpy as np

from . import kernels

DEFAULT_K_NN = 16
_FALLBACK_NORMAL = np.array([0.0, 0.0, 1.0])
# covariance rank test: second-largest eigenvalue relative to the largest
_RANK_TOL = 1e-10


@dataclass
class KnnGraph:
    """Neighbour lists with self in column 0.

    ``raw_weights`` and ``weights`` stay ``None`` until :func:`edge_weights`
    fills them in.
    """

    indices: np.ndarray
    raw_weights: np.ndarray = None
    weights: np.ndarray = None

    @property
    def k_nn(self):
        return self.indices.shape[1] - 1

    def __len__(self):
        return self.indices.shape[0]


def check_cloud(points):
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3 or points.shape[0] < 1:
        raise ValueError(f"point cloud must be an (m, 3) array with m >= 1, got shape {points.shape}")
    if not np.all(np.isfinite(points)):
        raise ValueError("point cloud has non-finite coordinates")
    return points


def normalize_cloud(points):
    """Centre at the centroid and scale into the unit sphere."""
    points = check_cloud(points)
    centred = points - points.mean(axis=0)
    radius = np.sqrt((centred * centred).sum(axis=1)).max()
    if radius > 0:
        centred = centred / radius
    return centred


def build_knn(points, k_nn=DEFAULT_K_NN):
    points = check_cloud(points)
    m = points.shape[0]
    if not 1 <= k_nn < m:
        raise ValueError(f"k_nn must satisfy 1 <= k_nn < m (k_nn={k_nn}, m={m})")
    return KnnGraph(kernels.knn_indices(points, k_nn))


def estimate_normals(points, graph):
    """Unit normal of the least-squares plane through each neighbourhood.

    Sign convention: the largest-magnitude component is positive (first such
    component on exact ties). Neighbourhoods whose covariance has rank < 2
    get ``(0, 0, 1)``.
    """
    points = check_cloud(points)
    nbr = points[graph.indices]
    centred = nbr - nbr.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centred, centred) / nbr.shape[1]
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0].copy()
    top = evals[:, 2]
    degenerate = (top <= 0) | (evals[:, 1] <= _RANK_TOL * np.maximum(top, 1e-300))
    normals[degenerate] = _FALLBACK_NORMAL
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    lead = np.argmax(np.abs(normals), axis=1)
    sign = np.sign(normals[np.arange(len(normals)), lead])
    normals *= np.where(sign == 0, 1.0, sign)[:, None]
    return normals


def edge_weights(normals, graph):
    """Fill ``|cos|`` similarities and their per-row normalisation (self included)."""
    normals = np.asarray(normals, dtype=np.float64)
    unit = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    raw = np.abs(np.einsum("nd,nkd->nk", unit, unit[graph.indices]))
    raw[:, 0] = 1.0
    raw = np.minimum(raw, 1.0)
    graph.raw_weights = raw
    graph.weights = raw / raw.sum(axis=1, keepdims=True)
    return graph


def prepare_graph(points, k_nn=DEFAULT_K_NN):
    """k-NN graph, normals and weights for an already normalised cloud."""
    graph = build_knn(points, k_nn)
    normals = estimate_normals(points, graph)
    return edge_weights(normals, graph), normals


def merge_graphs(graphs):
    """Stack per-cloud graphs into one block-diagonal graph with offset indices."""
    offset = 0
    idx, raw, w = [], [], []
    for g in graphs:
        idx.append(g.indices + offset)
        raw.append(g.raw_weights)
        w.append(g.weights)
        offset += len(g)
    return KnnGraph(np.concatenate(idx), np.concatenate(raw), np.concatenate(w))
